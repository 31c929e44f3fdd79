//! Closed convex sets in channel space and their nearest-point projections.
//!
//! The solver never projects; these sets are used to check that unconstrained
//! minimizers stay inside any convex set containing the data values.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::ImageField;

#[derive(Clone, Debug, PartialEq)]
pub enum ConvexSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// Symmetric `m × m` matrices `A ⪰ αI`, stored row-major as vectors of length `m²`.
    PsdCone { m: usize, alpha: f64 },
}

impl ConvexSet {
    pub fn validate(&self) -> Result<()> {
        match self {
            ConvexSet::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::Parameter("box bounds must be nonempty and of equal length".into()));
                }
                if lo.iter().chain(hi).any(|v| !v.is_finite()) || lo.iter().zip(hi).any(|(a, b)| a > b) {
                    return Err(Error::Parameter("box needs finite bounds with lo <= hi".into()));
                }
            }
            ConvexSet::Ball { center, radius } => {
                if center.is_empty() || center.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Parameter("ball center must be a nonempty finite vector".into()));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::Parameter(format!("ball radius must be > 0, got {radius}")));
                }
            }
            ConvexSet::PsdCone { m, alpha } => {
                if *m == 0 || !(alpha.is_finite() && *alpha >= 0.0) {
                    return Err(Error::Parameter("psd cone needs m >= 1 and alpha >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Dimension `N` of the ambient channel space.
    pub fn dimension(&self) -> usize {
        match self {
            ConvexSet::Box { lo, .. } => lo.len(),
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::PsdCone { m, .. } => m * m,
        }
    }

    /// Nearest point of the set to `y`.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        if y.len() != self.dimension() {
            return Err(Error::ShapeMismatch {
                expected: format!("vector of length {}", self.dimension()),
                found: format!("length {}", y.len()),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("cannot project a non-finite point".into()));
        }
        Ok(self.project_unchecked(y))
    }

    fn project_unchecked(&self, y: &[f64]) -> Vec<f64> {
        match self {
            ConvexSet::Box { lo, hi } => y.iter().zip(lo.iter().zip(hi)).map(|(v, (a, b))| v.clamp(*a, *b)).collect(),
            ConvexSet::Ball { center, radius } => {
                let dist = y.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
                // Points within rounding of the sphere count as members, which keeps
                // the projection exactly idempotent.
                if dist <= radius * (1.0 + 4.0 * f64::EPSILON) {
                    return y.to_vec();
                }
                let scale = radius / dist;
                y.iter().zip(center).map(|(a, c)| c + (a - c) * scale).collect()
            }
            ConvexSet::PsdCone { m, alpha } => project_psd(y, *m, *alpha),
        }
    }

    /// Distance from `y` to the set.
    pub fn distance(&self, y: &[f64]) -> Result<f64> {
        let p = self.project(y)?;
        Ok(p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }

    /// A random member of the set.
    pub fn sample_member<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ConvexSet::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| if a < b { rng.random_range(*a..=*b) } else { *a })
                .collect(),
            ConvexSet::Ball { center, radius } => {
                let n = center.len();
                let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
                center.iter().zip(&dir).map(|(c, d)| c + r * d / norm).collect()
            }
            ConvexSet::PsdCone { m, alpha } => {
                let b = DMatrix::<f64>::from_fn(*m, *m, |_, _| rng.random_range(-1.0..1.0));
                let a = &b * b.transpose() + DMatrix::<f64>::identity(*m, *m) * *alpha;
                let mut out = vec![0.0; m * m];
                for i in 0..*m {
                    for j in 0..*m {
                        // exact symmetry
                        out[i * m + j] = if i <= j { a[(i, j)] } else { a[(j, i)] };
                    }
                }
                out
            }
        }
    }

    /// Parse `box:lo,hi` (or `box:lo₁..lo_N,hi₁..hi_N`), `ball:c₁,...,c_N,r` or
    /// `psd:m,alpha` for an `N`-channel image.
    pub fn parse(spec: &str, channels: usize) -> Result<Self> {
        let (kind, rest) = spec
            .split_once(':')
            .ok_or_else(|| Error::Usage(format!("set '{spec}' needs the form kind:values")))?;
        let nums: Vec<f64> = rest
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Usage(format!("set '{spec}': {e}")))?;
        let set = match kind {
            "box" if nums.len() == 2 => ConvexSet::Box {
                lo: vec![nums[0]; channels],
                hi: vec![nums[1]; channels],
            },
            "box" if nums.len() == 2 * channels => ConvexSet::Box {
                lo: nums[..channels].to_vec(),
                hi: nums[channels..].to_vec(),
            },
            "ball" if nums.len() == channels + 1 => ConvexSet::Ball {
                center: nums[..channels].to_vec(),
                radius: nums[channels],
            },
            "psd" if nums.len() == 2 && nums[0] >= 1.0 && nums[0].fract() == 0.0 => ConvexSet::PsdCone {
                m: nums[0] as usize,
                alpha: nums[1],
            },
            _ => return Err(Error::Usage(format!("cannot parse set '{spec}' for {channels} channels"))),
        };
        set.validate()?;
        if set.dimension() != channels {
            return Err(Error::Usage(format!(
                "set '{spec}' has dimension {} but the image has {channels} channels",
                set.dimension()
            )));
        }
        Ok(set)
    }
}

fn project_psd(y: &[f64], m: usize, alpha: f64) -> Vec<f64> {
    let sym = DMatrix::<f64>::from_fn(m, m, |i, j| 0.5 * (y[i * m + j] + y[j * m + i]));
    let norm = sym.norm();
    let eig = SymmetricEigen::new(sym.clone());
    let symmetric = (0..m).all(|i| (0..m).all(|j| y[i * m + j] == y[j * m + i]));
    let tol = 64.0 * f64::EPSILON * (norm + alpha);
    if symmetric && eig.eigenvalues.iter().all(|&l| l >= alpha - tol) {
        return y.to_vec();
    }
    let clamped = eig.eigenvalues.map(|l| l.max(alpha));
    let q = &eig.eigenvectors;
    let a = q * DMatrix::from_diagonal(&clamped) * q.transpose();
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = if i <= j { a[(i, j)] } else { a[(j, i)] };
        }
    }
    out
}

/// Sample `trials` random pairs (one of each pair a perturbation of the other
/// in half the cases) and check `|π(y) - π(y')| ≤ |y - y'| + 1e-12`.
pub fn check_nonexpansive<R: Rng + ?Sized>(set: &ConvexSet, trials: usize, rng: &mut R) -> Result<bool> {
    set.validate()?;
    let n = set.dimension();
    let scale = match set {
        ConvexSet::Box { lo, hi } => lo.iter().chain(hi).fold(1.0f64, |m, v| m.max(v.abs())),
        ConvexSet::Ball { center, radius } => center.iter().fold(*radius, |m, v| m.max(v.abs())),
        ConvexSet::PsdCone { alpha, .. } => 1.0 + alpha,
    };
    for t in 0..trials {
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0) * scale).collect();
        let y2: Vec<f64> = if t % 2 == 0 {
            y.iter().map(|v| v + rng.random_range(-0.1..0.1) * scale).collect()
        } else {
            (0..n).map(|_| rng.random_range(-3.0..3.0) * scale).collect()
        };
        let a = set.project_unchecked(&y);
        let b = set.project_unchecked(&y2);
        let lhs = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let rhs = y.iter().zip(&y2).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        if lhs > rhs + 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `max_x dist(u(x), K)`.
pub fn hull_violation(set: &ConvexSet, u: &ImageField) -> Result<f64> {
    set.validate()?;
    if u.channels() != set.dimension() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels", set.dimension()),
            found: format!("{} channels", u.channels()),
        });
    }
    Ok(u.pixels()
        .map(|y| {
            let p = set.project_unchecked(y);
            p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sets() -> Vec<ConvexSet> {
        vec![
            ConvexSet::Box {
                lo: vec![0.0, -1.0, 0.2],
                hi: vec![1.0, 0.5, 0.2],
            },
            ConvexSet::Ball {
                center: vec![0.5, -0.25, 2.0],
                radius: 0.75,
            },
            ConvexSet::PsdCone { m: 2, alpha: 0.0 },
            ConvexSet::PsdCone { m: 3, alpha: 0.3 },
        ]
    }

    #[test]
    fn examples() {
        let unit = ConvexSet::Box {
            lo: vec![0.0; 2],
            hi: vec![1.0; 2],
        };
        assert_eq!(unit.project(&[1.5, -0.2]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(unit.project(&[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
        let psd = ConvexSet::PsdCone { m: 2, alpha: 0.0 };
        let p = psd.project(&[3.0, 0.0, 0.0, -1.0]).unwrap();
        let want = [3.0, 0.0, 0.0, 0.0];
        assert!(p.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-14), "{p:?}");
        assert!(unit.project(&[f64::NAN, 0.0]).is_err());
        assert!(unit.project(&[0.0]).is_err());
    }

    #[test]
    fn idempotent_and_variational_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for set in sets() {
            let n = set.dimension();
            for _ in 0..200 {
                let y: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
                let p = set.project(&y).unwrap();
                assert_eq!(set.project(&p).unwrap(), p, "{set:?}");
                for _ in 0..20 {
                    let v = set.sample_member(&mut rng);
                    let ip: f64 = y.iter().zip(&p).zip(&v).map(|((a, b), c)| (a - b) * (c - b)).sum();
                    assert!(ip <= 1e-10, "{set:?}: {ip}");
                }
            }
        }
    }

    #[test]
    fn psd_projection_beats_sampled_members() {
        // Dense oracle: no sampled member of K is closer than the projection.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let set = ConvexSet::PsdCone { m: 2, alpha: 0.0 };
        let y = [3.0, 0.0, 0.0, -1.0];
        let best = set.distance(&y).unwrap();
        assert!((best - 1.0).abs() < 1e-14);
        for _ in 0..2000 {
            let v = set.sample_member(&mut rng);
            let d = v.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(d >= best - 1e-12);
        }
    }

    #[test]
    fn nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for set in sets() {
            assert!(check_nonexpansive(&set, 2000, &mut rng).unwrap());
        }
        let cube = ConvexSet::Box {
            lo: vec![0.0; 3],
            hi: vec![1.0; 3],
        };
        assert!(check_nonexpansive(&cube, 10_000, &mut rng).unwrap());
        // Pairs straddling the sphere.
        let ball = ConvexSet::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        for k in 0..1000 {
            let ang = k as f64 * 0.01;
            let y = [0.99 * ang.cos(), 0.99 * ang.sin()];
            let z = [1.02 * (ang + 0.003).cos(), 1.02 * (ang + 0.003).sin()];
            let a = ball.project(&y).unwrap();
            let b = ball.project(&z).unwrap();
            let lhs = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            let rhs = ((y[0] - z[0]).powi(2) + (y[1] - z[1]).powi(2)).sqrt();
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn hull_violation_cases() {
        let set = ConvexSet::Box {
            lo: vec![0.0; 3],
            hi: vec![1.0; 3],
        };
        let inside = ImageField::random_uniform(4, 4, 3, 0.0, 1.0, 1);
        assert_eq!(hull_violation(&set, &inside).unwrap(), 0.0);
        let mut data = inside.as_slice().to_vec();
        data[5 * 3 + 1] = 1.3;
        let one_out = ImageField::new(4, 4, 3, data).unwrap();
        assert!((hull_violation(&set, &one_out).unwrap() - 0.3).abs() < 1e-15);
        assert!(hull_violation(&set, &ImageField::zeros(2, 2, 2)).is_err());
    }

    #[test]
    fn parse_sets() {
        assert_eq!(
            ConvexSet::parse("box:0.2,0.8", 3).unwrap(),
            ConvexSet::Box {
                lo: vec![0.2; 3],
                hi: vec![0.8; 3]
            }
        );
        assert_eq!(
            ConvexSet::parse("ball:0.5,0.5,0.25", 2).unwrap(),
            ConvexSet::Ball {
                center: vec![0.5, 0.5],
                radius: 0.25
            }
        );
        assert_eq!(ConvexSet::parse("psd:2,0", 4).unwrap(), ConvexSet::PsdCone { m: 2, alpha: 0.0 });
        assert!(ConvexSet::parse("psd:2,0", 3).is_err());
        assert!(ConvexSet::parse("box:1,0", 1).is_err());
        assert!(ConvexSet::parse("cone:1", 1).is_err());
    }
}
