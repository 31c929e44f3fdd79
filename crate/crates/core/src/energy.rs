//! Discrete denoising energies
//!
//! ```text
//! J[u] = mean_x R(∇u(x)) + (δ/2) mean_x |∇u(x)|² + fidelity(u - f)
//! ```
//!
//! with `R` one of
//!
//! * isotropic: `ψ(|∇u|)`, `|·|` the Frobenius norm of the `2 × N` Jacobian,
//! * blend: `η(x) ψ₁(|∇u|) + (1 - η(x)) ψ₂(|∇u|)` for a spatial weight `η ∈ [0, 1]`,
//! * anisotropic: the smoothed spectral density `F*(∇u)`.
//!
//! All sums are averaged over the `H·W` pixels. Gradients are returned as Riesz
//! representatives for the grid-averaged inner product `⟨a, b⟩ = Σ a·b / (H·W)`, so
//! `⟨grad J(u), v⟩` is the directional derivative of `J` along `v` and the
//! gradient norm does not depend on the resolution.

use serde::Serialize;

use crate::density::ScalarDensity;
use crate::error::{Error, Result};
use crate::field::{divergence, gradient, ImageField, JacobianField};
use crate::spectral::{f_star_change, f_star_gradient_into, f_star_kernel};

#[derive(Clone, Debug, PartialEq)]
pub enum Regularizer {
    Isotropic(ScalarDensity),
    Anisotropic {
        density: ScalarDensity,
        smoothing_eps: f64,
    },
    Blend {
        primary: ScalarDensity,
        secondary: ScalarDensity,
        /// Single-channel weight field `η`; `primary` is weighted by `η`.
        mask: ImageField,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fidelity {
    /// `(λ/2) mean |u - f|²`
    Quadratic,
    /// `λ mean (√(ε² + |u - f|²) - ε)`
    PseudoHuber { eps: f64 },
    /// `λ mean |u - f|^p / p`
    Power { p: f64 },
}

impl Fidelity {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Fidelity::Quadratic => Ok(()),
            Fidelity::PseudoHuber { eps } if eps.is_finite() && eps > 0.0 => Ok(()),
            Fidelity::PseudoHuber { eps } => Err(Error::Parameter(format!("fidelity eps must be > 0, got {eps}"))),
            Fidelity::Power { p } if p.is_finite() && p > 1.0 => Ok(()),
            Fidelity::Power { p } => Err(Error::Parameter(format!("power fidelity needs p > 1, got {p}"))),
        }
    }

    /// CLI spelling: `quad`, `phuber:<eps>`, `power:<p>`.
    pub fn parse(spec: &str) -> Result<Self> {
        let num = |a: &str| {
            a.parse::<f64>()
                .map_err(|e| Error::Usage(format!("fidelity '{spec}': {e}")))
        };
        let fid = match spec.split_once(':') {
            None if spec == "quad" => Fidelity::Quadratic,
            Some(("phuber", a)) => Fidelity::PseudoHuber { eps: num(a)? },
            Some(("power", a)) => Fidelity::Power { p: num(a)? },
            _ => return Err(Error::Usage(format!("unknown fidelity '{spec}'"))),
        };
        fid.validate()?;
        Ok(fid)
    }

    /// Per-pixel value without the factor `λ`, for residual norm `r`.
    #[inline]
    fn value(&self, r: f64) -> f64 {
        match *self {
            Fidelity::Quadratic => 0.5 * r * r,
            Fidelity::PseudoHuber { eps } => r * r / ((eps * eps + r * r).sqrt() + eps),
            Fidelity::Power { p } => r.powf(p) / p,
        }
    }

    /// `ω'(r)/r`, the factor turning the residual vector into the gradient.
    #[inline]
    fn weight(&self, r: f64) -> f64 {
        match *self {
            Fidelity::Quadratic => 1.0,
            Fidelity::PseudoHuber { eps } => 1.0 / (eps * eps + r * r).sqrt(),
            Fidelity::Power { p } => {
                if r > 0.0 {
                    r.powf(p - 2.0)
                } else {
                    // |r|^{p-2} r → 0 for p > 1
                    0.0
                }
            }
        }
    }

    /// `ω(r_next) - ω(r)` given `r_next² - r² = d2`.
    #[inline]
    fn change(&self, r: f64, r_next: f64, d2: f64) -> f64 {
        match *self {
            Fidelity::Quadratic => 0.5 * d2,
            Fidelity::PseudoHuber { eps } => d2 / ((eps * eps + r_next * r_next).sqrt() + (eps * eps + r * r).sqrt()),
            Fidelity::Power { p } => {
                if r == 0.0 {
                    return r_next.powf(p) / p;
                }
                let dr = if r + r_next > 0.0 { d2 / (r + r_next) } else { 0.0 };
                r.powf(p) * (p * (dr / r).ln_1p()).exp_m1() / p
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub delta: f64,
    pub fidelity: Fidelity,
}

/// Shorthand for the model family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Isotropic,
    Anisotropic,
    Blend,
}

impl EnergyModel {
    pub fn isotropic(density: ScalarDensity, lambda: f64) -> Self {
        EnergyModel {
            regularizer: Regularizer::Isotropic(density),
            lambda,
            delta: 0.0,
            fidelity: Fidelity::Quadratic,
        }
    }

    pub fn anisotropic(density: ScalarDensity, smoothing_eps: f64, lambda: f64) -> Self {
        EnergyModel {
            regularizer: Regularizer::Anisotropic { density, smoothing_eps },
            lambda,
            delta: 0.0,
            fidelity: Fidelity::Quadratic,
        }
    }

    pub fn blend(primary: ScalarDensity, secondary: ScalarDensity, mask: ImageField, lambda: f64) -> Self {
        EnergyModel {
            regularizer: Regularizer::Blend {
                primary,
                secondary,
                mask,
            },
            lambda,
            delta: 0.0,
            fidelity: Fidelity::Quadratic,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_fidelity(mut self, fidelity: Fidelity) -> Self {
        self.fidelity = fidelity;
        self
    }

    pub fn family(&self) -> Family {
        match self.regularizer {
            Regularizer::Isotropic(_) => Family::Isotropic,
            Regularizer::Anisotropic { .. } => Family::Anisotropic,
            Regularizer::Blend { .. } => Family::Blend,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Parameter(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::Parameter(format!("delta must be >= 0, got {}", self.delta)));
        }
        self.fidelity.validate()?;
        match &self.regularizer {
            Regularizer::Isotropic(d) => d.validate(),
            Regularizer::Anisotropic { density, smoothing_eps } => {
                density.validate()?;
                if smoothing_eps.is_finite() && *smoothing_eps > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!("smoothing eps must be > 0, got {smoothing_eps}")))
                }
            }
            Regularizer::Blend {
                primary,
                secondary,
                mask,
            } => {
                primary.validate()?;
                secondary.validate()?;
                if mask.channels() != 1 {
                    return Err(Error::Parameter("blend mask must have a single channel".into()));
                }
                if mask.as_slice().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::Parameter("blend mask values must lie in [0, 1]".into()));
                }
                Ok(())
            }
        }
    }

    /// True when the objective is continuously differentiable in `u`.
    pub fn is_smooth(&self) -> bool {
        match &self.regularizer {
            Regularizer::Isotropic(d) => d.is_smooth(),
            // F* is C² for every density since its spectral argument stays ≥ √ε.
            Regularizer::Anisotropic { .. } => true,
            Regularizer::Blend { primary, secondary, .. } => primary.is_smooth() && secondary.is_smooth(),
        }
    }

    fn check_inputs(&self, u: &ImageField, f: &ImageField) -> Result<()> {
        self.validate()?;
        u.require_shape(f)?;
        if let Regularizer::Blend { mask, .. } = &self.regularizer {
            if (mask.height(), mask.width()) != (u.height(), u.width()) {
                return Err(Error::ShapeMismatch {
                    expected: format!("mask {}x{}", u.height(), u.width()),
                    found: format!("mask {}x{}", mask.height(), mask.width()),
                });
            }
        }
        Ok(())
    }

    fn require_family(&self, allowed: &[Family], op: &str) -> Result<()> {
        if allowed.contains(&self.family()) {
            Ok(())
        } else {
            Err(Error::Usage(format!("{op} does not apply to the {:?} family", self.family())))
        }
    }

    fn require_smooth(&self) -> Result<()> {
        if self.is_smooth() {
            Ok(())
        } else {
            Err(Error::NonSmooth(
                "the linear (TV) density is not differentiable at 0; use the TV oracle".into(),
            ))
        }
    }

    // ---------------------------------------------------------------- values

    /// Grid-averaged fidelity term.
    pub fn fidelity_value(&self, u: &ImageField, f: &ImageField) -> Result<f64> {
        self.fidelity.validate()?;
        u.require_shape(f)?;
        Ok(self.fidelity_value_unchecked(u, f))
    }

    fn fidelity_value_unchecked(&self, u: &ImageField, f: &ImageField) -> f64 {
        let sum: f64 = u
            .pixels()
            .zip(f.pixels())
            .map(|(a, b)| self.fidelity.value(residual_norm(a, b)))
            .sum();
        self.lambda * sum / u.pixel_count() as f64
    }

    pub fn fidelity_gradient(&self, u: &ImageField, f: &ImageField) -> Result<ImageField> {
        self.fidelity.validate()?;
        u.require_shape(f)?;
        Ok(self.fidelity_gradient_unchecked(u, f))
    }

    fn fidelity_gradient_unchecked(&self, u: &ImageField, f: &ImageField) -> ImageField {
        let mut out = u.clone();
        for (o, b) in out.pixels_mut().zip(f.pixels()) {
            let mut r2 = 0.0;
            for (x, y) in o.iter_mut().zip(b) {
                *x -= y;
                r2 += *x * *x;
            }
            let w = self.lambda * self.fidelity.weight(r2.sqrt());
            o.iter_mut().for_each(|x| *x *= w);
        }
        out
    }

    fn regularizer_sum(&self, grad: &JacobianField) -> f64 {
        let half_delta = 0.5 * self.delta;
        match &self.regularizer {
            Regularizer::Isotropic(d) => grad
                .pixels()
                .map(|p| {
                    let t2: f64 = p.iter().map(|x| x * x).sum();
                    d.value(t2.sqrt()) + half_delta * t2
                })
                .sum(),
            Regularizer::Blend {
                primary,
                secondary,
                mask,
            } => grad
                .pixels()
                .zip(mask.as_slice())
                .map(|(p, &eta)| {
                    let t2: f64 = p.iter().map(|x| x * x).sum();
                    let t = t2.sqrt();
                    eta * primary.value(t) + (1.0 - eta) * secondary.value(t) + half_delta * t2
                })
                .sum(),
            Regularizer::Anisotropic { density, smoothing_eps } => grad
                .pixels()
                .map(|p| {
                    let t2: f64 = p.iter().map(|x| x * x).sum();
                    f_star_kernel(density, *smoothing_eps, p) + half_delta * t2
                })
                .sum(),
        }
    }

    /// Isotropic (or blended) energy value.
    pub fn iso_value(&self, u: &ImageField, f: &ImageField) -> Result<f64> {
        self.require_family(&[Family::Isotropic, Family::Blend], "iso_value")?;
        self.value(u, f)
    }

    /// Anisotropic energy value.
    pub fn aniso_value(&self, u: &ImageField, f: &ImageField) -> Result<f64> {
        self.require_family(&[Family::Anisotropic], "aniso_value")?;
        self.value(u, f)
    }

    /// Energy value for any family.
    pub fn value(&self, u: &ImageField, f: &ImageField) -> Result<f64> {
        self.check_inputs(u, f)?;
        let reg = self.regularizer_sum(&gradient(u)) / u.pixel_count() as f64;
        Ok(reg + self.fidelity_value_unchecked(u, f))
    }

    // ------------------------------------------------------------- gradients

    pub fn iso_gradient(&self, u: &ImageField, f: &ImageField) -> Result<ImageField> {
        self.require_family(&[Family::Isotropic, Family::Blend], "iso_gradient")?;
        self.gradient(u, f)
    }

    pub fn aniso_gradient(&self, u: &ImageField, f: &ImageField) -> Result<ImageField> {
        self.require_family(&[Family::Anisotropic], "aniso_gradient")?;
        self.gradient(u, f)
    }

    /// Gradient for any smooth family:
    /// `-div(DR(∇u)) + fidelity' + δ·(-div ∇u)`, the δ-part added last.
    pub fn gradient(&self, u: &ImageField, f: &ImageField) -> Result<ImageField> {
        self.check_inputs(u, f)?;
        self.require_smooth()?;
        let grad_u = gradient(u);
        let mut flux = grad_u.clone();
        match &self.regularizer {
            Regularizer::Isotropic(d) => {
                for p in flux.pixels_mut() {
                    let t = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let w = d.ratio(t);
                    p.iter_mut().for_each(|x| *x *= w);
                }
            }
            Regularizer::Blend {
                primary,
                secondary,
                mask,
            } => {
                for (p, &eta) in flux.pixels_mut().zip(mask.as_slice()) {
                    let t = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let w = eta * primary.ratio(t) + (1.0 - eta) * secondary.ratio(t);
                    p.iter_mut().for_each(|x| *x *= w);
                }
            }
            Regularizer::Anisotropic { density, smoothing_eps } => {
                for (out, p) in flux.pixels_mut().zip(grad_u.pixels()) {
                    f_star_gradient_into(density, *smoothing_eps, p, out);
                }
            }
        }
        let mut total = divergence(&flux).scaled(-1.0);
        total.axpy(1.0, &self.fidelity_gradient_unchecked(u, f));
        if self.delta > 0.0 {
            let laplace = divergence(&grad_u).scaled(-1.0);
            total.axpy(self.delta, &laplace);
        }
        Ok(total)
    }

    // --------------------------------------------------------- energy change

    /// `J(u + step) - J(u)`, computed pixel by pixel from differences so that the
    /// result keeps its relative accuracy when it is far below the resolution of
    /// `J(u)` itself. The line search relies on this near convergence.
    pub fn value_change(&self, u: &ImageField, f: &ImageField, step: &ImageField) -> Result<f64> {
        self.check_inputs(u, f)?;
        u.require_shape(step)?;
        let gu = gradient(u);
        let gs = gradient(step);
        let half_delta = 0.5 * self.delta;

        let mut reg = 0.0;
        for (idx, (p, dp)) in gu.pixels().zip(gs.pixels()).enumerate() {
            let mut t2 = 0.0;
            let mut next2 = 0.0;
            let mut d2 = 0.0;
            for (&x, &dx) in p.iter().zip(dp) {
                t2 += x * x;
                next2 += (x + dx) * (x + dx);
                d2 += dx * (2.0 * x + dx);
            }
            let (t, next) = (t2.sqrt(), next2.sqrt());
            let dt = if t + next > 0.0 { d2 / (t + next) } else { 0.0 };
            reg += half_delta * d2;
            reg += match &self.regularizer {
                Regularizer::Isotropic(d) => d.change(t, dt),
                Regularizer::Blend {
                    primary,
                    secondary,
                    mask,
                } => {
                    let eta = mask.as_slice()[idx];
                    eta * primary.change(t, dt) + (1.0 - eta) * secondary.change(t, dt)
                }
                Regularizer::Anisotropic { density, smoothing_eps } => {
                    f_star_change(density, *smoothing_eps, p, dp)
                }
            };
        }

        let mut fid = 0.0;
        for ((a, b), s) in u.pixels().zip(f.pixels()).zip(step.pixels()) {
            let mut r2 = 0.0;
            let mut next2 = 0.0;
            let mut d2 = 0.0;
            for ((&x, &y), &ds) in a.iter().zip(b).zip(s) {
                let r = x - y;
                r2 += r * r;
                next2 += (r + ds) * (r + ds);
                d2 += ds * (2.0 * r + ds);
            }
            fid += self.fidelity.change(r2.sqrt(), next2.sqrt(), d2);
        }
        let count = u.pixel_count() as f64;
        Ok(reg / count + self.lambda * fid / count)
    }
}

#[inline]
fn residual_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fidelities() -> Vec<Fidelity> {
        vec![
            Fidelity::Quadratic,
            Fidelity::PseudoHuber { eps: 0.3 },
            Fidelity::Power { p: 1.5 },
            Fidelity::Power { p: 3.0 },
        ]
    }

    fn smooth_models(h: usize, w: usize) -> Vec<EnergyModel> {
        let mask = ImageField::random_uniform(h, w, 1, 0.0, 1.0, 77);
        vec![
            EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 1.5 }, 1.3),
            EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 2.0 }, 0.7).with_delta(0.1),
            EnergyModel::isotropic(ScalarDensity::ScaledPhiMu { mu: 6.0 }, 2.0),
            EnergyModel::isotropic(ScalarDensity::PseudoHuber { eps: 0.2 }, 1.0),
            EnergyModel::anisotropic(ScalarDensity::PhiMu { mu: 3.0 }, 0.05, 1.5),
            EnergyModel::anisotropic(ScalarDensity::PseudoHuber { eps: 0.5 }, 0.1, 1.0).with_delta(0.05),
            EnergyModel::blend(ScalarDensity::PhiMu { mu: 1.5 }, ScalarDensity::PhiMu { mu: 3.0 }, mask, 1.0),
        ]
    }

    // Brute force: per-pixel loop with explicit stencil, no shared helpers.
    fn brute_force_iso(density: &ScalarDensity, lambda: f64, delta: f64, u: &ImageField, f: &ImageField) -> f64 {
        let (h, w, n) = u.shape();
        let mut total = 0.0;
        for i in 0..h {
            for j in 0..w {
                let mut t2 = 0.0;
                let mut r2 = 0.0;
                for k in 0..n {
                    let dx = if j + 1 < w { u.get(i, j + 1, k) - u.get(i, j, k) } else { 0.0 };
                    let dy = if i + 1 < h { u.get(i + 1, j, k) - u.get(i, j, k) } else { 0.0 };
                    t2 += dx * dx + dy * dy;
                    r2 += (u.get(i, j, k) - f.get(i, j, k)).powi(2);
                }
                total += density.eval(t2.sqrt()).unwrap() + 0.5 * delta * t2 + 0.5 * lambda * r2;
            }
        }
        total / (h * w) as f64
    }

    #[test]
    fn iso_value_examples() {
        let f = ImageField::constant(5, 5, &[0.4, 0.1]);
        let m = EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 1.5 }, 1.0);
        assert_eq!(m.iso_value(&f, &f).unwrap(), 0.0);

        let w = 7;
        let ramp = ImageField::from_fn(4, w, 1, |_, j, _| j as f64);
        let lin = EnergyModel::isotropic(ScalarDensity::Linear, 1.0);
        let v = lin.iso_value(&ramp, &ramp).unwrap();
        assert!((v - (w as f64 - 1.0) / w as f64).abs() < 1e-15);

        let u = ImageField::random_uniform(8, 8, 3, 0.0, 1.0, 1);
        let f = ImageField::random_uniform(8, 8, 3, 0.0, 1.0, 2);
        for (d, delta) in [(ScalarDensity::PhiMu { mu: 2.5 }, 0.0), (ScalarDensity::PseudoHuber { eps: 0.1 }, 0.3)] {
            let model = EnergyModel::isotropic(d, 1.7).with_delta(delta);
            let got = model.iso_value(&u, &f).unwrap();
            let want = brute_force_iso(&d, 1.7, delta, &u, &f);
            assert!((got - want).abs() <= 1e-12 * want.abs());
        }
    }

    #[test]
    fn family_and_smoothness_errors() {
        let u = ImageField::zeros(3, 3, 1);
        let iso = EnergyModel::isotropic(ScalarDensity::Linear, 1.0);
        assert!(matches!(iso.iso_gradient(&u, &u), Err(Error::NonSmooth(_))));
        assert!(matches!(iso.aniso_value(&u, &u), Err(Error::Usage(_))));
        let aniso = EnergyModel::anisotropic(ScalarDensity::Linear, 0.1, 1.0);
        assert!(aniso.aniso_gradient(&u, &u).is_ok());
        assert!(matches!(aniso.iso_value(&u, &u), Err(Error::Usage(_))));
        let other = ImageField::zeros(3, 4, 1);
        assert!(matches!(iso.iso_value(&u, &other), Err(Error::ShapeMismatch { .. })));
        let bad = EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 2.0 }, 0.0);
        assert!(bad.iso_value(&u, &u).is_err());
        assert!(Fidelity::Power { p: 1.0 }.validate().is_err());
        let bad_fid = EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 2.0 }, 1.0).with_fidelity(Fidelity::Power { p: 0.5 });
        assert!(matches!(bad_fid.fidelity_value(&u, &u), Err(Error::Parameter(_))));
    }

    #[test]
    fn fidelity_examples() {
        let u = ImageField::random_uniform(4, 4, 3, 0.0, 1.0, 3);
        for fid in fidelities() {
            let m = EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 2.0 }, 1.0).with_fidelity(fid);
            assert_eq!(m.fidelity_value(&u, &u).unwrap(), 0.0);
        }
        let f = ImageField::zeros(3, 3, 3);
        let u = ImageField::constant(3, 3, &[1.0, 0.0, 0.0]);
        let m = EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 2.0 }, 2.0);
        assert_eq!(m.fidelity_value(&u, &f).unwrap(), 1.0);
    }

    fn directional_fd(model: &EnergyModel, u: &ImageField, f: &ImageField, v: &ImageField, h: f64) -> f64 {
        let plus = model.value(&u.add_scaled(h, v), f).unwrap();
        let minus = model.value(&u.add_scaled(-h, v), f).unwrap();
        (plus - minus) / (2.0 * h)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let u = ImageField::random_uniform(6, 6, 2, 0.0, 1.0, 4);
        let f = ImageField::random_uniform(6, 6, 2, 0.0, 1.0, 5);
        let v = ImageField::random_uniform(6, 6, 2, -1.0, 1.0, 6);
        for model in smooth_models(6, 6) {
            for fid in fidelities() {
                let model = model.clone().with_fidelity(fid);
                let g = model.gradient(&u, &f).unwrap();
                let analytic = g.dot_avg(&v);
                let fd = directional_fd(&model, &u, &f, &v, 1e-5);
                let scale = analytic.abs().max(1e-3);
                assert!((analytic - fd).abs() <= 1e-5 * scale, "{model:?}: {analytic} vs {fd}");
                let fg = model.fidelity_gradient(&u, &f).unwrap().dot_avg(&v);
                let plus = model.fidelity_value(&u.add_scaled(1e-5, &v), &f).unwrap();
                let minus = model.fidelity_value(&u.add_scaled(-1e-5, &v), &f).unwrap();
                assert!((fg - (plus - minus) / 2e-5).abs() <= 1e-5 * fg.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn constant_data_is_stationary() {
        let f = ImageField::constant(5, 4, &[0.2, 0.9, 0.5]);
        for model in smooth_models(5, 4) {
            let g = model.gradient(&f, &f).unwrap();
            assert!(g.max_abs() == 0.0, "{model:?}");
        }
        let aniso = EnergyModel::anisotropic(ScalarDensity::PhiMu { mu: 3.0 }, 0.04, 1.0);
        let floor = 2.0 * ScalarDensity::PhiMu { mu: 3.0 }.eval(0.2).unwrap();
        assert!((aniso.aniso_value(&f, &f).unwrap() - floor).abs() < 1e-15);
    }

    #[test]
    fn delta_term_is_additive() {
        let u = ImageField::random_uniform(6, 6, 2, 0.0, 1.0, 8);
        let f = ImageField::random_uniform(6, 6, 2, 0.0, 1.0, 9);
        let base = EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 1.5 }, 1.0);
        let delta = 0.37;
        let g0 = base.gradient(&u, &f).unwrap();
        let gd = base.clone().with_delta(delta).gradient(&u, &f).unwrap();
        let laplace = divergence(&gradient(&u)).scaled(-1.0);
        let mut want = g0.clone();
        want.axpy(delta, &laplace);
        assert_eq!(gd, want);
    }

    #[test]
    fn blend_with_unit_mask_is_primary_model() {
        let u = ImageField::random_uniform(5, 6, 3, 0.0, 1.0, 10);
        let f = ImageField::random_uniform(5, 6, 3, 0.0, 1.0, 11);
        let ones = ImageField::constant(5, 6, &[1.0]);
        let d1 = ScalarDensity::PhiMu { mu: 1.5 };
        let blend = EnergyModel::blend(d1, ScalarDensity::PseudoHuber { eps: 0.1 }, ones, 1.2);
        let iso = EnergyModel::isotropic(d1, 1.2);
        assert_eq!(blend.value(&u, &f).unwrap(), iso.value(&u, &f).unwrap());
        assert_eq!(blend.gradient(&u, &f).unwrap(), iso.gradient(&u, &f).unwrap());
    }

    #[test]
    fn single_channel_aniso_is_isotropic_with_composed_density() {
        let u = ImageField::random_uniform(6, 5, 1, 0.0, 1.0, 12);
        let f = ImageField::random_uniform(6, 5, 1, 0.0, 1.0, 13);
        let d = ScalarDensity::ScaledPhiMu { mu: 5.0 };
        let eps = 0.03;
        let aniso = EnergyModel::anisotropic(d, eps, 0.8);
        // iso energy with t ↦ ψ((ε² + t⁴)^{1/4}), summed by hand
        let g = gradient(&u);
        let reg: f64 = g
            .pixels()
            .map(|p| {
                let t2: f64 = p.iter().map(|x| x * x).sum();
                d.eval((eps * eps + t2 * t2).sqrt().sqrt()).unwrap()
            })
            .sum::<f64>()
            / 30.0;
        let fid = EnergyModel::isotropic(d, 0.8).fidelity_value(&u, &f).unwrap();
        let got = aniso.aniso_value(&u, &f).unwrap();
        assert!((got - (reg + fid)).abs() <= 1e-14 * got);
    }

    #[test]
    fn value_change_matches_difference() {
        let u = ImageField::random_uniform(6, 6, 3, 0.0, 1.0, 14);
        let f = ImageField::random_uniform(6, 6, 3, 0.0, 1.0, 15);
        let s = ImageField::random_uniform(6, 6, 3, -0.3, 0.3, 16);
        for model in smooth_models(6, 6) {
            for fid in fidelities() {
                let model = model.clone().with_fidelity(fid);
                let direct = model.value(&u.add_scaled(1.0, &s), &f).unwrap() - model.value(&u, &f).unwrap();
                let change = model.value_change(&u, &f, &s).unwrap();
                assert!((direct - change).abs() < 1e-12, "{model:?}");
                // Tiny steps: first-order term dominates and is reproduced.
                let tiny = s.scaled(1e-11);
                let lin = model.gradient(&u, &f).unwrap().dot_avg(&tiny);
                let ch = model.value_change(&u, &f, &tiny).unwrap();
                assert!((ch - lin).abs() <= 1e-5 * lin.abs(), "{model:?}: {ch} vs {lin}");
            }
        }
    }

    #[test]
    fn fidelity_parse() {
        assert_eq!(Fidelity::parse("quad").unwrap(), Fidelity::Quadratic);
        assert_eq!(Fidelity::parse("phuber:0.5").unwrap(), Fidelity::PseudoHuber { eps: 0.5 });
        assert_eq!(Fidelity::parse("power:1.5").unwrap(), Fidelity::Power { p: 1.5 });
        assert!(Fidelity::parse("power:1").is_err());
        assert!(Fidelity::parse("l1").is_err());
    }
}
