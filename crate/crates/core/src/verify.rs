//! Self-check suite behind the `verify` command.
//!
//! Every check draws its random inputs from a seed derived from the suite seed, so
//! runs are reproducible. Any single check can be run in sabotaged form, where the
//! quantity under test is deliberately corrupted; the check must then fail. This is
//! how the suite itself is smoke-tested.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::constraints::{hull_violation, ConvexSet};
use crate::density::{default_grid, verify_mu_ellipticity, ScalarDensity};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::field::{divergence, gradient, operator_norm_sq, ImageField, JacobianField};
use crate::io::{decode, encode, encode_mcf, ImageFormat};
use crate::solver::{minimize, Init, SolverConfig};
use crate::spectral::{f_star_gradient, f_star_value, singular_values};
use crate::tv::{solve_tv, TvProblem, TvVariant};

/// Names of all checks, in execution order.
pub const CHECKS: [&str; 14] = [
    "density-derivatives",
    "density-limit",
    "density-convexity",
    "mu-ellipticity",
    "adjointness",
    "operator-norm",
    "spectral-decomposition",
    "f-star-gradient",
    "energy-gradient",
    "energy-convexity",
    "projections",
    "hull-property",
    "solver-descent",
    "tv-duality",
];

const IO_CHECK: &str = "io-roundtrip";

pub fn check_names() -> impl Iterator<Item = &'static str> {
    CHECKS.iter().copied().chain(std::iter::once(IO_CHECK))
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub sabotaged: Option<String>,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Fixed-width table, one line per check.
    pub fn table(&self) -> String {
        let mut out = format!("{:<24} {:<6} {:>8}  detail\n", "check", "result", "seconds");
        for c in &self.checks {
            out.push_str(&format!(
                "{:<24} {:<6} {:>8.3}  {}\n",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.seconds,
                c.detail
            ));
        }
        out
    }
}

type CheckFn = fn(&mut ChaCha8Rng, bool) -> Result<(bool, String)>;

fn check_fn(name: &str) -> Option<CheckFn> {
    Some(match name {
        "density-derivatives" => density_derivatives,
        "density-limit" => density_limit,
        "density-convexity" => density_convexity,
        "mu-ellipticity" => mu_ellipticity,
        "adjointness" => adjointness,
        "operator-norm" => operator_norm,
        "spectral-decomposition" => spectral_decomposition,
        "f-star-gradient" => f_star_gradient_check,
        "energy-gradient" => energy_gradient,
        "energy-convexity" => energy_convexity,
        "projections" => projections,
        "hull-property" => hull_property,
        "solver-descent" => solver_descent,
        "tv-duality" => tv_duality,
        IO_CHECK => io_roundtrip,
        _ => return None,
    })
}

/// Run every check. `sabotage` names one check to run in corrupted form.
pub fn run_suite(seed: u64, sabotage: Option<&str>) -> Result<VerifyReport> {
    if let Some(name) = sabotage {
        if check_fn(name).is_none() {
            return Err(Error::Usage(format!(
                "unknown check '{name}' (known: {})",
                check_names().collect::<Vec<_>>().join(", ")
            )));
        }
    }
    let mut checks = Vec::new();
    for (idx, name) in check_names().enumerate() {
        let run = check_fn(name).expect("listed check");
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(idx as u64));
        let start = std::time::Instant::now();
        let (passed, detail) = match run(&mut rng, sabotage == Some(name)) {
            Ok(result) => result,
            Err(e) => (false, format!("error: {e}")),
        };
        checks.push(CheckOutcome {
            name,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(VerifyReport {
        seed,
        sabotaged: sabotage.map(str::to_owned),
        checks,
    })
}

fn densities() -> Vec<ScalarDensity> {
    vec![
        ScalarDensity::PhiMu { mu: 1.0 },
        ScalarDensity::PhiMu { mu: 1.5 },
        ScalarDensity::PhiMu { mu: 2.0 },
        ScalarDensity::PhiMu { mu: 3.0 },
        ScalarDensity::ScaledPhiMu { mu: 8.0 },
        ScalarDensity::PseudoHuber { eps: 0.1 },
        ScalarDensity::Linear,
    ]
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn density_derivatives(rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let (mut worst1, mut worst2): (f64, f64) = (0.0, 0.0);
    for d in densities() {
        for _ in 0..100 {
            let t: f64 = rng.random_range(0.01..100.0);
            let h = 1e-5 * (1.0 + t);
            let fd1 = (d.eval(t + h)? - d.eval(t - h)?) / (2.0 * h);
            let mut d1 = d.deriv1(t)?;
            if sabotage {
                d1 *= 1.001;
            }
            // Roundoff floor of the central difference.
            let floor1 = 4.0 * f64::EPSILON * d.eval(t + h)?.abs() / h;
            worst1 = worst1.max((d1 - fd1).abs() / (d1.abs() + floor1));
            let h = 2e-4 * (1.0 + t);
            let fd2 = (d.deriv1(t + h)? - d.deriv1(t - h)?) / (2.0 * h);
            let d2 = d.deriv2(t)?;
            if d2 > 0.0 {
                // Where ψ'' is tiny against ψ' (far tails), the difference quotient
                // resolves nothing below a few ulps of ψ' over 2h.
                let floor2 = 1e5 * f64::EPSILON * d.deriv1(t + h)?.abs() / h;
                worst2 = worst2.max((d2 - fd2).abs() / (d2.abs() + floor2));
            }
        }
    }
    Ok((
        worst1 <= 1e-6 && worst2 <= 1e-4,
        format!("max rel err psi' {worst1:.2e}, psi'' {worst2:.2e}"),
    ))
}

fn density_limit(_rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for mu in [10.0, 100.0, 1000.0] {
        let d = ScalarDensity::ScaledPhiMu { mu };
        let scale = if sabotage { 1.02 } else { 1.0 };
        for t in [0.1, 1.0, 10.0, 100.0] {
            let gap = (scale * d.eval(t)? - t).abs();
            worst = worst.max(gap * (mu - 2.0));
        }
    }
    // The bound is attained as t → ∞, so allow rounding at t = 100.
    Ok((
        worst <= 1.0 + 1e-12,
        format!("max |(mu-1)Phi_mu(t) - t|·(mu-2) = {worst:.6}"),
    ))
}

fn density_convexity(rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let mut worst: f64 = f64::NEG_INFINITY;
    for d in densities() {
        let value = |t: f64| -> Result<f64> { Ok(d.eval(t)? - if sabotage { 10.0 * t * t } else { 0.0 }) };
        for _ in 0..2000 {
            let a: f64 = rng.random_range(0.0..50.0);
            let b: f64 = rng.random_range(0.0..50.0);
            let s: f64 = rng.random();
            let mid = value(s * a + (1.0 - s) * b)?;
            let chord = s * value(a)? + (1.0 - s) * value(b)?;
            worst = worst.max((mid - chord) / (1.0 + chord.abs()));
        }
    }
    Ok((worst <= 1e-12, format!("max scaled violation {worst:.2e}")))
}

fn mu_ellipticity(_rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let grid = default_grid();
    let mut cases = vec![(ScalarDensity::PseudoHuber { eps: 1.0 }, 3.0, true)];
    for mu in [1.2, 1.5, 3.0] {
        cases.push((ScalarDensity::PhiMu { mu }, mu, true));
    }
    cases.push((ScalarDensity::PseudoHuber { eps: 1.0 }, 2.0, sabotage));
    let mut failures = Vec::new();
    for (d, mu, expect) in &cases {
        if verify_mu_ellipticity(d, *mu, &grid)?.ok != *expect {
            failures.push(format!("{d:?} with mu {mu}"));
        }
    }
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} certificates as expected", cases.len())
        } else {
            format!("unexpected outcome for {}", failures.join("; "))
        },
    ))
}

fn adjointness(rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (h, w, n) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..4));
        let u = ImageField::random_uniform(h, w, n, -1.0, 1.0, rng.random());
        let p = JacobianField::random_uniform(h, w, n, -1.0, 1.0, rng.random());
        let mut div = divergence(&p);
        if sabotage {
            div = div.scaled(1.0 + 1e-6);
        }
        let lhs = gradient(&u).dot(&p);
        let rhs = -u.dot(&div);
        let scale = 1.0 + u.as_slice().len() as f64;
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    Ok((worst <= 1e-12, format!("max |<grad u,p> + <u,div p>|/size = {worst:.2e}")))
}

fn operator_norm(rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let mut est = operator_norm_sq(24, 24, 2, 500, rng.random());
    if sabotage {
        est *= 4.0;
    }
    Ok((est <= 8.0 + 1e-6, format!("power iteration ||grad||^2 ≈ {est:.6}")))
}

fn spectral_decomposition(rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..6);
        let p: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dec = singular_values(&p)?;
        let mut rec = dec.reconstruct();
        if sabotage {
            rec[0] += 1e-9;
        }
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        let err = rec.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        worst = worst.max(err / norm.max(1e-300));
    }
    Ok((worst <= 1e-12, format!("max relative reconstruction error {worst:.2e}")))
}

fn f_star_gradient_check(rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let d = ScalarDensity::PhiMu { mu: 1.5 };
    let eps = 0.05;
    let mut worst: f64 = 0.0;
    for trial in 0..40 {
        let n = rng.random_range(2..5);
        let mut p: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        if trial % 2 == 1 {
            // rank one: second row parallel to the first
            let c: f64 = rng.random_range(-1.0..1.0);
            for k in 0..n {
                p[n + k] = c * p[k];
            }
        }
        let mut g = f_star_gradient(&d, eps, &p)?;
        if sabotage {
            g[0] *= 1.01;
        }
        let h = 1e-6;
        let mut err: f64 = 0.0;
        let mut norm: f64 = 0.0;
        for k in 0..2 * n {
            let mut a = p.clone();
            let mut b = p.clone();
            a[k] += h;
            b[k] -= h;
            let fd = (f_star_value(&d, eps, &a)? - f_star_value(&d, eps, &b)?) / (2.0 * h);
            err = err.max((fd - g[k]).abs());
            norm = norm.max(g[k].abs());
        }
        worst = worst.max(err / norm.max(1e-8));
    }
    Ok((worst <= 1e-5, format!("max rel err vs central differences {worst:.2e}")))
}

fn test_models() -> Vec<EnergyModel> {
    vec![
        EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 1.5 }, 2.0).with_delta(0.1),
        EnergyModel::isotropic(ScalarDensity::PseudoHuber { eps: 0.2 }, 1.0),
        EnergyModel::anisotropic(ScalarDensity::ScaledPhiMu { mu: 4.0 }, 0.01, 3.0),
    ]
}

fn energy_gradient(rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for model in test_models() {
        let f = ImageField::random_uniform(6, 6, 3, 0.0, 1.0, rng.random());
        let u = ImageField::random_uniform(6, 6, 3, 0.0, 1.0, rng.random());
        let v = ImageField::random_uniform(6, 6, 3, -1.0, 1.0, rng.random());
        let mut g = model.gradient(&u, &f)?;
        if sabotage {
            g = g.scaled(1.01);
        }
        let h = 1e-5;
        let fd = (model.value(&u.add_scaled(h, &v), &f)? - model.value(&u.add_scaled(-h, &v), &f)?) / (2.0 * h);
        let analytic = g.dot_avg(&v);
        worst = worst.max(rel_err(analytic, fd));
    }
    Ok((worst <= 1e-5, format!("max rel err of directional derivative {worst:.2e}")))
}

fn energy_convexity(rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let mut worst: f64 = f64::NEG_INFINITY;
    for model in test_models() {
        let f = ImageField::random_uniform(5, 5, 3, 0.0, 1.0, rng.random());
        let sign = if sabotage { -1.0 } else { 1.0 };
        for _ in 0..30 {
            let u = ImageField::random_uniform(5, 5, 3, -1.0, 2.0, rng.random());
            let v = ImageField::random_uniform(5, 5, 3, -1.0, 2.0, rng.random());
            let mid = u.add_scaled(1.0, &v).scaled(0.5);
            let diff = u.add_scaled(-1.0, &v);
            // The quadratic fidelity alone contributes exactly (λ/8) mean|u - v|².
            let strict = model.lambda / 8.0 * diff.dot_avg(&diff);
            let jm = sign * model.value(&mid, &f)?;
            let avg = sign * 0.5 * (model.value(&u, &f)? + model.value(&v, &f)?);
            worst = worst.max((jm - (avg - strict)) / (1.0 + avg.abs()));
        }
    }
    Ok((worst <= 1e-12, format!("max strict-convexity violation {worst:.2e}")))
}

fn projections(rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let sets = [
        ConvexSet::Box {
            lo: vec![0.2, 0.0, -1.0],
            hi: vec![0.8, 1.0, 0.5],
        },
        ConvexSet::Ball {
            center: vec![0.5, -0.2, 0.1],
            radius: 0.7,
        },
        ConvexSet::PsdCone { m: 2, alpha: 0.1 },
    ];
    let mut idem: f64 = 0.0;
    let mut vi: f64 = f64::NEG_INFINITY;
    let mut expansive = 0usize;
    for set in &sets {
        let dim = set.dimension();
        let project = |y: &[f64]| -> Result<Vec<f64>> {
            let mut p = set.project(y)?;
            if sabotage {
                p.iter_mut().for_each(|x| *x *= 0.999);
            }
            Ok(p)
        };
        for _ in 0..300 {
            let y: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let py = project(&y)?;
            let ppy = project(&py)?;
            idem = idem.max(py.iter().zip(&ppy).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            let member = set.sample_member(rng);
            let inner: f64 = (0..dim).map(|k| (y[k] - py[k]) * (member[k] - py[k])).sum();
            vi = vi.max(inner);
            let pz = project(&z)?;
            let dp: f64 = (0..dim).map(|k| (py[k] - pz[k]).powi(2)).sum::<f64>().sqrt();
            let dy: f64 = (0..dim).map(|k| (y[k] - z[k]).powi(2)).sum::<f64>().sqrt();
            if dp > dy * (1.0 + 1e-12) {
                expansive += 1;
            }
        }
    }
    Ok((
        idem == 0.0 && vi <= 1e-10 && expansive == 0,
        format!("idempotence defect {idem:.1e}, max variational inner product {vi:.2e}, expansive pairs {expansive}"),
    ))
}

fn hull_property(rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let f = ImageField::random_uniform(12, 12, 3, 0.2, 0.8, rng.random());
    let model = EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 1.5 }, 1.0);
    let cfg = SolverConfig::default().with_grad_tol(1e-8).with_init(Init::Zero);
    let (u, _) = minimize(&model, &f, &cfg)?;
    let u = if sabotage { u.add_scaled(0.5, &ImageField::constant(12, 12, &[1.0; 3])) } else { u };
    let set = ConvexSet::Box {
        lo: vec![0.2; 3],
        hi: vec![0.8; 3],
    };
    let violation = hull_violation(&set, &u)?;
    Ok((violation <= 1e-3, format!("hull violation {violation:.2e}")))
}

fn solver_descent(rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let f = ImageField::random_uniform(10, 10, 2, 0.0, 1.0, rng.random());
    let model = EnergyModel::anisotropic(ScalarDensity::PseudoHuber { eps: 0.1 }, 0.01, 2.0);
    let (_, report) = minimize(&model, &f, &SolverConfig::default().with_init(Init::Zero))?;
    let mut trace = report.energy_trace;
    if sabotage {
        let last = *trace.last().unwrap_or(&0.0);
        trace.push(last + 1e-9);
    }
    let monotone = trace.windows(2).all(|w| w[1] <= w[0]);
    let c = ImageField::constant(4, 4, &[0.4, 0.6]);
    let (u, fixed) = minimize(&model, &c, &SolverConfig::default())?;
    let fixed_point = u == c && fixed.iterations <= 1;
    Ok((
        monotone && fixed_point,
        format!(
            "{} iterations, monotone trace: {monotone}, constant fixed point: {fixed_point}",
            report.iterations
        ),
    ))
}

fn tv_duality(rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let f = ImageField::random_uniform(10, 10, 3, 0.0, 1.0, rng.random());
    let mut worst_gap: f64 = 0.0;
    let mut worst_dual: f64 = 0.0;
    for variant in [TvVariant::Frobenius, TvVariant::Nuclear] {
        let sol = solve_tv(&TvProblem::new(variant, 10.0).with_gap_tol(1e-7), &f)?;
        if !sol.converged {
            return Ok((false, format!("{variant:?} gap {:.2e} not reached", sol.gap)));
        }
        worst_gap = worst_gap.max(sol.gap);
        for q in sol.dual.pixels() {
            let mut q = q.to_vec();
            if sabotage {
                q.iter_mut().for_each(|x| *x *= 1.5);
            }
            let norm = match variant {
                TvVariant::Frobenius => q.iter().map(|x| x * x).sum::<f64>().sqrt(),
                TvVariant::Nuclear => singular_values(&q)?.singular_values[0],
            };
            worst_dual = worst_dual.max(norm);
        }
    }
    Ok((
        worst_dual <= 1.0 + 1e-12,
        format!("max gap {worst_gap:.2e}, max dual norm {worst_dual:.15}"),
    ))
}

fn io_roundtrip(rng: &mut ChaCha8Rng, sabotage: bool) -> Result<(bool, String)> {
    let f = ImageField::random_uniform(4, 5, 6, -10.0, 10.0, rng.random());
    let mut bytes = encode_mcf(&f);
    if sabotage {
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
    }
    let mcf_ok = decode(&bytes)? == f;
    let lattice = ImageField::from_fn(3, 4, 3, |_, _, _| f64::from(rng.random::<u8>()) / 255.0);
    let ppm_ok = decode(&encode(&lattice, ImageFormat::Ppm)?)? == lattice;
    Ok((
        mcf_ok && ppm_ok,
        format!("MCF bit-exact: {mcf_ok}, PPM lattice exact: {ppm_ok}"),
    ))
}
