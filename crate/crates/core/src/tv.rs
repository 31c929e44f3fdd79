//! Primal-dual solver for the total-variation limit problems
//!
//! ```text
//! min_u  mean_x R(∇u(x)) + (λ/2) mean_x |u(x) - f(x)|²
//! ```
//!
//! with `R` the Frobenius norm (isotropic TV) or the nuclear norm (anisotropic TV)
//! of the per-pixel Jacobian, and the convergence experiment comparing smooth
//! linear-growth models against these solutions.
//!
//! The iteration is the basic Chambolle–Pock scheme on the pixel sums. Stopping is
//! certified by the duality gap, normalized by the pixel count:
//!
//! ```text
//! P(u) = Σ R(∇u) + (λ/2) Σ |u - f|²
//! D(q) = -⟨f, div q⟩ - |div q|² / (2λ)      with every |q(x)|_* ≤ 1
//! ```
//!
//! where `|·|_*` is the Frobenius norm or the spectral norm. Besides the primal
//! iterate, the dual-induced point `f + div q / λ` is evaluated and the better of the
//! two is kept.

use serde::{Deserialize, Serialize};

use crate::density::ScalarDensity;
use crate::energy::{EnergyModel, Family, Fidelity, Regularizer};
use crate::error::{Error, Result};
use crate::field::{divergence, gradient, lp_distance, ImageField, JacobianField};
use crate::solver::{minimize, SolverConfig};
use crate::spectral::{frobenius_norm, nuclear_norm, project_frobenius_ball, project_spectral_ball};

/// Upper bound for `‖∇‖²` of the forward-difference stencil.
pub const GRADIENT_NORM_SQ_BOUND: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvVariant {
    Frobenius,
    Nuclear,
}

impl TvVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "frobenius" => Ok(TvVariant::Frobenius),
            "nuclear" => Ok(TvVariant::Nuclear),
            _ => Err(Error::Usage(format!("unknown TV variant '{s}' (expected frobenius|nuclear)"))),
        }
    }

    /// Per-pixel TV density.
    pub fn density(self, p: &[f64]) -> f64 {
        match self {
            TvVariant::Frobenius => frobenius_norm(p),
            TvVariant::Nuclear => nuclear_norm(p),
        }
    }

    /// Projection onto the unit ball of the dual norm.
    pub fn project_dual(self, q: &mut [f64]) {
        match self {
            TvVariant::Frobenius => project_frobenius_ball(q),
            TvVariant::Nuclear => project_spectral_ball(q),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TvProblem {
    pub variant: TvVariant,
    pub lambda: f64,
    pub max_iters: usize,
    pub gap_tol: f64,
}

impl TvProblem {
    pub fn new(variant: TvVariant, lambda: f64) -> Self {
        TvProblem {
            variant,
            lambda,
            max_iters: 200_000,
            gap_tol: 1e-6,
        }
    }

    pub fn with_gap_tol(mut self, gap_tol: f64) -> Self {
        self.gap_tol = gap_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Parameter(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be positive".into()));
        }
        if !(self.gap_tol.is_finite() && self.gap_tol > 0.0) {
            return Err(Error::Parameter(format!("gap_tol must be > 0, got {}", self.gap_tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TvSolution {
    pub u: ImageField,
    pub dual: JacobianField,
    /// Normalized duality gap of `(u, dual)`.
    pub gap: f64,
    /// False when `gap_tol` was not reached within `max_iters`.
    pub converged: bool,
    pub iterations: usize,
}

/// Grid-averaged TV term `mean_x R(∇u(x))`.
pub fn tv_regularizer(variant: TvVariant, u: &ImageField) -> f64 {
    let g = gradient(u);
    g.pixels().map(|p| variant.density(p)).sum::<f64>() / u.pixel_count() as f64
}

/// Grid-averaged TV objective.
pub fn tv_energy(variant: TvVariant, lambda: f64, u: &ImageField, f: &ImageField) -> Result<f64> {
    u.require_shape(f)?;
    Ok(primal_sum(variant, lambda, u, f) / u.pixel_count() as f64)
}

fn primal_sum(variant: TvVariant, lambda: f64, u: &ImageField, f: &ImageField) -> f64 {
    let reg: f64 = gradient(u).pixels().map(|p| variant.density(p)).sum();
    let fid: f64 = u.as_slice().iter().zip(f.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
    reg + 0.5 * lambda * fid
}

/// Returns `(D(q), f + div q / λ)`.
fn dual_sum(lambda: f64, f: &ImageField, q: &JacobianField) -> (f64, ImageField) {
    let div = divergence(q);
    let value = -f.dot(&div) - div.dot(&div) / (2.0 * lambda);
    (value, f.add_scaled(1.0 / lambda, &div))
}

/// Solve the TV problem for data `f`. If `gap_tol` is not reached, the best iterate is
/// returned with `converged = false`.
pub fn solve_tv(problem: &TvProblem, f: &ImageField) -> Result<TvSolution> {
    problem.validate()?;
    let (h, w, n) = f.shape();
    let count = f.pixel_count() as f64;
    let lambda = problem.lambda;
    let variant = problem.variant;
    // τσ‖∇‖² = 0.98 < 1.
    let tau = (0.98 / GRADIENT_NORM_SQ_BOUND).sqrt();
    let sigma = tau;

    let mut u = f.clone();
    let mut u_bar = f.clone();
    let mut q = JacobianField::zeros(h, w, n);

    let mut best_u = f.clone();
    let mut best_q = q.clone();
    let mut best_gap = f64::INFINITY;
    const CHECK_EVERY: usize = 10;

    let mut iterations = 0;
    loop {
        if iterations % CHECK_EVERY == 0 || iterations == problem.max_iters {
            let (dual, u_dual) = dual_sum(lambda, f, &q);
            let p_iter = primal_sum(variant, lambda, &u, f);
            let p_dual = primal_sum(variant, lambda, &u_dual, f);
            let (primal, candidate) = if p_dual < p_iter { (p_dual, &u_dual) } else { (p_iter, &u) };
            let gap = ((primal - dual) / count).max(0.0);
            if gap < best_gap {
                best_gap = gap;
                best_u = candidate.clone();
                best_q = q.clone();
            }
            if best_gap <= problem.gap_tol || iterations == problem.max_iters {
                break;
            }
        }

        let g = gradient(&u_bar);
        for (qp, gp) in q.pixels_mut().zip(g.pixels()) {
            for (a, b) in qp.iter_mut().zip(gp) {
                *a += sigma * b;
            }
            variant.project_dual(qp);
        }
        let div = divergence(&q);
        let scale = 1.0 / (1.0 + tau * lambda);
        for (((ub, ui), &d), &fi) in u_bar
            .as_mut_slice()
            .iter_mut()
            .zip(u.as_mut_slice().iter_mut())
            .zip(div.as_slice())
            .zip(f.as_slice())
        {
            let next = (*ui + tau * d + tau * lambda * fi) * scale;
            *ub = 2.0 * next - *ui;
            *ui = next;
        }
        iterations += 1;
    }

    Ok(TvSolution {
        u: best_u,
        dual: best_q,
        gap: best_gap,
        converged: best_gap <= problem.gap_tol,
        iterations,
    })
}

// ----------------------------------------------------------- convergence

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamFamily {
    /// `ScaledPhiMu` with increasing μ.
    Mu,
    /// `PseudoHuber` with decreasing ε.
    Eps,
}

impl ParamFamily {
    pub fn density(self, param: f64) -> ScalarDensity {
        match self {
            ParamFamily::Mu => ScalarDensity::ScaledPhiMu { mu: param },
            ParamFamily::Eps => ScalarDensity::PseudoHuber { eps: param },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub param: f64,
    pub l1: f64,
    pub l2: f64,
    pub energy_smooth: f64,
    pub energy_tv: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentTable {
    pub family: ParamFamily,
    pub variant: TvVariant,
    pub rows: Vec<ExperimentRow>,
    pub tv_gap: f64,
    pub tv_converged: bool,
    /// Slack for the monotonicity check: `2 (grad_tol + gap_tol)`.
    pub tolerance: f64,
}

impl ExperimentTable {
    /// Whether the L² distances are non-increasing up to `tolerance`. This is an
    /// empirical expectation: only the limit is guaranteed, not the rate.
    pub fn l2_non_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].l2 <= w[0].l2 + self.tolerance)
    }

    pub fn l1_non_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].l1 <= w[0].l1 + self.tolerance)
    }

    /// `last.l2 / first.l2`, or 0 when the first distance vanishes.
    pub fn l2_ratio(&self) -> f64 {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) if a.l2 > 0.0 => b.l2 / a.l2,
            _ => 0.0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,l1,l2,energy_smooth,energy_tv\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                r.param, r.l1, r.l2, r.energy_smooth, r.energy_tv
            ));
        }
        out
    }
}

/// For each parameter, minimize the smooth model obtained from `template` by
/// swapping in the family's density, and tabulate its distance to the TV solution.
///
/// The template must be isotropic (paired with Frobenius TV) or anisotropic (paired
/// with nuclear TV), use the quadratic fidelity and have the same λ as `tv`.
pub fn convergence_experiment(
    family: ParamFamily,
    params: &[f64],
    f: &ImageField,
    template: &EnergyModel,
    tv: &TvProblem,
    solver: &SolverConfig,
) -> Result<ExperimentTable> {
    tv.validate()?;
    if params.is_empty() {
        return Err(Error::Parameter("parameter list is empty".into()));
    }
    let ordered = params.windows(2).all(|w| match family {
        ParamFamily::Mu => w[1] > w[0],
        ParamFamily::Eps => w[1] < w[0],
    });
    if !ordered {
        return Err(Error::Parameter(match family {
            ParamFamily::Mu => "mu list must be strictly increasing".into(),
            ParamFamily::Eps => "eps list must be strictly decreasing".into(),
        }));
    }
    let expected = match template.family() {
        Family::Isotropic => TvVariant::Frobenius,
        Family::Anisotropic => TvVariant::Nuclear,
        Family::Blend => {
            return Err(Error::Parameter("blend models have no TV counterpart".into()));
        }
    };
    if expected != tv.variant {
        return Err(Error::Parameter(format!(
            "{:?} TV does not match the {:?} model family",
            tv.variant,
            template.family()
        )));
    }
    if template.fidelity != Fidelity::Quadratic {
        return Err(Error::Parameter("the TV oracle supports the quadratic fidelity only".into()));
    }
    if template.lambda != tv.lambda {
        return Err(Error::Parameter(format!(
            "model lambda {} differs from TV lambda {}",
            template.lambda, tv.lambda
        )));
    }

    let reference = solve_tv(tv, f)?;
    let mut rows = Vec::with_capacity(params.len());
    for &param in params {
        let density = family.density(param);
        let mut model = template.clone();
        model.regularizer = match &template.regularizer {
            Regularizer::Isotropic(_) => Regularizer::Isotropic(density),
            Regularizer::Anisotropic { smoothing_eps, .. } => Regularizer::Anisotropic {
                density,
                smoothing_eps: *smoothing_eps,
            },
            Regularizer::Blend { .. } => unreachable!("rejected above"),
        };
        let (u, report) = minimize(&model, f, solver)?;
        rows.push(ExperimentRow {
            param,
            l1: lp_distance(&u, &reference.u, 1.0)?,
            l2: lp_distance(&u, &reference.u, 2.0)?,
            energy_smooth: report.final_energy,
            energy_tv: tv_energy(tv.variant, tv.lambda, &u, f)?,
        });
    }
    Ok(ExperimentTable {
        family,
        variant: tv.variant,
        rows,
        tv_gap: reference.gap,
        tv_converged: reference.converged,
        tolerance: 2.0 * (solver.grad_tol + tv.gap_tol),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::singular_values;

    #[test]
    fn constant_data_has_zero_gap() {
        let f = ImageField::constant(5, 4, &[0.2, 0.9]);
        for variant in [TvVariant::Frobenius, TvVariant::Nuclear] {
            let sol = solve_tv(&TvProblem::new(variant, 3.0), &f).unwrap();
            assert_eq!(sol.u, f);
            assert_eq!(sol.gap, 0.0);
            assert_eq!(sol.iterations, 0);
        }
    }

    #[test]
    fn gap_certifies_and_duals_are_feasible() {
        let f = ImageField::random_uniform(12, 12, 3, 0.0, 1.0, 5);
        for variant in [TvVariant::Frobenius, TvVariant::Nuclear] {
            let problem = TvProblem::new(variant, 8.0).with_gap_tol(1e-7);
            let sol = solve_tv(&problem, &f).unwrap();
            assert!(sol.converged, "{variant:?} gap {}", sol.gap);
            assert!(sol.gap >= 0.0 && sol.gap <= 1e-7);
            for q in sol.dual.pixels() {
                let norm = match variant {
                    TvVariant::Frobenius => frobenius_norm(q),
                    TvVariant::Nuclear => singular_values(q).unwrap().singular_values[0],
                };
                assert!(norm <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn unconverged_runs_are_flagged() {
        let f = ImageField::random_uniform(8, 8, 1, 0.0, 1.0, 6);
        let problem = TvProblem {
            max_iters: 3,
            gap_tol: 1e-12,
            ..TvProblem::new(TvVariant::Frobenius, 1.0)
        };
        let sol = solve_tv(&problem, &f).unwrap();
        assert!(!sol.converged);
        assert!(sol.gap > 1e-12 && sol.gap.is_finite());
    }

    #[test]
    fn experiment_rejects_mismatches() {
        let f = ImageField::random_uniform(4, 4, 3, 0.0, 1.0, 7);
        let iso = EnergyModel::isotropic(ScalarDensity::Linear, 2.0);
        let tv = TvProblem::new(TvVariant::Nuclear, 2.0);
        let cfg = SolverConfig::default();
        assert!(convergence_experiment(ParamFamily::Mu, &[4.0, 8.0], &f, &iso, &tv, &cfg).is_err());
        let tv = TvProblem::new(TvVariant::Frobenius, 2.0);
        assert!(convergence_experiment(ParamFamily::Mu, &[8.0, 4.0], &f, &iso, &tv, &cfg).is_err());
        assert!(convergence_experiment(ParamFamily::Eps, &[0.1, 0.5], &f, &iso, &tv, &cfg).is_err());
        let other_lambda = TvProblem::new(TvVariant::Frobenius, 3.0);
        assert!(convergence_experiment(ParamFamily::Mu, &[4.0], &f, &iso, &other_lambda, &cfg).is_err());
    }

    #[test]
    fn constant_data_experiment_has_zero_distances() {
        let f = ImageField::constant(6, 6, &[0.1, 0.5, 0.7]);
        let template = EnergyModel::anisotropic(ScalarDensity::Linear, 1e-3, 5.0);
        let tv = TvProblem::new(TvVariant::Nuclear, 5.0);
        let table =
            convergence_experiment(ParamFamily::Mu, &[4.0, 8.0], &f, &template, &tv, &SolverConfig::default()).unwrap();
        for row in &table.rows {
            assert!(row.l1 <= 1e-12 && row.l2 <= 1e-12);
        }
        assert!(table.to_csv().starts_with("param,l1,l2,energy_smooth,energy_tv\n"));
    }
}
