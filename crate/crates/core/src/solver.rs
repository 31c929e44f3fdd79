//! Gradient descent with Armijo backtracking for the smooth energies.
//!
//! Trial steps come from the Barzilai–Borwein rule after the first iteration. The
//! Armijo test uses [`EnergyModel::value_change`], which resolves energy decreases far
//! below the rounding level of the energy itself, so tight gradient tolerances are
//! reachable. The recorded energy trace starts at the recomputed stage energy and
//! accumulates the accepted decreases; it is non-increasing by construction.

use serde::Serialize;

use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::field::ImageField;

/// Halvings allowed per line search before giving up.
pub const MAX_BACKTRACKS: usize = 60;

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    DataF,
    Zero,
    Custom(ImageField),
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Iteration limit per δ-stage.
    pub max_iters: usize,
    /// Stop once the grid-averaged gradient norm is at most this.
    pub grad_tol: f64,
    /// Optional stop on relative energy decrease `|ΔJ| ≤ energy_tol·|J|`.
    pub energy_tol: Option<f64>,
    pub backtrack_factor: f64,
    pub armijo_c: f64,
    pub init: Init,
    /// Descending δ values, each stage warm-started from the previous one. Empty
    /// means a single stage with the model's own δ.
    pub delta_schedule: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 20_000,
            grad_tol: 1e-6,
            energy_tol: None,
            backtrack_factor: 0.5,
            armijo_c: 1e-4,
            init: Init::DataF,
            delta_schedule: Vec::new(),
        }
    }
}

impl SolverConfig {
    pub fn with_grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = tol;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let param = |msg: String| Err(Error::Parameter(msg));
        if self.max_iters == 0 {
            return param("max_iters must be positive".into());
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return param(format!("grad_tol must be > 0, got {}", self.grad_tol));
        }
        if let Some(tol) = self.energy_tol {
            if !(tol.is_finite() && tol > 0.0) {
                return param(format!("energy_tol must be > 0, got {tol}"));
            }
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return param(format!("backtrack_factor must lie in (0, 1), got {}", self.backtrack_factor));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return param(format!("armijo_c must lie in (0, 1), got {}", self.armijo_c));
        }
        if self.delta_schedule.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return param("delta schedule entries must be finite and >= 0".into());
        }
        if self.delta_schedule.windows(2).any(|w| w[1] > w[0]) {
            return param("delta schedule must be descending".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTol,
    EnergyTol,
    MaxIters,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub final_energy: f64,
    pub final_grad_norm: f64,
    pub energy_trace: Vec<f64>,
    pub termination: Termination,
    /// Index into `energy_trace` where each δ-stage starts.
    pub stage_starts: Vec<usize>,
    /// Final iterate of every stage except the last (empty for single-stage runs).
    #[serde(skip)]
    pub stage_solutions: Vec<ImageField>,
}

/// Minimize a smooth energy model for data `f`.
pub fn minimize(model: &EnergyModel, f: &ImageField, config: &SolverConfig) -> Result<(ImageField, SolverReport)> {
    config.validate()?;
    model.validate()?;
    if !model.is_smooth() {
        return Err(Error::NonSmooth(
            "the model contains the linear (TV) density; use the TV oracle".into(),
        ));
    }
    let mut u = match &config.init {
        Init::DataF => f.clone(),
        Init::Zero => ImageField::zeros(f.height(), f.width(), f.channels()),
        Init::Custom(u0) => {
            f.require_shape(u0)?;
            u0.clone()
        }
    };
    // Surface shape errors (blend mask) before iterating.
    model.value(&u, f)?;

    let schedule = if config.delta_schedule.is_empty() {
        vec![model.delta]
    } else {
        config.delta_schedule.clone()
    };

    let mut trace = Vec::new();
    let mut stage_starts = Vec::new();
    let mut stage_solutions = Vec::new();
    let mut iterations = 0;
    let mut termination = Termination::MaxIters;
    let mut grad_norm = f64::INFINITY;
    let mut stage_model = model.clone();

    for (stage, &delta) in schedule.iter().enumerate() {
        stage_model = model.clone().with_delta(delta);
        if stage > 0 {
            stage_solutions.push(u.clone());
        }
        stage_starts.push(trace.len());
        let out = descend(&stage_model, f, &mut u, config, &mut trace)?;
        iterations += out.iterations;
        termination = out.termination;
        grad_norm = out.grad_norm;
    }

    let final_energy = stage_model.value(&u, f)?;
    Ok((
        u,
        SolverReport {
            iterations,
            final_energy,
            final_grad_norm: grad_norm,
            energy_trace: trace,
            termination,
            stage_starts,
            stage_solutions,
        },
    ))
}

struct StageOutcome {
    iterations: usize,
    termination: Termination,
    grad_norm: f64,
}

fn descend(
    model: &EnergyModel,
    f: &ImageField,
    u: &mut ImageField,
    config: &SolverConfig,
    trace: &mut Vec<f64>,
) -> Result<StageOutcome> {
    let mut energy = model.value(u, f)?;
    trace.push(energy);
    let mut grad = model.gradient(u, f)?;
    let mut grad_sq = grad.dot_avg(&grad);
    let mut step = 1.0;

    for iter in 0..config.max_iters {
        if grad_sq.sqrt() <= config.grad_tol {
            return Ok(StageOutcome {
                iterations: iter,
                termination: Termination::GradTol,
                grad_norm: grad_sq.sqrt(),
            });
        }

        let mut t = step;
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let trial = grad.scaled(-t);
            let change = model.value_change(u, f, &trial)?;
            if change.is_finite() && change <= -config.armijo_c * t * grad_sq {
                accepted = Some((trial, change));
                break;
            }
            t *= config.backtrack_factor;
        }
        let Some((delta_u, change)) = accepted else {
            return Err(Error::Numerical(format!(
                "line search failed after {MAX_BACKTRACKS} backtracks at iteration {iter}: \
                 energy {energy:.6e}, gradient norm {:.3e}, last step {t:.3e}",
                grad_sq.sqrt()
            )));
        };

        u.axpy(1.0, &delta_u);
        let next_grad = model.gradient(u, f)?;
        // Barzilai–Borwein: s = Δu, y = Δg, next step ⟨s,s⟩/⟨s,y⟩.
        let mut diff = next_grad.clone();
        diff.axpy(-1.0, &grad);
        let sy = delta_u.dot_avg(&diff);
        let ss = delta_u.dot_avg(&delta_u);
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { (2.0 * t).min(1e12) };

        energy += change;
        trace.push(energy);
        grad = next_grad;
        grad_sq = grad.dot_avg(&grad);

        if let Some(tol) = config.energy_tol {
            if -change <= tol * energy.abs().max(f64::MIN_POSITIVE) {
                let termination = if grad_sq.sqrt() <= config.grad_tol {
                    Termination::GradTol
                } else {
                    Termination::EnergyTol
                };
                return Ok(StageOutcome {
                    iterations: iter + 1,
                    termination,
                    grad_norm: grad_sq.sqrt(),
                });
            }
        }
    }
    let grad_norm = grad_sq.sqrt();
    Ok(StageOutcome {
        iterations: config.max_iters,
        termination: if grad_norm <= config.grad_tol {
            Termination::GradTol
        } else {
            Termination::MaxIters
        },
        grad_norm,
    })
}
