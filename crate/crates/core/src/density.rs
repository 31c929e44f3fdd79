//! Scalar convex densities `ψ: [0, ∞) → [0, ∞)` of linear growth.
//!
//! The families implemented here are
//!
//! * `PhiMu`: `Φ_μ(t) = ∫₀ᵗ ∫₀ˢ (1 + r)^(-μ) dr ds`, the canonical μ-elliptic density,
//! * `ScaledPhiMu`: `(μ - 1) Φ_μ`, normalized so that its recession slope is 1,
//! * `PseudoHuber`: `√(ε² + t²) - ε`,
//! * `Linear`: `t`, the total-variation density.
//!
//! Besides values and derivatives the module measures the structural constants of a
//! density on a sample grid (linear-growth constants, μ-ellipticity constants). Those
//! constants are never hard-coded; they are always computed from the closed forms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters closer than this to 1 or 2 use the dedicated closed forms for `Φ₁`, `Φ₂`.
pub const MU_SNAP: f64 = 1e-6;

/// Below this argument `ψ'(t)/t` is replaced by its limit `ψ''(0)`.
pub const RATIO_GUARD: f64 = 1e-8;

/// Largest allowed log-log slope of the ellipticity ratios over the last grid decade.
pub const TAIL_SLOPE_TOL: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarDensity {
    PhiMu { mu: f64 },
    ScaledPhiMu { mu: f64 },
    PseudoHuber { eps: f64 },
    Linear,
}

/// The limit `lim ψ(t)/t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Recession {
    Finite(f64),
    /// `ψ(t)/t → ∞`, the case `μ ≤ 1` of `Φ_μ`.
    Superlinear,
}

impl Recession {
    pub fn finite(self) -> Option<f64> {
        match self {
            Recession::Finite(s) => Some(s),
            Recession::Superlinear => None,
        }
    }
}

/// Which closed form of `Φ_μ` applies.
#[derive(Clone, Copy)]
enum PhiForm {
    One,
    Two,
    Generic(f64),
}

fn phi_form(mu: f64) -> PhiForm {
    if (mu - 1.0).abs() < MU_SNAP {
        PhiForm::One
    } else if (mu - 2.0).abs() < MU_SNAP {
        PhiForm::Two
    } else {
        PhiForm::Generic(mu)
    }
}

fn phi_eval(mu: f64, t: f64) -> f64 {
    match phi_form(mu) {
        PhiForm::One => (1.0 + t) * t.ln_1p() - t,
        PhiForm::Two => t - t.ln_1p(),
        PhiForm::Generic(mu) => (t + ((2.0 - mu) * t.ln_1p()).exp_m1() / (mu - 2.0)) / (mu - 1.0),
    }
}

fn phi_deriv1(mu: f64, t: f64) -> f64 {
    match phi_form(mu) {
        PhiForm::One => t.ln_1p(),
        // Φ₂' = t/(1+t) is covered by the generic expression as well.
        PhiForm::Two => t / (1.0 + t),
        PhiForm::Generic(mu) => -((1.0 - mu) * t.ln_1p()).exp_m1() / (mu - 1.0),
    }
}

fn phi_deriv2(mu: f64, t: f64) -> f64 {
    (1.0 + t).powf(-mu)
}

fn phi_change(mu: f64, base: f64, delta: f64) -> f64 {
    let rel = (delta / (1.0 + base)).ln_1p();
    match phi_form(mu) {
        PhiForm::One => delta * base.ln_1p() + (1.0 + base + delta) * rel - delta,
        PhiForm::Two => delta - rel,
        PhiForm::Generic(mu) => {
            let head = ((2.0 - mu) * base.ln_1p()).exp();
            (delta + head * ((2.0 - mu) * rel).exp_m1() / (mu - 2.0)) / (mu - 1.0)
        }
    }
}

impl ScalarDensity {
    pub fn phi_mu(mu: f64) -> Result<Self> {
        let d = ScalarDensity::PhiMu { mu };
        d.validate()?;
        Ok(d)
    }

    pub fn scaled_phi_mu(mu: f64) -> Result<Self> {
        let d = ScalarDensity::ScaledPhiMu { mu };
        d.validate()?;
        Ok(d)
    }

    pub fn pseudo_huber(eps: f64) -> Result<Self> {
        let d = ScalarDensity::PseudoHuber { eps };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScalarDensity::PhiMu { mu } if !(mu.is_finite() && mu > 0.0) => {
                Err(Error::Parameter(format!("PhiMu needs mu > 0, got {mu}")))
            }
            // (μ-1)Φ_μ degenerates for μ ≤ 1.
            ScalarDensity::ScaledPhiMu { mu } if !(mu.is_finite() && mu > 1.0) => {
                Err(Error::Parameter(format!("ScaledPhiMu needs mu > 1, got {mu}")))
            }
            ScalarDensity::PseudoHuber { eps } if !(eps.is_finite() && eps > 0.0) => {
                Err(Error::Parameter(format!("PseudoHuber needs eps > 0, got {eps}")))
            }
            _ => Ok(()),
        }
    }

    fn check_arg(&self, t: f64) -> Result<()> {
        self.validate()?;
        if !t.is_finite() {
            return Err(Error::Domain(format!("density argument must be finite, got {t}")));
        }
        if t < 0.0 {
            return Err(Error::Domain(format!("density argument must be nonnegative, got {t}")));
        }
        Ok(())
    }

    /// `ψ(t)`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.check_arg(t)?;
        Ok(self.value(t))
    }

    /// `ψ'(t)`.
    pub fn deriv1(&self, t: f64) -> Result<f64> {
        self.check_arg(t)?;
        Ok(self.slope(t))
    }

    /// `ψ''(t)`.
    pub fn deriv2(&self, t: f64) -> Result<f64> {
        self.check_arg(t)?;
        Ok(self.curvature(t))
    }

    // Unchecked kernels for the per-pixel loops. Callers guarantee `t >= 0` and a
    // validated density.

    #[inline]
    pub(crate) fn value(&self, t: f64) -> f64 {
        match *self {
            ScalarDensity::PhiMu { mu } => phi_eval(mu, t),
            ScalarDensity::ScaledPhiMu { mu } => (mu - 1.0) * phi_eval(mu, t),
            // Same as √(ε²+t²) - ε without the cancellation at small t.
            ScalarDensity::PseudoHuber { eps } => t * t / ((eps * eps + t * t).sqrt() + eps),
            ScalarDensity::Linear => t,
        }
    }

    #[inline]
    pub(crate) fn slope(&self, t: f64) -> f64 {
        match *self {
            ScalarDensity::PhiMu { mu } => phi_deriv1(mu, t),
            ScalarDensity::ScaledPhiMu { mu } => (mu - 1.0) * phi_deriv1(mu, t),
            ScalarDensity::PseudoHuber { eps } => t / (eps * eps + t * t).sqrt(),
            ScalarDensity::Linear => 1.0,
        }
    }

    #[inline]
    pub(crate) fn curvature(&self, t: f64) -> f64 {
        match *self {
            ScalarDensity::PhiMu { mu } => phi_deriv2(mu, t),
            ScalarDensity::ScaledPhiMu { mu } => (mu - 1.0) * phi_deriv2(mu, t),
            ScalarDensity::PseudoHuber { eps } => {
                let s = eps * eps + t * t;
                eps * eps / (s * s.sqrt())
            }
            ScalarDensity::Linear => 0.0,
        }
    }

    /// `ψ'(t)/t`, continuously extended by `ψ''(0)` at the origin.
    ///
    /// Infinite at `t = 0` for the linear density, which has a kink there.
    #[inline]
    pub(crate) fn ratio(&self, t: f64) -> f64 {
        if t < RATIO_GUARD {
            match self {
                ScalarDensity::Linear => {
                    if t > 0.0 {
                        1.0 / t
                    } else {
                        f64::INFINITY
                    }
                }
                _ => self.curvature(0.0),
            }
        } else {
            self.slope(t) / t
        }
    }

    /// `ψ(base + delta) - ψ(base)`, accurate to a few ulps of `|delta| ψ'`
    /// even when the difference is far below the resolution of `ψ(base)`.
    #[inline]
    pub(crate) fn change(&self, base: f64, delta: f64) -> f64 {
        match *self {
            ScalarDensity::PhiMu { mu } => phi_change(mu, base, delta),
            ScalarDensity::ScaledPhiMu { mu } => (mu - 1.0) * phi_change(mu, base, delta),
            ScalarDensity::PseudoHuber { eps } => {
                let next = base + delta;
                delta * (base + next) / ((eps * eps + next * next).sqrt() + (eps * eps + base * base).sqrt())
            }
            ScalarDensity::Linear => delta,
        }
    }

    /// True when `ψ` is twice continuously differentiable on `[0, ∞)` as an even function.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, ScalarDensity::Linear)
    }

    pub fn recession_slope(&self) -> Recession {
        match *self {
            ScalarDensity::PhiMu { mu } if mu > 1.0 + MU_SNAP => Recession::Finite(1.0 / (mu - 1.0)),
            ScalarDensity::PhiMu { .. } => Recession::Superlinear,
            ScalarDensity::ScaledPhiMu { .. } | ScalarDensity::PseudoHuber { .. } | ScalarDensity::Linear => {
                Recession::Finite(1.0)
            }
        }
    }

    /// Parse the CLI spelling: `phimu:<mu>`, `scaled:<mu>`, `phuber:<eps>`, `linear`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, arg) = match spec.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (spec, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::Usage(format!("density '{spec}' needs a parameter")))?
                .parse::<f64>()
                .map_err(|e| Error::Usage(format!("density '{spec}': {e}")))
        };
        match kind {
            "phimu" => ScalarDensity::phi_mu(num(arg)?),
            "scaled" => ScalarDensity::scaled_phi_mu(num(arg)?),
            "phuber" => ScalarDensity::pseudo_huber(num(arg)?),
            "linear" if arg.is_none() => Ok(ScalarDensity::Linear),
            _ => Err(Error::Usage(format!("unknown density '{spec}'"))),
        }
    }
}

/// Logarithmically spaced sample points in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && points >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Grid used when no explicit sample grid is given: 201 points from 1e-4 to 1e6.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-4, 1e6, 201)
}

/// Measured μ-ellipticity constants of a density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EllipticityCertificate {
    /// Largest `ν₄` with `ν₄ (1+t)^(-μ) ≤ min{ψ'(t)/t, ψ''(t)}` on the grid.
    pub nu4: f64,
    /// Smallest `ν₅` with `max{ψ'(t)/t, ψ''(t)} ≤ ν₅ / (1+t)` on the grid.
    pub nu5: f64,
    /// Log-log slope of the lower ratio over the last decade of the grid.
    pub lower_tail_slope: f64,
    /// Log-log slope of the upper ratio over the last decade of the grid.
    pub upper_tail_slope: f64,
    pub ok: bool,
}

/// Measure the tightest constants in
/// `ν₄(1+t)^(-μ) ≤ min{ψ'(t)/t, ψ''(t)}` and `max{ψ'(t)/t, ψ''(t)} ≤ ν₅/(1+t)`.
///
/// On a finite grid the extremal ratios are always finite, so `ok` additionally
/// requires that neither ratio drifts as a power law over the last decade of the
/// grid: a lower ratio decaying like `t^(-s)` (or an upper ratio growing like `t^s`)
/// with `s > TAIL_SLOPE_TOL` means the constant degenerates as `t → ∞`. Grids that
/// do not span a decade skip the tail test. The notion presumes linear growth and
/// an exponent `μ > 1`, so superlinear densities and `μ ≤ 1` never pass.
pub fn verify_mu_ellipticity(
    density: &ScalarDensity,
    mu_claimed: f64,
    grid: &[f64],
) -> Result<EllipticityCertificate> {
    density.validate()?;
    if grid.is_empty() {
        return Err(Error::Usage("sample grid is empty".into()));
    }
    if !mu_claimed.is_finite() {
        return Err(Error::Parameter(format!("claimed mu must be finite, got {mu_claimed}")));
    }
    if let Some(&bad) = grid.iter().find(|&&t| !(t > 0.0 && t <= 1e6)) {
        return Err(Error::Usage(format!("grid point {bad} outside (0, 1e6]")));
    }

    let lower = |t: f64| density.ratio(t).min(density.curvature(t)) * (1.0 + t).powf(mu_claimed);
    let upper = |t: f64| density.ratio(t).max(density.curvature(t)) * (1.0 + t);

    let nu4 = grid.iter().map(|&t| lower(t)).fold(f64::INFINITY, f64::min);
    let nu5 = grid.iter().map(|&t| upper(t)).fold(f64::NEG_INFINITY, f64::max);

    // Tail test between the largest grid point and the point nearest to a decade below it.
    let t_max = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let target = (t_max / 10.0).ln();
    let t_tail = grid
        .iter()
        .copied()
        .min_by(|a, b| (a.ln() - target).abs().total_cmp(&(b.ln() - target).abs()))
        .unwrap_or(t_max);
    let (lower_tail_slope, upper_tail_slope) = if t_max / t_tail >= 5.0 {
        let span = (t_max / t_tail).ln();
        (
            (lower(t_max) / lower(t_tail)).ln() / span,
            (upper(t_max) / upper(t_tail)).ln() / span,
        )
    } else {
        (0.0, 0.0)
    };

    let finite_positive = |v: f64| v.is_finite() && v > 0.0;
    let ok = mu_claimed > 1.0
        && density.recession_slope().finite().is_some()
        && finite_positive(nu4)
        && finite_positive(nu5)
        && lower_tail_slope >= -TAIL_SLOPE_TOL
        && upper_tail_slope <= TAIL_SLOPE_TOL;

    Ok(EllipticityCertificate {
        nu4,
        nu5,
        lower_tail_slope,
        upper_tail_slope,
        ok,
    })
}

/// Measured linear-growth constants: `slope_lo·t - offset ≤ ψ(t) ≤ slope_hi·t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearGrowth {
    pub slope_lo: f64,
    pub offset: f64,
    pub slope_hi: f64,
}

/// Measure linear-growth constants of `ψ` on a grid. `slope_lo` is the recession
/// slope, `offset` the largest shortfall `slope_lo·t - ψ(t)` on the grid (and at 0),
/// `slope_hi` the largest `ψ'` on the grid (convexity and `ψ(0) = 0` give
/// `ψ(t) ≤ t·sup ψ'`).
pub fn measure_linear_growth(density: &ScalarDensity, grid: &[f64]) -> Result<LinearGrowth> {
    density.validate()?;
    let slope_lo = density
        .recession_slope()
        .finite()
        .ok_or_else(|| Error::Parameter("superlinear density has no linear-growth constants".into()))?;
    let mut offset: f64 = 0.0;
    let mut slope_hi = density.slope(0.0);
    for &t in grid {
        density.check_arg(t)?;
        offset = offset.max(slope_lo * t - density.value(t));
        slope_hi = slope_hi.max(density.slope(t));
    }
    Ok(LinearGrowth {
        slope_lo,
        offset,
        slope_hi: slope_hi.max(slope_lo),
    })
}
