//! Spectral densities of `2 × N` Jacobians.
//!
//! A matrix `p` is passed as a slice of length `2N` holding its two rows. Its
//! singular values `λ₁ ≥ λ₂ ≥ 0` are the square roots of the eigenvalues `σ_i` of
//! the 2×2 Gram matrix `ppᵀ`, which is diagonalized in closed form. For `N = 1`
//! only one singular value exists.
//!
//! All first derivatives are assembled as `G·p` with `G = Σ c_i u_i u_iᵀ` a function
//! of `ppᵀ` alone. That form only needs the left singular vectors, stays well defined
//! at repeated or vanishing singular values, and agrees with `U·diag(h'(λ))·Vᵀ`
//! whenever `c_i = h'(λ_i)/λ_i`.

use crate::density::ScalarDensity;
use crate::error::{Error, Result};

/// Thin singular value decomposition of a `2 × N` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDecomposition {
    /// Left singular vectors, `left[i]` pairs with `singular_values[i]`.
    pub left: [[f64; 2]; 2],
    /// `min(2, N)` values in descending order.
    pub singular_values: Vec<f64>,
    /// Right singular vectors (length `N` each), orthonormal.
    pub right: Vec<Vec<f64>>,
}

impl SpectralDecomposition {
    /// `Σ λ_i u_i v_iᵀ` as a row-major `2 × N` slice.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.right.first().map_or(0, Vec::len);
        let mut out = vec![0.0; 2 * n];
        for ((u, &l), v) in self.left.iter().zip(&self.singular_values).zip(&self.right) {
            for k in 0..n {
                out[k] += l * u[0] * v[k];
                out[n + k] += l * u[1] * v[k];
            }
        }
        out
    }
}

#[inline]
fn channels_of(p: &[f64]) -> usize {
    debug_assert!(p.len() % 2 == 0 && !p.is_empty());
    p.len() / 2
}

fn check_matrix(p: &[f64]) -> Result<usize> {
    if p.is_empty() || p.len() % 2 != 0 {
        return Err(Error::Usage(format!("expected a 2xN matrix, got {} entries", p.len())));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    Ok(p.len() / 2)
}

/// Gram entries `(|r₀|², r₀·r₁, |r₁|²)` of the rows.
#[inline]
fn gram(p: &[f64]) -> (f64, f64, f64) {
    let n = channels_of(p);
    let (r0, r1) = p.split_at(n);
    let mut a = 0.0;
    let mut b = 0.0;
    let mut c = 0.0;
    for k in 0..n {
        a += r0[k] * r0[k];
        b += r0[k] * r1[k];
        c += r1[k] * r1[k];
    }
    (a, b, c)
}

/// Left singular basis and singular values without allocation.
///
/// Returns `(u₁, u₂, λ₁, λ₂)`; `λ_i = |pᵀu_i|`, which keeps small singular values
/// accurate to `O(ε_mach |p|)`.
#[inline]
pub(crate) fn left_basis(p: &[f64]) -> ([f64; 2], [f64; 2], f64, f64) {
    let n = channels_of(p);
    let (a, b, c) = gram(p);
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (sn, cs) = theta.sin_cos();
    let mut u1 = [cs, sn];
    let mut u2 = [-sn, cs];
    let (r0, r1) = p.split_at(n);
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for k in 0..n {
        let w1 = u1[0] * r0[k] + u1[1] * r1[k];
        let w2 = u2[0] * r0[k] + u2[1] * r1[k];
        l1 += w1 * w1;
        l2 += w2 * w2;
    }
    let (mut l1, mut l2) = (l1.sqrt(), l2.sqrt());
    if l2 > l1 {
        std::mem::swap(&mut u1, &mut u2);
        std::mem::swap(&mut l1, &mut l2);
    }
    (u1, u2, l1, l2)
}

/// Singular values (with vectors) of a `2 × N` matrix.
pub fn singular_values(p: &[f64]) -> Result<SpectralDecomposition> {
    let n = check_matrix(p)?;
    let (u1, u2, l1, l2) = left_basis(p);
    let (r0, r1) = p.split_at(n);
    let project = |u: [f64; 2]| -> Vec<f64> { (0..n).map(|k| u[0] * r0[k] + u[1] * r1[k]).collect() };

    let rank = n.min(2);
    let mut right: Vec<Vec<f64>> = Vec::with_capacity(rank);
    let mut values = Vec::with_capacity(rank);
    for (u, l) in [(u1, l1), (u2, l2)].into_iter().take(rank) {
        let mut v = project(u);
        // Orthogonalize against earlier vectors, then normalize or complete.
        for prev in &right {
            let d: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(prev).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-13 * l1.max(f64::MIN_POSITIVE) && norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            v = complete_basis(n, &right);
        }
        right.push(v);
        values.push(l);
    }
    Ok(SpectralDecomposition {
        left: [u1, u2],
        singular_values: values,
        right,
    })
}

/// A unit vector orthogonal to `basis`, from Gram–Schmidt on the standard basis.
fn complete_basis(n: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut best = vec![0.0; n];
    let mut best_norm = -1.0;
    for e in 0..n {
        let mut v = vec![0.0; n];
        v[e] = 1.0;
        for b in basis {
            let d = b[e];
            v.iter_mut().zip(b).for_each(|(a, x)| *a -= d * x);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > best_norm {
            best_norm = norm;
            best = v;
        }
    }
    best.iter_mut().for_each(|x| *x /= best_norm);
    best
}

/// Nuclear norm `Σ λ_i(p)`, the anisotropic TV density.
///
/// Evaluated as `√(|p|² + 2 λ₁λ₂)` with the same `|p|²` as [`frobenius_norm`], so
/// `nuclear_norm(p) ≥ frobenius_norm(p)` holds exactly in floating point.
pub fn nuclear_norm(p: &[f64]) -> f64 {
    let cross = if channels_of(p) == 1 {
        0.0
    } else {
        let (_, _, l1, l2) = left_basis(p);
        2.0 * l1 * l2
    };
    (frobenius_sq(p) + cross).sqrt()
}

fn frobenius_sq(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>()
}

pub fn frobenius_norm(p: &[f64]) -> f64 {
    frobenius_sq(p).sqrt()
}

/// `F_ψ(p) = Σ ψ(λ_i(p))`.
pub fn f_psi_value(density: &ScalarDensity, p: &[f64]) -> Result<f64> {
    density.validate()?;
    let n = check_matrix(p)?;
    let (_, _, l1, l2) = left_basis(p);
    let mut total = density.value(l1);
    if n > 1 {
        total += density.value(l2);
    }
    Ok(total)
}

#[inline]
fn smoothed_radius(eps: f64, lambda: f64) -> f64 {
    let s2 = lambda * lambda;
    (eps * eps + s2 * s2).sqrt().sqrt()
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("smoothing eps must be positive, got {eps}")))
    }
}

#[inline]
pub(crate) fn f_star_kernel(density: &ScalarDensity, eps: f64, p: &[f64]) -> f64 {
    let (_, _, l1, l2) = left_basis(p);
    let mut total = density.value(smoothed_radius(eps, l1));
    if channels_of(p) > 1 {
        total += density.value(smoothed_radius(eps, l2));
    }
    total
}

/// `F*(p) = Σ ψ((ε² + σ_i(p)²)^{1/4})` with `σ_i = λ_i²`.
pub fn f_star_value(density: &ScalarDensity, eps: f64, p: &[f64]) -> Result<f64> {
    density.validate()?;
    check_eps(eps)?;
    check_matrix(p)?;
    Ok(f_star_kernel(density, eps, p))
}

/// `h'(λ)/λ` for `h(λ) = ψ((ε² + λ⁴)^{1/4})`, i.e. `ψ'(s) λ² / s³`; zero at `λ = 0`.
#[inline]
fn f_star_weight(density: &ScalarDensity, eps: f64, lambda: f64) -> f64 {
    let s = smoothed_radius(eps, lambda);
    density.slope(s) * lambda * lambda / (s * s * s)
}

/// `out = (c₁ u₁u₁ᵀ + c₂ u₂u₂ᵀ) p`.
#[inline]
fn apply_left_weights(p: &[f64], u1: [f64; 2], u2: [f64; 2], c1: f64, c2: f64, out: &mut [f64]) {
    let n = channels_of(p);
    let g00 = c1 * u1[0] * u1[0] + c2 * u2[0] * u2[0];
    let g01 = c1 * u1[0] * u1[1] + c2 * u2[0] * u2[1];
    let g11 = c1 * u1[1] * u1[1] + c2 * u2[1] * u2[1];
    for k in 0..n {
        let (x, y) = (p[k], p[n + k]);
        out[k] = g00 * x + g01 * y;
        out[n + k] = g01 * x + g11 * y;
    }
}

#[inline]
pub(crate) fn f_star_gradient_into(density: &ScalarDensity, eps: f64, p: &[f64], out: &mut [f64]) {
    let (u1, u2, l1, l2) = left_basis(p);
    let c1 = f_star_weight(density, eps, l1);
    let c2 = if channels_of(p) > 1 { f_star_weight(density, eps, l2) } else { 0.0 };
    apply_left_weights(p, u1, u2, c1, c2, out);
}

/// Gradient of [`f_star_value`] with respect to the entries of `p`.
pub fn f_star_gradient(density: &ScalarDensity, eps: f64, p: &[f64]) -> Result<Vec<f64>> {
    density.validate()?;
    check_eps(eps)?;
    check_matrix(p)?;
    let mut out = vec![0.0; p.len()];
    f_star_gradient_into(density, eps, p, &mut out);
    Ok(out)
}

/// `F*(p + dp) - F*(p)` computed from differences of the Gram eigenvalues, so the
/// result is accurate relative to `|dp|` rather than to `F*(p)`.
pub(crate) fn f_star_change(density: &ScalarDensity, eps: f64, p: &[f64], dp: &[f64]) -> f64 {
    let n = channels_of(p);
    let (a, b, c) = gram(p);
    let (mut da, mut db, mut dc) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (x, y, dx, dy) = (p[k], p[n + k], dp[k], dp[n + k]);
        da += dx * (2.0 * x + dx);
        dc += dy * (2.0 * y + dy);
        db += dx * y + x * dy + dx * dy;
    }
    let term = |sigma: f64, dsigma: f64| -> f64 {
        let next = (sigma + dsigma).max(0.0);
        let sigma = sigma.max(0.0);
        let s = (eps * eps + sigma * sigma).sqrt().sqrt();
        let s_next = (eps * eps + next * next).sqrt().sqrt();
        let d4 = if sigma + dsigma < 0.0 { (next - sigma) * (next + sigma) } else { dsigma * (next + sigma) };
        let ds = d4 / ((s_next * s_next + s * s) * (s_next + s));
        density.change(s, ds)
    };
    if n == 1 {
        return term(a + c, da + dc);
    }
    let m = 0.5 * (a + c);
    let dm = 0.5 * (da + dc);
    let e = 0.5 * (a - c);
    let de = 0.5 * (da - dc);
    let r = (e * e + b * b).sqrt();
    let r_next = ((e + de) * (e + de) + (b + db) * (b + db)).sqrt();
    let dr2 = de * (2.0 * e + de) + db * (2.0 * b + db);
    let dr = if r + r_next > 0.0 { dr2 / (r + r_next) } else { 0.0 };
    term(m + r, dm + dr) + term(m - r, dm - dr)
}

/// Recession functional `ψ'_∞ Σ λ_i(p)`.
pub fn recession_value(density: &ScalarDensity, p: &[f64]) -> Result<f64> {
    density.validate()?;
    check_matrix(p)?;
    let slope = density
        .recession_slope()
        .finite()
        .ok_or_else(|| Error::Parameter("superlinear density has no recession function".into()))?;
    Ok(slope * nuclear_norm(p))
}

/// Project onto the spectral-norm unit ball `{λ₁ ≤ 1}` (the polar of the nuclear norm)
/// by clamping singular values at 1.
pub fn project_spectral_ball(q: &mut [f64]) {
    let (u1, u2, l1, l2) = left_basis(q);
    if l1 <= 1.0 {
        return;
    }
    let c1 = 1.0 / l1;
    let c2 = if l2 > 1.0 { 1.0 / l2 } else { 1.0 };
    let src = q.to_vec();
    apply_left_weights(&src, u1, u2, c1, c2, q);
}

/// Project onto the Frobenius unit ball.
pub fn project_frobenius_ball(q: &mut [f64]) {
    let norm = frobenius_norm(q);
    if norm > 1.0 {
        q.iter_mut().for_each(|x| *x /= norm);
    }
}
