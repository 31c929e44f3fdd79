//! Discrete image fields on a unit-spaced pixel grid, the forward-difference
//! gradient with Neumann boundary and its negative adjoint.
//!
//! Layout is row-major with channels interleaved: entry `(i, j, k)` (row, column,
//! channel) lives at `(i * width + j) * channels + k`. A Jacobian stores per pixel a
//! `2 × N` matrix, row 0 the x-derivative (along columns), row 1 the y-derivative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageField {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::Parameter(format!(
            "field dimensions must be positive, got {height}x{width}x{channels}"
        )));
    }
    Ok(())
}

impl ImageField {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {height}x{width}x{channels}", height * width * channels),
                found: format!("{} values", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite field entry at index {pos}")));
        }
        Ok(ImageField {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::constant(height, width, &vec![0.0; channels])
    }

    /// Every pixel set to `value` (one entry per channel).
    pub fn constant(height: usize, width: usize, value: &[f64]) -> Self {
        let channels = value.len();
        assert!(height > 0 && width > 0 && channels > 0, "field dimensions must be positive");
        let data = value.iter().copied().cycle().take(height * width * channels).collect();
        ImageField {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "field dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for k in 0..channels {
                    data.push(f(i, j, k));
                }
            }
        }
        ImageField {
            height,
            width,
            channels,
            data,
        }
    }

    /// Entries drawn uniformly from `[lo, hi)` with a seeded generator.
    pub fn random_uniform(height: usize, width: usize, channels: usize, lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(height, width, channels, |_, _, _| rng.random_range(lo..hi))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.width + j) * self.channels + k]
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let n = self.channels;
        let at = (i * self.width + j) * n;
        &self.data[at..at + n]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    pub(crate) fn pixels_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.channels)
    }

    pub fn same_shape(&self, other: &ImageField) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn require_shape(&self, other: &ImageField) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.shape()),
                found: format!("{:?}", other.shape()),
            })
        }
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &ImageField) -> ImageField {
        debug_assert!(self.same_shape(other));
        let mut out = self.clone();
        out.axpy(alpha, other);
        out
    }

    pub(crate) fn axpy(&mut self, alpha: f64, other: &ImageField) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> ImageField {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Raw Euclidean inner product over all entries.
    pub fn dot(&self, other: &ImageField) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Grid-averaged inner product `Σ a·b / (H·W)`.
    pub fn dot_avg(&self, other: &ImageField) -> f64 {
        self.dot(other) / self.pixel_count() as f64
    }

    /// Grid-averaged 2-norm `(Σ|a|² / (H·W))^{1/2}`.
    pub fn norm_avg(&self) -> f64 {
        self.dot_avg(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JacobianField {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl JacobianField {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "field dimensions must be positive");
        JacobianField {
            height,
            width,
            channels,
            data: vec![0.0; height * width * 2 * channels],
        }
    }

    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, channels)?;
        if data.len() != height * width * 2 * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", height * width * 2 * channels),
                found: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite Jacobian entry".into()));
        }
        Ok(JacobianField {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn random_uniform(height: usize, width: usize, channels: usize, lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Self::zeros(height, width, channels);
        out.data.iter_mut().for_each(|v| *v = rng.random_range(lo..hi));
        out
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Per-pixel `2 × N` matrix, rows contiguous.
    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let m = 2 * self.channels;
        let at = (i * self.width + j) * m;
        &self.data[at..at + m]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(2 * self.channels)
    }

    pub(crate) fn pixels_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(2 * self.channels)
    }

    pub fn dot(&self, other: &JacobianField) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Forward differences with replicate boundary: the difference across the last
/// column (row) is zero.
pub fn gradient(u: &ImageField) -> JacobianField {
    let (h, w, n) = u.shape();
    let mut out = JacobianField::zeros(h, w, n);
    let src = u.as_slice();
    for i in 0..h {
        for j in 0..w {
            let at = (i * w + j) * n;
            let dst = &mut out.data[(i * w + j) * 2 * n..(i * w + j + 1) * 2 * n];
            if j + 1 < w {
                for k in 0..n {
                    dst[k] = src[at + n + k] - src[at + k];
                }
            }
            if i + 1 < h {
                for k in 0..n {
                    dst[n + k] = src[at + w * n + k] - src[at + k];
                }
            }
        }
    }
    out
}

/// Negative adjoint of [`gradient`]: `⟨∇u, p⟩ = -⟨u, div p⟩`.
pub fn divergence(p: &JacobianField) -> ImageField {
    let (h, w, n) = p.shape();
    let mut out = ImageField::zeros(h, w, n);
    let m = 2 * n;
    for i in 0..h {
        for j in 0..w {
            let at = (i * w + j) * m;
            let dst = &mut out.data[(i * w + j) * n..(i * w + j + 1) * n];
            for k in 0..n {
                let mut acc = 0.0;
                if j + 1 < w {
                    acc += p.data[at + k];
                }
                if j > 0 {
                    acc -= p.data[at - m + k];
                }
                if i + 1 < h {
                    acc += p.data[at + n + k];
                }
                if i > 0 {
                    acc -= p.data[at - w * m + n + k];
                }
                dst[k] = acc;
            }
        }
    }
    out
}

/// Grid-averaged discrete `L^p` distance `(Σ_x |a(x) - b(x)|^p / (H·W))^{1/p}`,
/// with `|·|` the Euclidean norm over channels.
pub fn lp_distance(a: &ImageField, b: &ImageField, p: f64) -> Result<f64> {
    a.require_shape(b)?;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("L^p distance needs finite p >= 1, got {p}")));
    }
    let sum: f64 = a
        .pixels()
        .zip(b.pixels())
        .map(|(x, y)| {
            let d2: f64 = x.iter().zip(y).map(|(s, t)| (s - t) * (s - t)).sum();
            d2.sqrt().powf(p)
        })
        .sum();
    Ok((sum / a.pixel_count() as f64).powf(1.0 / p))
}

/// Power-iteration estimate of `‖∇‖²` (largest eigenvalue of `-div ∘ ∇`).
pub fn operator_norm_sq(height: usize, width: usize, channels: usize, iterations: usize, seed: u64) -> f64 {
    let mut v = ImageField::random_uniform(height, width, channels, -1.0, 1.0, seed);
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let norm = v.dot(&v).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = v.scaled(1.0 / norm);
        let next = divergence(&gradient(&v)).scaled(-1.0);
        estimate = v.dot(&next);
        v = next;
    }
    estimate
}
