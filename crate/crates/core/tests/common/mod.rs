#![allow(dead_code)]

use lingrow::ImageField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Three-channel piecewise-constant scene (background, rectangle, disk) plus
/// seeded Gaussian noise.
pub fn noisy_scene(height: usize, width: usize, sigma: f64, seed: u64) -> ImageField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let (h, w) = (height as f64, width as f64);
    ImageField::from_fn(height, width, 3, |i, j, k| {
        let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
        let in_rect = y > 0.15 * h && y < 0.6 * h && x > 0.1 * w && x < 0.55 * w;
        let in_disk = (y - 0.65 * h).powi(2) + (x - 0.65 * w).powi(2) < (0.25 * h.min(w)).powi(2);
        let colour = if in_disk {
            [0.9, 0.3, 0.2]
        } else if in_rect {
            [0.2, 0.7, 0.4]
        } else {
            [0.1, 0.2, 0.8]
        };
        colour[k] + noise.sample(&mut rng)
    })
}

/// Exact minimizer of `Σ|u_{k+1} - u_k| + (λ/2) Σ (u_k - f_k)²` for piecewise-constant
/// 1-D data, by exhaustive search over sign patterns on the jump lattice of `f`.
///
/// For each pattern in {-1, 0, +1}^(jumps) the zero entries merge neighbouring
/// segments and the signs fix the subgradient, which gives every group value in
/// closed form; the best candidate under the true objective is the minimizer.
pub fn tv1d_exhaustive(f: &[f64], lambda: f64) -> Vec<f64> {
    let mut segments: Vec<(f64, usize)> = Vec::new();
    for &v in f {
        match segments.last_mut() {
            Some((value, len)) if *value == v => *len += 1,
            _ => segments.push((v, 1)),
        }
    }
    let k = segments.len();
    let weight = 1.0 / lambda;
    let objective = |x: &[f64]| -> f64 {
        let fid: f64 = segments.iter().zip(x).map(|((v, n), xi)| 0.5 * *n as f64 * (xi - v).powi(2)).sum();
        let tv: f64 = x.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        fid + weight * tv
    };
    let mut best = segments.iter().map(|s| s.0).collect::<Vec<_>>();
    let mut best_value = objective(&best);
    for code in 0..3usize.pow((k - 1) as u32) {
        let mut signs = Vec::with_capacity(k - 1);
        let mut c = code;
        for _ in 0..k - 1 {
            signs.push(c as f64 % 3.0 - 1.0);
            c /= 3;
        }
        // Groups of segments joined by zero-sign boundaries.
        let mut x = vec![0.0; k];
        let mut start = 0;
        while start < k {
            let mut end = start;
            while end + 1 < k && signs[end] == 0.0 {
                end += 1;
            }
            let total: f64 = segments[start..=end].iter().map(|s| s.1 as f64).sum();
            let mean = segments[start..=end].iter().map(|s| s.0 * s.1 as f64).sum::<f64>() / total;
            let before = if start > 0 { signs[start - 1] } else { 0.0 };
            let after = if end + 1 < k { signs[end] } else { 0.0 };
            let value = mean - weight * (before - after) / total;
            x[start..=end].iter_mut().for_each(|xi| *xi = value);
            start = end + 1;
        }
        let v = objective(&x);
        if v < best_value {
            best_value = v;
            best = x;
        }
    }
    segments
        .iter()
        .zip(&best)
        .flat_map(|((_, n), x)| std::iter::repeat_n(*x, *n))
        .collect()
}

/// Largest violation of the optimality conditions of the 1-D TV problem at `u`:
/// with `r = λ(f - u)` and `s_k = -Σ_{j≤k} r_j`, a minimizer has `|s| ≤ 1`,
/// `s_{W-1} = 0` and `s_k = sign(u_{k+1} - u_k)` wherever `u` jumps.
pub fn tv1d_kkt_violation(f: &[f64], u: &[f64], lambda: f64) -> f64 {
    let mut s = 0.0;
    let mut worst: f64 = 0.0;
    for k in 0..f.len() {
        s -= lambda * (f[k] - u[k]);
        if k + 1 == f.len() {
            worst = worst.max(s.abs());
        } else {
            worst = worst.max(s.abs() - 1.0);
            let jump = u[k + 1] - u[k];
            if jump.abs() > 1e-9 {
                worst = worst.max((s - jump.signum()).abs());
            }
        }
    }
    worst
}

/// Random piecewise-constant 1-D signal with `pieces` segments.
pub fn piecewise_signal(len: usize, pieces: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cuts: Vec<usize> = Vec::new();
    while cuts.len() < pieces - 1 {
        let c = rng.random_range(1..len);
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.sort_unstable();
    let values: Vec<f64> = (0..pieces).map(|_| (rng.random_range(0..=100) as f64) / 100.0).collect();
    (0..len).map(|i| values[cuts.iter().filter(|&&c| c <= i).count()]).collect()
}

/// Random orthogonal `n × n` matrix, row-major.
pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    let a = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    (0..n * n).map(|i| q[(i / n, i % n)]).collect()
}

/// `q · p · r` for a `2 × n` matrix `p`, `q` 2×2 and `r` n×n, all row-major.
pub fn rotate(p: &[f64], q: &[f64], r: &[f64]) -> Vec<f64> {
    let n = p.len() / 2;
    let mut qp = vec![0.0; 2 * n];
    for row in 0..2 {
        for k in 0..n {
            qp[row * n + k] = q[row * 2] * p[k] + q[row * 2 + 1] * p[n + k];
        }
    }
    let mut out = vec![0.0; 2 * n];
    for row in 0..2 {
        for k in 0..n {
            out[row * n + k] = (0..n).map(|l| qp[row * n + l] * r[l * n + k]).sum();
        }
    }
    out
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    use rand::Rng;
    (0..2 * n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}
