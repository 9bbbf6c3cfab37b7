#![allow(dead_code)]

use latent_logit::linalg::{gaussian_matrix, svd_exact, DenseMatrix, RngSeed};
use latent_logit::model::{Dataset, Heterogeneity, ModelParams};
use ndarray::{Array1, Array2};
use rand::Rng;

/// Standard-normal features with uniformly drawn labels.
pub fn random_dataset(n: usize, p: usize, classes: usize, seed: u64) -> Dataset {
    let x = gaussian_matrix(n, p, RngSeed(seed).child(1));
    let mut rng = RngSeed(seed).child(2).rng();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::unnamed(x, labels, classes).unwrap()
}

/// Bernoulli(0.5) features with uniformly drawn labels.
pub fn binary_dataset(n: usize, p: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = RngSeed(seed).child(3).rng();
    let x = Array2::from_shape_fn((n, p), |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::unnamed(x, labels, classes).unwrap()
}

/// Dense parameters with entries drawn from `N(0, scale²)`.
pub fn random_params(p: usize, classes: usize, n: usize, scale: f64, seed: u64) -> ModelParams {
    let s = RngSeed(seed);
    ModelParams {
        alpha: gaussian_matrix(1, classes, s.child(10)).row(0).to_owned() * scale,
        u: gaussian_matrix(p, classes, s.child(11)) * scale,
        upsilon: Heterogeneity::Dense(gaussian_matrix(p * classes, n, s.child(12)) * scale),
    }
}

/// Soft-thresholding of the singular values of `a` through a full SVD.
pub fn exact_svt(a: &DenseMatrix, rho: f64) -> DenseMatrix {
    let mut f = svd_exact(a).unwrap();
    f.s.mapv_inplace(|s| (s - rho).max(0.0));
    f.reconstruct()
}

pub fn fro(a: &DenseMatrix) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn singular_values(a: &DenseMatrix) -> Array1<f64> {
    svd_exact(a).unwrap().s
}

/// Mean silhouette of `points` (one per row) under `labels`.
pub fn silhouette(points: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = points.nrows();
    let groups = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; groups];
        let mut counts = vec![0usize; groups];
        for j in 0..n {
            if i != j {
                let d = (&points.row(i) - &points.row(j)).mapv(|v| v * v).sum().sqrt();
                sums[labels[j]] += d;
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..groups)
            .filter(|&g| g != own && counts[g] > 0)
            .map(|g| sums[g] / counts[g] as f64)
            .fold(f64::INFINITY, f64::min);
        if a.max(b) > 0.0 && b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

/// Ordinary least-squares fit `y = a + b x`, returning `(a, b, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (my - slope * mx, slope, r2)
}
