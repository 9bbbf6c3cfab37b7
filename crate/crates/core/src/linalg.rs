//! Dense kernels behind the nuclear-norm prox: Householder QR, one-sided
//! Jacobi SVD, the Gaussian-sketch randomized SVD and singular-value
//! thresholding built on top of it.
//!
//! Matrices are plain `ndarray` arrays. The factorizations copy their input
//! into column-major scratch buffers so that the inner loops run over
//! contiguous memory.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type DenseMatrix = Array2<f64>;

/// Extra sketch columns drawn beyond the requested rank.
pub const OVERSAMPLE: usize = 5;

/// Fresh Gaussian sketches tried before falling back to the exact SVD.
pub const SKETCH_RETRIES: usize = 3;

/// Below this min-dimension `randomized_svt` skips sketching entirely.
pub const EXACT_SVT_MAX_DIM: usize = 32;

const JACOBI_MAX_SWEEPS: usize = 80;
const JACOBI_TOL: f64 = 1e-15;
const QR_PIVOT_TOL: f64 = 1e-12;

/// Seed for the deterministic generator used by every randomized routine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Derives an independent stream for sub-task `index`.
    pub fn child(self, index: u64) -> RngSeed {
        // splitmix64 finalizer over (seed, index)
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

/// Thin singular value decomposition `A ≈ U diag(S) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub s: Array1<f64>,
    pub v: DenseMatrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U diag(S) Vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (mut col, &s) in us.axis_iter_mut(Axis(1)).zip(self.s.iter()) {
            col *= s;
        }
        us.dot(&self.v.t())
    }

    pub fn truncate(mut self, k: usize) -> SvdFactors {
        let k = k.min(self.s.len());
        self.u = self.u.slice(ndarray::s![.., ..k]).to_owned();
        self.v = self.v.slice(ndarray::s![.., ..k]).to_owned();
        self.s = self.s.slice(ndarray::s![..k]).to_owned();
        self
    }
}

pub fn frobenius_norm(a: &ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Count of singular values above `1e-8 · σ₁`.
pub fn numerical_rank(s: &Array1<f64>) -> usize {
    let top = s.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > 1e-8 * top).count()
}

/// Matrix of i.i.d. standard normal draws.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: RngSeed) -> DenseMatrix {
    let mut rng = seed.rng();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches length")
}

/// `G₁ G₂ + noise · G₃` with Gaussian `G₁` (rows × rank), `G₂`
/// (rank × cols) and `G₃` (rows × cols).
pub fn noisy_low_rank(rows: usize, cols: usize, rank: usize, noise: f64, seed: RngSeed) -> DenseMatrix {
    let mut a = gaussian_matrix(rows, rank, seed.child(0)).dot(&gaussian_matrix(rank, cols, seed.child(1)));
    if noise != 0.0 {
        a.scaled_add(noise, &gaussian_matrix(rows, cols, seed.child(2)));
    }
    a
}

// Column-major scratch matrix.
struct ColMajor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ColMajor {
    fn from_view(a: &ArrayView2<f64>) -> Self {
        let (rows, cols) = a.dim();
        let mut data = Vec::with_capacity(rows * cols);
        for col in a.axis_iter(Axis(1)) {
            data.extend(col.iter());
        }
        ColMajor { rows, cols, data }
    }

    fn from_transpose(a: &ArrayView2<f64>) -> Self {
        let (rows, cols) = a.dim();
        let mut data = Vec::with_capacity(rows * cols);
        for row in a.axis_iter(Axis(0)) {
            data.extend(row.iter());
        }
        ColMajor {
            rows: cols,
            cols: rows,
            data,
        }
    }

    fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        ColMajor {
            rows: n,
            cols: n,
            data,
        }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    fn two_cols_mut(&mut self, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(i < j);
        let r = self.rows;
        let (lo, hi) = self.data.split_at_mut(j * r);
        (&mut lo[i * r..(i + 1) * r], &mut hi[..r])
    }

    fn to_array(&self) -> DenseMatrix {
        Array2::from_shape_fn((self.rows, self.cols), |(i, j)| self.data[j * self.rows + i])
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Householder reflectors of a tall column-major matrix. After the call the
// strict upper triangle of `a` (rows < column) holds R, `diag` holds R's
// diagonal and `vs`/`taus` hold the reflectors.
struct Householder {
    rows: usize,
    cols: usize,
    vs: Vec<Vec<f64>>,
    taus: Vec<f64>,
    r: ColMajor,
}

fn householder(mut a: ColMajor) -> Householder {
    let (m, k) = (a.rows, a.cols);
    let mut vs = Vec::with_capacity(k);
    let mut taus = Vec::with_capacity(k);
    for j in 0..k {
        let x = &a.col(j)[j..];
        let norm = dot(x, x).sqrt();
        let mut v = x.to_vec();
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vv = dot(&v, &v);
        let tau = if vv > 0.0 { 2.0 / vv } else { 0.0 };
        if tau != 0.0 {
            for c in j..k {
                let col = &mut a.col_mut(c)[j..];
                let w = tau * dot(&v, col);
                for (ci, vi) in col.iter_mut().zip(&v) {
                    *ci -= w * vi;
                }
            }
        }
        vs.push(v);
        taus.push(tau);
    }
    let mut r = ColMajor {
        rows: k,
        cols: k,
        data: vec![0.0; k * k],
    };
    for c in 0..k {
        for i in 0..=c {
            r.data[c * k + i] = a.data[c * m + i];
        }
    }
    Householder {
        rows: m,
        cols: k,
        vs,
        taus,
        r,
    }
}

impl Householder {
    // Q · C for a k-row matrix C, with Q the thin m×k orthonormal factor.
    fn apply_q(&self, c: &ColMajor) -> ColMajor {
        debug_assert_eq!(c.rows, self.cols);
        let m = self.rows;
        let mut out = ColMajor {
            rows: m,
            cols: c.cols,
            data: vec![0.0; m * c.cols],
        };
        for col in 0..c.cols {
            out.col_mut(col)[..c.rows].copy_from_slice(c.col(col));
        }
        for j in (0..self.cols).rev() {
            let tau = self.taus[j];
            if tau == 0.0 {
                continue;
            }
            let v = &self.vs[j];
            for col in 0..out.cols {
                let seg = &mut out.col_mut(col)[j..];
                let w = tau * dot(v, seg);
                if w != 0.0 {
                    for (si, vi) in seg.iter_mut().zip(v) {
                        *si -= w * vi;
                    }
                }
            }
        }
        out
    }
}

/// Thin QR `A = QR` with `Q` orthonormal (m×k) and `R` upper-triangular with
/// a non-negative diagonal.
pub fn qr_thin(a: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let (m, k) = a.dim();
    if m < k || k == 0 {
        return Err(Error::DimensionMismatch(format!(
            "qr_thin needs rows >= cols >= 1, got {m}x{k}"
        )));
    }
    let fro = frobenius_norm(&a.view());
    let h = householder(ColMajor::from_view(&a.view()));
    for j in 0..k {
        let pivot = h.r.data[j * k + j].abs();
        if fro == 0.0 || pivot < QR_PIVOT_TOL * fro {
            return Err(Error::RankDeficient { column: j, pivot });
        }
    }
    let mut q = h.apply_q(&ColMajor::identity(k));
    let mut r = h.r;
    for j in 0..k {
        if r.data[j * k + j] < 0.0 {
            for c in j..k {
                r.data[c * k + j] = -r.data[c * k + j];
            }
            for x in q.col_mut(j) {
                *x = -*x;
            }
        }
    }
    Ok((q.to_array(), r.to_array()))
}

// One-sided Jacobi on the columns of `g` (rows ≥ cols). On return the
// columns of `g` are mutually orthogonal and `v` holds the accumulated
// rotations, so that G_in · V = G_out.
fn jacobi_orthogonalize(g: &mut ColMajor) -> Result<ColMajor> {
    let n = g.cols;
    let mut v = ColMajor::identity(n);
    let mut norms: Vec<f64> = (0..n).map(|j| dot(g.col(j), g.col(j))).collect();
    // columns below this squared norm are round-off and are left alone
    let floor = (f64::EPSILON * n as f64).powi(2) * norms.iter().sum::<f64>();
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let (alpha, beta) = (norms[i], norms[j]);
                if alpha <= floor || beta <= floor {
                    continue;
                }
                let (gi, gj) = g.two_cols_mut(i, j);
                let gamma = dot(gi, gj);
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in gi.iter_mut().zip(gj.iter_mut()) {
                    let (xi, yj) = (*x, *y);
                    *x = c * xi - s * yj;
                    *y = s * xi + c * yj;
                }
                norms[i] = dot(gi, gi);
                norms[j] = dot(gj, gj);
                let (vi, vj) = v.two_cols_mut(i, j);
                for (x, y) in vi.iter_mut().zip(vj.iter_mut()) {
                    let (xi, yj) = (*x, *y);
                    *x = c * xi - s * yj;
                    *y = s * xi + c * yj;
                }
            }
        }
        if !rotated {
            return Ok(v);
        }
    }
    Err(Error::ConvergenceFailure {
        sweeps: JACOBI_MAX_SWEEPS,
    })
}

// Completes the columns in `basis` flagged as missing to an orthonormal set.
fn complete_orthonormal(basis: &mut ColMajor, present: &[bool]) {
    let n = basis.rows;
    let mut candidate = 0;
    for j in 0..basis.cols {
        if present[j] {
            continue;
        }
        loop {
            assert!(candidate < n, "cannot complete orthonormal basis");
            let mut e = vec![0.0; n];
            e[candidate] = 1.0;
            candidate += 1;
            // two passes of Gram-Schmidt against the columns already fixed
            for _ in 0..2 {
                for o in 0..basis.cols {
                    if o == j || !(present[o] || o < j) {
                        continue;
                    }
                    let col = basis.col(o);
                    let p = dot(col, &e);
                    for (ei, ci) in e.iter_mut().zip(col) {
                        *ei -= p * ci;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-6 {
                for (dst, x) in basis.col_mut(j).iter_mut().zip(&e) {
                    *dst = x / norm;
                }
                break;
            }
        }
    }
}

// SVD of a tall column-major matrix (rows ≥ cols): returns (U rows×cols,
// S, V cols×cols) with S sorted non-increasing.
fn svd_tall(a: ColMajor) -> Result<(ColMajor, Vec<f64>, ColMajor)> {
    let (m, n) = (a.rows, a.cols);
    if m > n + n / 4 {
        // QR first, then Jacobi on Rᵀ: Rᵀ·W = Ũ Σ, so R = W Σ Ũᵀ and
        // A = (Q W) Σ Ũᵀ.
        let h = householder(a);
        let mut rt = ColMajor::from_transpose(&h.r.to_array().view());
        let w = jacobi_orthogonalize(&mut rt)?;
        let (u_tilde, s, order) = normalize_columns(&rt);
        let w_sorted = permute_columns(&w, &order);
        let u = h.apply_q(&w_sorted);
        Ok((u, s, u_tilde))
    } else {
        let mut g = a;
        let v = jacobi_orthogonalize(&mut g)?;
        let (u, s, order) = normalize_columns(&g);
        Ok((u, s, permute_columns(&v, &order)))
    }
}

// Splits orthogonal columns into unit vectors and norms, sorted by norm.
fn normalize_columns(g: &ColMajor) -> (ColMajor, Vec<f64>, Vec<usize>) {
    let n = g.cols;
    let norms: Vec<f64> = (0..n).map(|j| dot(g.col(j), g.col(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let top = order.first().map(|&j| norms[j]).unwrap_or(0.0);
    let mut u = ColMajor {
        rows: g.rows,
        cols: n,
        data: vec![0.0; g.rows * n],
    };
    let mut present = vec![false; n];
    let mut s = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        // columns at roundoff level carry no direction information
        if sigma > 0.0 && sigma > top * 1e-14 * (g.rows as f64) {
            for (x, y) in u.col_mut(dst).iter_mut().zip(g.col(src)) {
                *x = y / sigma;
            }
            present[dst] = true;
            s.push(sigma);
        } else {
            s.push(sigma);
        }
    }
    if present.iter().any(|p| !p) {
        complete_orthonormal(&mut u, &present);
    }
    (u, s, order)
}

fn permute_columns(a: &ColMajor, order: &[usize]) -> ColMajor {
    let mut out = ColMajor {
        rows: a.rows,
        cols: order.len(),
        data: Vec::with_capacity(a.rows * order.len()),
    };
    for &src in order {
        out.data.extend_from_slice(a.col(src));
    }
    out
}

/// Full thin SVD with `min(m, n)` triplets by one-sided Jacobi.
pub fn svd_exact(a: &DenseMatrix) -> Result<SvdFactors> {
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return Err(Error::DimensionMismatch(format!("empty matrix {m}x{n}")));
    }
    if m >= n {
        let (u, s, v) = svd_tall(ColMajor::from_view(&a.view()))?;
        Ok(SvdFactors {
            u: u.to_array(),
            s: Array1::from(s),
            v: v.to_array(),
        })
    } else {
        let (u, s, v) = svd_tall(ColMajor::from_transpose(&a.view()))?;
        Ok(SvdFactors {
            u: v.to_array(),
            s: Array1::from(s),
            v: u.to_array(),
        })
    }
}

/// Deterministic top-`k_req` SVD of a (small) matrix.
pub fn svd_small(b: &DenseMatrix, k_req: usize) -> Result<SvdFactors> {
    let (k, n) = b.dim();
    if k_req > k.min(n) {
        return Err(Error::InvalidInput(format!(
            "requested {k_req} singular triplets from a {k}x{n} matrix"
        )));
    }
    Ok(svd_exact(b)?.truncate(k_req))
}

/// Approximate rank-`k` SVD from a Gaussian range sketch.
pub fn randomized_svd(a: &DenseMatrix, k: usize, seed: RngSeed) -> Result<SvdFactors> {
    let (m, n) = a.dim();
    let min_dim = m.min(n);
    if k == 0 || k > min_dim {
        return Err(Error::InvalidInput(format!(
            "rank {k} outside 1..={min_dim} for a {m}x{n} matrix"
        )));
    }
    let width = (k + OVERSAMPLE).min(min_dim);
    for attempt in 0..=SKETCH_RETRIES {
        let omega = gaussian_matrix(n, width, seed.child(attempt as u64));
        let y = a.dot(&omega);
        let q = match qr_thin(&y) {
            Ok((q, _)) => q,
            Err(Error::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        };
        let b = q.t().dot(a);
        let f = svd_small(&b, k)?;
        return Ok(SvdFactors {
            u: q.dot(&f.u),
            s: f.s,
            v: f.v,
        });
    }
    svd_small(a, k)
}

/// Singular-value thresholding `U diag((S − rho)₊) Vᵀ` with a growing
/// randomized SVD. The returned factors keep only triplets with `S > rho`,
/// already shrunk by `rho`.
pub fn randomized_svt(
    a: &DenseMatrix,
    rho: f64,
    k0: usize,
    seed: RngSeed,
) -> Result<(DenseMatrix, SvdFactors)> {
    randomized_svt_with(a, rho, k0, seed, EXACT_SVT_MAX_DIM)
}

/// `randomized_svt` with an explicit exact-SVD crossover: matrices whose
/// smaller side is at most `exact_below` are decomposed exactly.
pub fn randomized_svt_with(
    a: &DenseMatrix,
    rho: f64,
    k0: usize,
    seed: RngSeed,
    exact_below: usize,
) -> Result<(DenseMatrix, SvdFactors)> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidInput(format!("threshold {rho} must be >= 0")));
    }
    let (m, n) = a.dim();
    let min_dim = m.min(n);
    let factors = if min_dim <= exact_below {
        svd_exact(a)?
    } else {
        let mut k = k0.clamp(1, min_dim);
        let mut round = 0u64;
        loop {
            let f = if k == min_dim {
                svd_exact(a)?
            } else {
                randomized_svd(a, k, seed.child(round))?
            };
            let smallest = f.s.iter().cloned().fold(f64::INFINITY, f64::min);
            if k == min_dim || smallest <= rho {
                break f;
            }
            k = (((1.5 * (k + 1) as f64).ceil()) as usize).min(min_dim);
            round += 1;
        }
    };
    let keep = factors.s.iter().take_while(|&&s| s > rho).count();
    let mut shrunk = factors.truncate(keep);
    shrunk.s.mapv_inplace(|s| s - rho);
    let result = if keep == 0 {
        Array2::zeros((m, n))
    } else {
        shrunk.reconstruct()
    };
    Ok((result, shrunk))
}
