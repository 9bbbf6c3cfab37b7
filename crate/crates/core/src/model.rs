//! The latent-effect multinomial logit: data, parameters, the smooth loss
//! and the penalized objective.
//!
//! Sample `n` with features `x` has class-`j` propensity
//! `alpha[j] + x·U[:, j] + x·υ_n^(j)`, where `υ_n^(j)` is the class-`j`
//! segment (length `p`) of column `n` of the heterogeneity matrix. Column `n`
//! stacks the `I` segments contiguously, so the matrix is `pI × N`.
//!
//! Class labels are zero-based indices `0..I` throughout the library; the
//! CSV layer converts from the one-based labels used in files.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, svd_exact, DenseMatrix, SvdFactors};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = features.dim();
        if n == 0 || p == 0 {
            return Err(Error::InvalidInput(format!(
                "dataset needs at least one sample and one feature, got {n}x{p}"
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {n} samples",
                labels.len()
            )));
        }
        if feature_names.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} feature names for {p} features",
                feature_names.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {l} of sample {i} outside 0..{num_classes}"
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            feature_names,
        })
    }

    /// Dataset with generated names `x1..xp`.
    pub fn unnamed(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let names = (1..=features.ncols()).map(|i| format!("x{i}")).collect();
        Self::new(features, labels, num_classes, names)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(features, labels, self.num_classes, self.feature_names.clone())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Storage of the `pI × N` heterogeneity matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Heterogeneity {
    Dense(DenseMatrix),
    /// Thin SVD; the nuclear norm is the sum of the stored singular values.
    Factored(SvdFactors),
}

impl Heterogeneity {
    pub fn dim(&self) -> (usize, usize) {
        match self {
            Heterogeneity::Dense(m) => m.dim(),
            Heterogeneity::Factored(f) => (f.u.nrows(), f.v.nrows()),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            Heterogeneity::Dense(m) => m.clone(),
            Heterogeneity::Factored(f) => f.reconstruct(),
        }
    }

    pub fn column(&self, n: usize) -> Array1<f64> {
        match self {
            Heterogeneity::Dense(m) => m.column(n).to_owned(),
            Heterogeneity::Factored(f) => {
                let weights = &f.v.row(n) * &f.s;
                f.u.dot(&weights)
            }
        }
    }

    pub fn nuclear_norm(&self) -> Result<f64> {
        match self {
            Heterogeneity::Dense(m) => {
                if m.iter().all(|&x| x == 0.0) {
                    Ok(0.0)
                } else {
                    Ok(svd_exact(m)?.s.sum())
                }
            }
            Heterogeneity::Factored(f) => Ok(f.s.sum()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Heterogeneity::Dense(m) => m.iter().all(|&x| x == 0.0),
            Heterogeneity::Factored(f) => f.s.iter().all(|&s| s == 0.0),
        }
    }
}

/// Intercepts, homogeneous effects `U` (p × I) and heterogeneity (pI × N).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub alpha: Array1<f64>,
    pub u: DenseMatrix,
    pub upsilon: Heterogeneity,
}

impl ModelParams {
    pub fn zeros(n_features: usize, num_classes: usize, n_samples: usize) -> Self {
        ModelParams {
            alpha: Array1::zeros(num_classes),
            u: Array2::zeros((n_features, num_classes)),
            upsilon: Heterogeneity::Dense(Array2::zeros((n_features * num_classes, n_samples))),
        }
    }

    pub fn zeros_for(dataset: &Dataset) -> Self {
        Self::zeros(dataset.n_features(), dataset.num_classes(), dataset.n_samples())
    }

    /// Intercept-only maximum-likelihood fit: `softmax(alpha)` equals the
    /// empirical class frequencies. Absent classes get a very negative
    /// intercept instead of `-inf`.
    pub fn intercept_only(dataset: &Dataset) -> Self {
        let n = dataset.n_samples() as f64;
        let mut alpha: Array1<f64> = dataset
            .class_counts()
            .iter()
            .map(|&c| if c > 0 { (c as f64 / n).ln() } else { -40.0 })
            .collect();
        let mean = alpha.mean().unwrap_or(0.0);
        alpha -= mean;
        let mut params = Self::zeros_for(dataset);
        params.alpha = alpha;
        params
    }

    pub fn n_features(&self) -> usize {
        self.u.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_samples(&self) -> usize {
        self.upsilon.dim().1
    }

    pub fn check_shape(&self) -> Result<()> {
        let (p, classes) = self.u.dim();
        if classes != self.alpha.len() {
            return Err(Error::DimensionMismatch(format!(
                "alpha has {} classes, U has {classes}",
                self.alpha.len()
            )));
        }
        if self.upsilon.dim().0 != p * classes {
            return Err(Error::DimensionMismatch(format!(
                "heterogeneity has {} rows, expected {}",
                self.upsilon.dim().0,
                p * classes
            )));
        }
        if let Heterogeneity::Factored(f) = &self.upsilon {
            let r = f.s.len();
            if f.u.ncols() != r || f.v.ncols() != r || r > p * classes || r > f.v.nrows() {
                return Err(Error::DimensionMismatch(
                    "inconsistent factored heterogeneity".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        self.check_shape()?;
        if self.n_features() != dataset.n_features()
            || self.num_classes() != dataset.num_classes()
            || self.n_samples() != dataset.n_samples()
        {
            return Err(Error::DimensionMismatch(format!(
                "params ({}, {}, {}) vs dataset ({}, {}, {}) in (p, I, N)",
                self.n_features(),
                self.num_classes(),
                self.n_samples(),
                dataset.n_features(),
                dataset.num_classes(),
                dataset.n_samples()
            )));
        }
        Ok(())
    }

    /// Copy with dense heterogeneity.
    pub fn densified(&self) -> ModelParams {
        ModelParams {
            alpha: self.alpha.clone(),
            u: self.u.clone(),
            upsilon: Heterogeneity::Dense(self.upsilon.to_dense()),
        }
    }

    /// Copy in the storage used for persistence: factored SVD form when the
    /// rank (singular values above round-off) is below a quarter of
    /// `min(pI, N)`, dense otherwise.
    pub fn compacted(&self) -> Result<ModelParams> {
        let dense = self.upsilon.to_dense();
        let (rows, cols) = dense.dim();
        let svd = svd_exact(&dense)?;
        let top = svd.s.iter().cloned().fold(0.0, f64::max);
        let rank = svd.s.iter().filter(|&&x| x > 1e-13 * top).count();
        let upsilon = if 4 * rank < rows.min(cols) {
            Heterogeneity::Factored(svd.truncate(rank))
        } else {
            Heterogeneity::Dense(dense)
        };
        Ok(ModelParams {
            alpha: self.alpha.clone(),
            u: self.u.clone(),
            upsilon,
        })
    }
}

/// Non-negative weights of the group-ℓ1 and nuclear-norm penalties.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PenaltyPair {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl PenaltyPair {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0) || !lambda1.is_finite() || !lambda2.is_finite() {
            return Err(Error::InvalidInput(format!(
                "penalties must be finite and >= 0, got ({lambda1}, {lambda2})"
            )));
        }
        Ok(PenaltyPair { lambda1, lambda2 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientTriple {
    pub d_alpha: Array1<f64>,
    pub d_u: DenseMatrix,
    pub d_upsilon: DenseMatrix,
}

/// Where the heterogeneity of an observation comes from.
#[derive(Debug, Clone, Copy)]
pub enum HeterogeneitySource<'a> {
    /// Column `n` of the fitted heterogeneity matrix.
    Sample(usize),
    /// A caller-supplied length-`pI` vector (e.g. for unseen observations).
    Vector(ArrayView1<'a, f64>),
    /// No heterogeneity: homogeneous propensities only.
    Absent,
}

fn resolve_upsilon(params: &ModelParams, source: HeterogeneitySource) -> Result<Option<Array1<f64>>> {
    let len = params.n_features() * params.num_classes();
    match source {
        HeterogeneitySource::Sample(n) => {
            let limit = params.n_samples();
            if n >= limit {
                return Err(Error::IndexOutOfRange { index: n, limit });
            }
            Ok(Some(params.upsilon.column(n)))
        }
        HeterogeneitySource::Vector(v) => {
            if v.len() != len {
                return Err(Error::DimensionMismatch(format!(
                    "heterogeneity vector has length {}, expected {len}",
                    v.len()
                )));
            }
            Ok(Some(v.to_owned()))
        }
        HeterogeneitySource::Absent => Ok(None),
    }
}

/// All `I` propensities of one observation.
pub fn propensities(
    params: &ModelParams,
    x: ArrayView1<f64>,
    source: HeterogeneitySource,
) -> Result<Array1<f64>> {
    let p = params.n_features();
    if x.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "feature vector has length {}, expected {p}",
            x.len()
        )));
    }
    let upsilon = resolve_upsilon(params, source)?;
    let mut v = &params.alpha + &x.dot(&params.u);
    if let Some(ups) = upsilon {
        for (j, vj) in v.iter_mut().enumerate() {
            *vj += x.dot(&ups.slice(ndarray::s![j * p..(j + 1) * p]));
        }
    }
    Ok(v)
}

/// Propensity of `class` for one observation.
pub fn propensity(
    params: &ModelParams,
    x: ArrayView1<f64>,
    class: usize,
    source: HeterogeneitySource,
) -> Result<f64> {
    let classes = params.num_classes();
    if class >= classes {
        return Err(Error::IndexOutOfRange {
            index: class,
            limit: classes,
        });
    }
    Ok(propensities(params, x, source)?[class])
}

/// Max-shifted softmax.
pub fn softmax(v: ArrayView1<f64>) -> Array1<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e = v.mapv(|x| (x - max).exp());
    let total = e.sum();
    e /= total;
    e
}

fn log_sum_exp(v: ArrayView1<f64>) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn class_probabilities(
    params: &ModelParams,
    x: ArrayView1<f64>,
    source: HeterogeneitySource,
) -> Result<Array1<f64>> {
    Ok(softmax(propensities(params, x, source)?.view()))
}

/// `N × I` propensities of every training sample, with dense heterogeneity.
pub(crate) fn linear_predictors(
    x: &Array2<f64>,
    alpha: &Array1<f64>,
    u: &DenseMatrix,
    upsilon: &DenseMatrix,
) -> Array2<f64> {
    let p = x.ncols();
    let mut v = x.dot(u);
    v += alpha;
    for (j, mut col) in v.axis_iter_mut(Axis(1)).enumerate() {
        for i in 0..p {
            Zip::from(&mut col)
                .and(x.column(i))
                .and(upsilon.row(j * p + i))
                .for_each(|c, &xi, &h| *c += xi * h);
        }
    }
    v
}

pub(crate) fn nll_from_predictors(dataset: &Dataset, v: &Array2<f64>) -> f64 {
    let total: f64 = v
        .axis_iter(Axis(0))
        .zip(dataset.labels())
        .map(|(row, &t)| log_sum_exp(row) - row[t])
        .sum();
    total / dataset.n_samples() as f64
}

/// Mean negative log-likelihood.
pub fn nll(dataset: &Dataset, params: &ModelParams) -> Result<f64> {
    params.check_dataset(dataset)?;
    let upsilon = params.upsilon.to_dense();
    let v = linear_predictors(dataset.features(), &params.alpha, &params.u, &upsilon);
    Ok(nll_from_predictors(dataset, &v))
}

pub(crate) fn gradient_from_predictors(dataset: &Dataset, v: &Array2<f64>) -> GradientTriple {
    let n = dataset.n_samples();
    let p = dataset.n_features();
    let classes = dataset.num_classes();
    let inv_n = 1.0 / n as f64;
    let mut residual = Array2::zeros((n, classes));
    for ((mut r, row), &t) in residual
        .axis_iter_mut(Axis(0))
        .zip(v.axis_iter(Axis(0)))
        .zip(dataset.labels())
    {
        r.assign(&softmax(row));
        r[t] -= 1.0;
    }
    let x = dataset.features();
    let d_alpha = residual.sum_axis(Axis(0)) * inv_n;
    let d_u = x.t().dot(&residual) * inv_n;
    let mut d_upsilon = Array2::zeros((p * classes, n));
    for j in 0..classes {
        for i in 0..p {
            Zip::from(d_upsilon.row_mut(j * p + i))
                .and(residual.column(j))
                .and(x.column(i))
                .for_each(|d, &r, &xi| *d = r * xi * inv_n);
        }
    }
    GradientTriple {
        d_alpha,
        d_u,
        d_upsilon,
    }
}

/// Gradient of the mean negative log-likelihood in (alpha, U, heterogeneity).
pub fn nll_gradient(dataset: &Dataset, params: &ModelParams) -> Result<GradientTriple> {
    params.check_dataset(dataset)?;
    let upsilon = params.upsilon.to_dense();
    let v = linear_predictors(dataset.features(), &params.alpha, &params.u, &upsilon);
    Ok(gradient_from_predictors(dataset, &v))
}

/// Sum of the Euclidean norms of the rows of `u`.
pub fn group_l1_norm(u: &DenseMatrix) -> f64 {
    u.axis_iter(Axis(0)).map(|row| row.dot(&row).sqrt()).sum()
}

/// `nll + λ1·Σ‖U_i‖ + λ2·‖Υ‖_*`.
pub fn objective(dataset: &Dataset, params: &ModelParams, penalties: PenaltyPair) -> Result<f64> {
    let loss = nll(dataset, params)?;
    let mut total = loss;
    if penalties.lambda1 != 0.0 {
        total += penalties.lambda1 * group_l1_norm(&params.u);
    }
    if penalties.lambda2 != 0.0 {
        total += penalties.lambda2 * params.upsilon.nuclear_norm()?;
    }
    Ok(total)
}

/// Upper bound on the Lipschitz constant of the loss gradient:
/// `λmax(mean of [1, x][1, x]ᵀ) + max‖x‖² / N`.
pub fn lipschitz_bound(dataset: &Dataset) -> Result<f64> {
    let x = dataset.features();
    let (n, p) = x.dim();
    let mut augmented = Array2::ones((n, p + 1));
    augmented.slice_mut(ndarray::s![.., 1..]).assign(x);
    augmented /= (n as f64).sqrt();
    let top = svd_exact(&augmented)?.s[0];
    let max_sq = x.axis_iter(Axis(0)).map(|r| r.dot(&r)).fold(0.0, f64::max);
    Ok(top * top + max_sq / n as f64)
}

/// Frobenius norm of the full parameter difference.
pub fn param_distance(a: &ModelParams, b: &ModelParams) -> f64 {
    let da = (&a.alpha - &b.alpha).mapv(|x| x * x).sum();
    let du = (&a.u - &b.u).mapv(|x| x * x).sum();
    let dv = frobenius_norm(&(a.upsilon.to_dense() - b.upsilon.to_dense()).view());
    (da + du + dv * dv).sqrt()
}
