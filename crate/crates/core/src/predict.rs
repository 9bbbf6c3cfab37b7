//! Prediction for unseen observations.
//!
//! A new observation borrows heterogeneity from its `k` most similar
//! training samples (cosine similarity of feature vectors), averaged with
//! the similarities as weights.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SvdFactors;
use crate::model::{class_probabilities, Dataset, Heterogeneity, HeterogeneitySource, ModelParams};

pub const DEFAULT_NEIGHBORS: usize = 10;
pub const FORMAT_VERSION: u32 = 1;

/// A fit bound to the training features it needs for neighbor queries.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    params: ModelParams,
    train_features: Array2<f64>,
    train_norms: Array1<f64>,
    k: usize,
    feature_names: Vec<String>,
}

impl FittedModel {
    pub fn new(
        params: ModelParams,
        train_features: Array2<f64>,
        k: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        params.check_shape()?;
        let (n, p) = train_features.dim();
        if p != params.n_features() || n != params.n_samples() {
            return Err(Error::DimensionMismatch(format!(
                "training features are {n}x{p}, params expect {}x{}",
                params.n_samples(),
                params.n_features()
            )));
        }
        if feature_names.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} feature names for {p} features",
                feature_names.len()
            )));
        }
        if k == 0 || k > n {
            return Err(Error::InvalidInput(format!("k = {k} must lie in 1..={n}")));
        }
        let train_norms = train_features
            .axis_iter(Axis(0))
            .map(|r| r.dot(&r).sqrt())
            .collect();
        Ok(FittedModel {
            params,
            train_features,
            train_norms,
            k,
            feature_names,
        })
    }

    /// Binds `params` to the dataset it was fitted on.
    pub fn from_fit(dataset: &Dataset, params: ModelParams, k: usize) -> Result<Self> {
        params.check_dataset(dataset)?;
        Self::new(
            params,
            dataset.features().clone(),
            k,
            dataset.feature_names().to_vec(),
        )
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn train_features(&self) -> &Array2<f64> {
        &self.train_features
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn num_classes(&self) -> usize {
        self.params.num_classes()
    }

    pub fn with_k(self, k: usize) -> Result<Self> {
        Self::new(self.params, self.train_features, k, self.feature_names)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnWarning {
    /// The query is the zero vector; the zero heterogeneity was returned.
    ZeroFeatureVector,
    /// Every neighbor had non-positive similarity; the plain mean was used.
    DegenerateNeighborhood,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnEstimate {
    pub heterogeneity: Array1<f64>,
    /// Training indices of the neighbors, nearest first.
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
    pub warning: Option<KnnWarning>,
}

fn cosine(x: ArrayView1<f64>, x_norm: f64, row: ArrayView1<f64>, row_norm: f64) -> f64 {
    if x_norm == 0.0 || row_norm == 0.0 {
        0.0
    } else {
        x.dot(&row) / (x_norm * row_norm)
    }
}

fn check_query(model: &FittedModel, x_new: ArrayView1<f64>) -> Result<()> {
    let p = model.params.n_features();
    if x_new.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "query has {} features, model has {p}",
            x_new.len()
        )));
    }
    if x_new.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite query feature".into()));
    }
    Ok(())
}

/// Heterogeneity estimate for `x_new` from its `k` nearest training samples
/// under the distance `1 − cos`.
pub fn knn_heterogeneity(x_new: ArrayView1<f64>, model: &FittedModel) -> Result<KnnEstimate> {
    check_query(model, x_new)?;
    let len = model.params.n_features() * model.params.num_classes();
    let x_norm = x_new.dot(&x_new).sqrt();
    if x_norm == 0.0 {
        return Ok(KnnEstimate {
            heterogeneity: Array1::zeros(len),
            neighbors: Vec::new(),
            weights: Vec::new(),
            warning: Some(KnnWarning::ZeroFeatureVector),
        });
    }
    let sims: Vec<f64> = model
        .train_features
        .axis_iter(Axis(0))
        .zip(model.train_norms.iter())
        .map(|(row, &norm)| cosine(x_new, x_norm, row, norm))
        .collect();
    let mut order: Vec<usize> = (0..sims.len()).collect();
    let by_distance = |&a: &usize, &b: &usize| (1.0 - sims[a]).total_cmp(&(1.0 - sims[b])).then(a.cmp(&b));
    let k = model.k;
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, by_distance);
        order.truncate(k);
    }
    order.sort_by(by_distance);

    let mut weights: Vec<f64> = order.iter().map(|&j| sims[j].max(0.0)).collect();
    let mut total: f64 = weights.iter().sum();
    let mut warning = None;
    if total == 0.0 {
        weights = vec![1.0; order.len()];
        total = order.len() as f64;
        warning = Some(KnnWarning::DegenerateNeighborhood);
    }
    let mut heterogeneity = Array1::zeros(len);
    for (&j, &w) in order.iter().zip(&weights) {
        if w != 0.0 {
            heterogeneity.scaled_add(w / total, &model.params.upsilon.column(j));
        }
    }
    Ok(KnnEstimate {
        heterogeneity,
        neighbors: order,
        weights,
        warning,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Zero-based class index.
    pub label: usize,
    pub probabilities: Array1<f64>,
    pub warning: Option<KnnWarning>,
}

/// Most probable class, lowest index on ties.
pub fn argmax(probs: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = j;
        }
    }
    best
}

pub fn predict_class(x_new: ArrayView1<f64>, model: &FittedModel) -> Result<Prediction> {
    let knn = knn_heterogeneity(x_new, model)?;
    let probabilities = class_probabilities(
        &model.params,
        x_new,
        HeterogeneitySource::Vector(knn.heterogeneity.view()),
    )?;
    Ok(Prediction {
        label: argmax(probabilities.view()),
        probabilities,
        warning: knn.warning,
    })
}

/// Predictions for every row of `features`, in row order.
pub fn predict_batch(features: &Array2<f64>, model: &FittedModel) -> Result<Vec<Prediction>> {
    let rows: Vec<usize> = (0..features.nrows()).collect();
    rows.par_iter()
        .map(|&i| predict_class(features.row(i), model))
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
enum UpsilonDoc {
    Dense {
        rows: usize,
        cols: usize,
        values: Vec<Vec<f64>>,
    },
    Factored {
        u: Vec<Vec<f64>>,
        s: Vec<f64>,
        v: Vec<Vec<f64>>,
    },
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format_version: u32,
    num_classes: usize,
    feature_names: Vec<String>,
    k: usize,
    alpha: Vec<f64>,
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
    upsilon: UpsilonDoc,
    train_features: Vec<Vec<f64>>,
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.axis_iter(Axis(0)).map(|r| r.to_vec()).collect()
}

fn matrix_from(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<Array2<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!("ragged rows in {what}")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat)
        .map_err(|e| Error::DimensionMismatch(format!("{what}: {e}")))
}

impl FittedModel {
    /// JSON document. Floats are written in shortest round-trip form, so
    /// reading the document back reproduces every value bit for bit.
    pub fn to_json(&self) -> Result<String> {
        let params = self.params.compacted()?;
        let upsilon = match &params.upsilon {
            Heterogeneity::Dense(m) => UpsilonDoc::Dense {
                rows: m.nrows(),
                cols: m.ncols(),
                values: rows_of(m),
            },
            Heterogeneity::Factored(f) => UpsilonDoc::Factored {
                u: rows_of(&f.u),
                s: f.s.to_vec(),
                v: rows_of(&f.v),
            },
        };
        let doc = ModelDoc {
            format_version: FORMAT_VERSION,
            num_classes: params.num_classes(),
            feature_names: self.feature_names.clone(),
            k: self.k,
            alpha: params.alpha.to_vec(),
            u: rows_of(&params.u),
            upsilon,
            train_features: rows_of(&self.train_features),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::InvalidInput("missing format_version".into()))?;
        if version != FORMAT_VERSION as u64 {
            return Err(Error::UnsupportedFormatVersion(
                version.min(u32::MAX as u64) as u32
            ));
        }
        let doc: ModelDoc = serde_json::from_value(value)?;
        let classes = doc.num_classes;
        let p = doc.feature_names.len();
        if doc.alpha.len() != classes {
            return Err(Error::DimensionMismatch(format!(
                "alpha has {} entries for {classes} classes",
                doc.alpha.len()
            )));
        }
        let u = matrix_from(&doc.u, classes, "U")?;
        let train_features = matrix_from(&doc.train_features, p, "train_features")?;
        let upsilon = match doc.upsilon {
            UpsilonDoc::Dense { rows, cols, values } => {
                let m = matrix_from(&values, cols, "upsilon")?;
                if m.nrows() != rows {
                    return Err(Error::DimensionMismatch("upsilon row count".into()));
                }
                Heterogeneity::Dense(m)
            }
            UpsilonDoc::Factored { u, s, v } => {
                let r = s.len();
                Heterogeneity::Factored(SvdFactors {
                    u: matrix_from(&u, r, "upsilon.u")?,
                    s: Array1::from(s),
                    v: matrix_from(&v, r, "upsilon.v")?,
                })
            }
        };
        let params = ModelParams {
            alpha: Array1::from(doc.alpha),
            u,
            upsilon,
        };
        Self::new(params, train_features, doc.k, doc.feature_names)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, RngSeed};
    use ndarray::array;

    fn random_model(n: usize, p: usize, classes: usize, k: usize, seed: u64) -> FittedModel {
        let x = gaussian_matrix(n, p, RngSeed(seed));
        let params = ModelParams {
            alpha: gaussian_matrix(1, classes, RngSeed(seed).child(1))
                .row(0)
                .to_owned(),
            u: gaussian_matrix(p, classes, RngSeed(seed).child(2)),
            upsilon: Heterogeneity::Dense(gaussian_matrix(p * classes, n, RngSeed(seed).child(3))),
        };
        FittedModel::new(params, x, k, (0..p).map(|i| format!("f{i}")).collect()).unwrap()
    }

    #[test]
    fn self_match_returns_own_column() {
        let model = random_model(20, 4, 3, 1, 1);
        for m in [0, 7, 19] {
            let est = knn_heterogeneity(model.train_features().row(m), &model).unwrap();
            assert_eq!(est.neighbors, vec![m]);
            let col = model.params().upsilon.column(m);
            assert!((&est.heterogeneity - &col).iter().all(|d| d.abs() < 1e-15));
        }
    }

    #[test]
    fn equal_similarity_neighbors_are_averaged() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let params = ModelParams {
            alpha: Array1::zeros(2),
            u: Array2::zeros((2, 2)),
            upsilon: Heterogeneity::Dense(array![
                [1.0, 3.0, 100.0],
                [2.0, 4.0, 100.0],
                [0.0, 2.0, 100.0],
                [-1.0, 1.0, 100.0]
            ]),
        };
        let model = FittedModel::new(params, x, 2, vec!["a".into(), "b".into()]).unwrap();
        let est = knn_heterogeneity(array![1.0, 1.0].view(), &model).unwrap();
        assert_eq!(est.neighbors, vec![0, 1]);
        assert_eq!(est.heterogeneity.to_vec(), vec![2.0, 3.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_query_and_degenerate_neighborhood() {
        let x = array![[1.0, 0.0], [2.0, 0.0]];
        let params = ModelParams {
            alpha: Array1::zeros(2),
            u: Array2::zeros((2, 2)),
            upsilon: Heterogeneity::Dense(array![[1.0, 3.0], [0.0, 0.0], [0.0, 0.0], [5.0, 7.0]]),
        };
        let model = FittedModel::new(params, x, 2, vec!["a".into(), "b".into()]).unwrap();
        let zero = knn_heterogeneity(array![0.0, 0.0].view(), &model).unwrap();
        assert_eq!(zero.warning, Some(KnnWarning::ZeroFeatureVector));
        assert!(zero.heterogeneity.iter().all(|&v| v == 0.0));

        let opposite = knn_heterogeneity(array![-1.0, 0.0].view(), &model).unwrap();
        assert_eq!(opposite.warning, Some(KnnWarning::DegenerateNeighborhood));
        assert_eq!(opposite.heterogeneity.to_vec(), vec![2.0, 0.0, 0.0, 6.0]);
    }

    #[test]
    fn zero_params_predict_first_class() {
        let x = gaussian_matrix(5, 3, RngSeed(4));
        let model = FittedModel::new(ModelParams::zeros(3, 4, 5), x, 2, vec!["a".into(); 3]).unwrap();
        let pred = predict_class(array![0.3, -1.0, 2.0].view(), &model).unwrap();
        assert_eq!(pred.label, 0);
        assert!(pred.probabilities.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn probabilities_are_normalized() {
        let model = random_model(30, 5, 4, 5, 2);
        let queries = gaussian_matrix(20, 5, RngSeed(99));
        for pred in predict_batch(&queries, &model).unwrap() {
            assert!((pred.probabilities.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_k_is_rejected() {
        let x = gaussian_matrix(4, 2, RngSeed(0));
        assert!(FittedModel::new(ModelParams::zeros(2, 2, 4), x.clone(), 0, vec!["a".into(); 2]).is_err());
        assert!(FittedModel::new(ModelParams::zeros(2, 2, 4), x, 5, vec!["a".into(); 2]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let model = random_model(12, 3, 3, 4, 5);
        let back = FittedModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back.params().alpha, model.params().alpha);
        assert_eq!(back.params().u, model.params().u);
        assert_eq!(back.train_features(), model.train_features());
        assert_eq!(back.k(), 4);
    }

    #[test]
    fn low_rank_heterogeneity_is_stored_factored() {
        let w = gaussian_matrix(12, 1, RngSeed(1));
        let v = gaussian_matrix(1, 40, RngSeed(2));
        let params = ModelParams {
            alpha: Array1::zeros(3),
            u: Array2::zeros((4, 3)),
            upsilon: Heterogeneity::Dense(w.dot(&v)),
        };
        let x = gaussian_matrix(40, 4, RngSeed(3));
        let model = FittedModel::new(params, x, 3, vec!["a".into(); 4]).unwrap();
        let text = model.to_json().unwrap();
        assert!(text.contains("\"factored\""));
        let back = FittedModel::from_json(&text).unwrap();
        let diff = &back.params().upsilon.to_dense() - &model.params().upsilon.to_dense();
        assert!(diff.iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let model = random_model(6, 2, 2, 1, 0);
        let text = model
            .to_json()
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(
            FittedModel::from_json(&text),
            Err(Error::UnsupportedFormatVersion(2))
        ));
    }
}
