//! Direct pseudo-elasticities, their cross-validated averages, and
//! principal-component scores of the fitted heterogeneity.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, svd_exact, RngSeed};
use crate::model::{class_probabilities, Dataset, HeterogeneitySource, ModelParams, PenaltyPair};
use crate::predict::{knn_heterogeneity, FittedModel, DEFAULT_NEIGHBORS};
use crate::solver::{fit_fapgar, SolverConfig};

pub const DEFAULT_FOLDS: usize = 5;
/// Base probabilities below this are treated as zero.
pub const MIN_BASE_PROBABILITY: f64 = 1e-300;

/// Relative change in the probability of `class` when binary feature
/// `feature` of `x` switches from 0 to 1, heterogeneity held fixed.
pub fn direct_pseudo_elasticity(
    params: &ModelParams,
    x: ArrayView1<f64>,
    source: HeterogeneitySource,
    feature: usize,
    class: usize,
) -> Result<f64> {
    let p = params.n_features();
    if feature >= p {
        return Err(Error::IndexOutOfRange {
            index: feature,
            limit: p,
        });
    }
    if class >= params.num_classes() {
        return Err(Error::IndexOutOfRange {
            index: class,
            limit: params.num_classes(),
        });
    }
    if x.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "feature vector has length {}, expected {p}",
            x.len()
        )));
    }
    if x[feature] != 0.0 && x[feature] != 1.0 {
        return Err(Error::InvalidInput(format!(
            "feature {feature} is not binary-coded (value {})",
            x[feature]
        )));
    }
    let mut switched = x.to_owned();
    switched[feature] = 0.0;
    let p0 = class_probabilities(params, switched.view(), source)?[class];
    switched[feature] = 1.0;
    let p1 = class_probabilities(params, switched.view(), source)?[class];
    if p0 < MIN_BASE_PROBABILITY {
        return Err(Error::ZeroBaseProbability(p0));
    }
    Ok((p1 - p0) / p0)
}

fn mean_excluding_zero_base<I>(values: I) -> Result<f64>
where
    I: IntoIterator<Item = Result<f64>>,
{
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        match v {
            Ok(e) => {
                sum += e;
                count += 1;
            }
            Err(Error::ZeroBaseProbability(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        return Err(Error::AllExcluded);
    }
    Ok(sum / count as f64)
}

/// Mean elasticity over the samples of the fitting dataset, each with its
/// own heterogeneity column.
pub fn average_dpe(dataset: &Dataset, params: &ModelParams, feature: usize, class: usize) -> Result<f64> {
    params.check_dataset(dataset)?;
    mean_excluding_zero_base((0..dataset.n_samples()).map(|n| {
        direct_pseudo_elasticity(
            params,
            dataset.features().row(n),
            HeterogeneitySource::Sample(n),
            feature,
            class,
        )
    }))
}

/// Features taking both values 0 and 1 and nothing else.
pub fn switchable_features(dataset: &Dataset) -> Vec<usize> {
    dataset
        .features()
        .axis_iter(Axis(1))
        .enumerate()
        .filter(|(_, col)| {
            col.iter().all(|&v| v == 0.0 || v == 1.0)
                && col.iter().any(|&v| v == 0.0)
                && col.iter().any(|&v| v == 1.0)
        })
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Why the fold was left out of the averages.
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityEntry {
    pub feature: String,
    pub feature_index: usize,
    /// Zero-based class index; files show `class_index + 1`.
    pub class_index: usize,
    /// Mean over the folds that produced a value.
    pub mean: Option<f64>,
    /// One value per fold, `None` for excluded folds.
    pub fold_values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityReport {
    pub folds: usize,
    pub penalties: PenaltyPair,
    pub seed: u64,
    pub entries: Vec<ElasticityEntry>,
    /// Features that never switch between 0 and 1.
    pub absent_features: Vec<String>,
    pub fold_results: Vec<FoldResult>,
}

impl ElasticityReport {
    pub fn entry(&self, feature: usize, class: usize) -> Option<&ElasticityEntry> {
        self.entries
            .iter()
            .find(|e| e.feature_index == feature && e.class_index == class)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Tidy rows `feature,class,fold,elasticity` (folds one-based).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["feature", "class", "fold", "elasticity"])?;
        for e in &self.entries {
            for (f, v) in e.fold_values.iter().enumerate() {
                if let Some(v) = v {
                    w.write_record([
                        e.feature.clone(),
                        (e.class_index + 1).to_string(),
                        (f + 1).to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Seeded shuffle of `0..n` cut into `folds` contiguous blocks whose sizes
/// differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngSeed(seed).rng());
    (0..folds)
        .map(|f| order[f * n / folds..(f + 1) * n / folds].to_vec())
        .collect()
}

struct FoldOutput {
    result: FoldResult,
    // per (feature position, class)
    values: Option<Vec<Vec<Option<f64>>>>,
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    dataset: &Dataset,
    fold: usize,
    test_idx: &[usize],
    train_idx: &[usize],
    features: &[usize],
    penalties: PenaltyPair,
    config: &SolverConfig,
    k: usize,
) -> FoldOutput {
    let mut result = FoldResult {
        fold,
        train_size: train_idx.len(),
        test_size: test_idx.len(),
        iterations: 0,
        converged: false,
        excluded: None,
    };
    let outcome = (|| -> Result<Option<Vec<Vec<Option<f64>>>>> {
        let train = dataset.subset(train_idx)?;
        let test = dataset.subset(test_idx)?;
        let (params, trace) = fit_fapgar(&train, penalties, config, &ModelParams::zeros_for(&train))?;
        result.iterations = trace.iterations();
        result.converged = trace.converged();
        if !trace.converged() {
            return Ok(None);
        }
        let model = FittedModel::from_fit(&train, params, k.min(train.n_samples()))?;
        let het: Vec<Array1<f64>> = test
            .features()
            .axis_iter(Axis(0))
            .map(|x| knn_heterogeneity(x, &model).map(|e| e.heterogeneity))
            .collect::<Result<_>>()?;
        let classes = dataset.num_classes();
        let mut values = Vec::with_capacity(features.len());
        for &i in features {
            let mut per_class = Vec::with_capacity(classes);
            for class in 0..classes {
                let mean = mean_excluding_zero_base(het.iter().enumerate().map(|(n, h)| {
                    direct_pseudo_elasticity(
                        model.params(),
                        test.features().row(n),
                        HeterogeneitySource::Vector(h.view()),
                        i,
                        class,
                    )
                }));
                per_class.push(match mean {
                    Ok(v) => Some(v),
                    Err(Error::AllExcluded) => None,
                    Err(e) => return Err(e),
                });
            }
            values.push(per_class);
        }
        Ok(Some(values))
    })();
    match outcome {
        Ok(Some(values)) => FoldOutput {
            result,
            values: Some(values),
        },
        Ok(None) => {
            result.excluded = Some("solver did not reach tolerance".into());
            FoldOutput { result, values: None }
        }
        Err(e) => {
            result.excluded = Some(e.to_string());
            FoldOutput { result, values: None }
        }
    }
}

/// Cross-validated average elasticities: shuffle, cut into `folds` folds,
/// fit on all but one fold and average elasticities over the held-out fold
/// (held-out heterogeneity from `k` nearest training neighbors), then
/// average across folds.
pub fn cv_dpe(
    dataset: &Dataset,
    folds: usize,
    penalties: PenaltyPair,
    config: &SolverConfig,
    seed: u64,
    k: usize,
) -> Result<ElasticityReport> {
    if folds < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {folds}")));
    }
    let n = dataset.n_samples();
    if n < folds {
        return Err(Error::InvalidInput(format!("{folds} folds for {n} samples")));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    config.validate()?;
    let features = switchable_features(dataset);
    let assignment = fold_assignment(n, folds, seed);
    let outputs: Vec<FoldOutput> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train_idx: Vec<usize> = assignment
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            run_fold(
                dataset,
                f,
                &assignment[f],
                &train_idx,
                &features,
                penalties,
                config,
                k,
            )
        })
        .collect();
    let usable = outputs.iter().filter(|o| o.values.is_some()).count();
    if usable < 2 {
        return Err(Error::TooFewFolds { usable });
    }

    let names = dataset.feature_names();
    let mut entries = Vec::new();
    for (pos, &i) in features.iter().enumerate() {
        for class in 0..dataset.num_classes() {
            let fold_values: Vec<Option<f64>> = outputs
                .iter()
                .map(|o| o.values.as_ref().and_then(|v| v[pos][class]))
                .collect();
            let present: Vec<f64> = fold_values.iter().flatten().copied().collect();
            let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
            entries.push(ElasticityEntry {
                feature: names[i].clone(),
                feature_index: i,
                class_index: class,
                mean,
                fold_values,
            });
        }
    }
    let absent_features = (0..dataset.n_features())
        .filter(|i| !features.contains(i))
        .map(|i| names[i].clone())
        .collect();
    Ok(ElasticityReport {
        folds,
        penalties,
        seed,
        entries,
        absent_features,
        fold_results: outputs.into_iter().map(|o| o.result).collect(),
    })
}

/// [`cv_dpe`] with the default neighbor count.
pub fn cv_dpe_default(
    dataset: &Dataset,
    folds: usize,
    penalties: PenaltyPair,
    config: &SolverConfig,
    seed: u64,
) -> Result<ElasticityReport> {
    cv_dpe(dataset, folds, penalties, config, seed, DEFAULT_NEIGHBORS)
}

/// Principal-component scores of the heterogeneity columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaScores {
    /// `N × r`, one row per sample.
    pub scores: Array2<f64>,
    pub singular_values: Array1<f64>,
}

impl PcaScores {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (1..=self.scores.ncols()).map(|c| format!("pc{c}")).collect();
        w.write_record(&header)?;
        for row in self.scores.axis_iter(Axis(0)) {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores of the centered heterogeneity columns on their top `r` principal
/// directions, `r` being the numerical rank of the centered matrix.
pub fn heterogeneity_pca_scores(params: &ModelParams) -> Result<PcaScores> {
    if params.upsilon.is_zero() {
        return Err(Error::ZeroHeterogeneity);
    }
    let mut centered = params.upsilon.to_dense();
    let mean = centered.mean_axis(Axis(1)).expect("at least one column");
    for mut col in centered.axis_iter_mut(Axis(1)) {
        col -= &mean;
    }
    let n = centered.ncols();
    if centered.iter().all(|&v| v == 0.0) {
        return Ok(PcaScores {
            scores: Array2::zeros((n, 0)),
            singular_values: Array1::zeros(0),
        });
    }
    let svd = svd_exact(&centered)?;
    let r = numerical_rank(&svd.s);
    let svd = svd.truncate(r);
    let mut scores = svd.v.clone();
    for (mut col, &s) in scores.axis_iter_mut(Axis(1)).zip(svd.s.iter()) {
        col *= s;
    }
    Ok(PcaScores {
        scores,
        singular_values: svd.s,
    })
}
