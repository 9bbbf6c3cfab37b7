//! Penalty selection: warm-started solution paths, the alternating greedy
//! search over `(λ1, λ2)`, and the macro F-1 validation metric.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::svd_exact;
use crate::model::{nll_gradient, Dataset, ModelParams, PenaltyPair};
use crate::predict::{predict_batch, FittedModel, DEFAULT_NEIGHBORS};
use crate::solver::{fit_fapgar, SolverConfig, TraceSummary};

pub const DEFAULT_GRID_POINTS: usize = 20;
/// Ratio between the largest and smallest default grid value.
pub const DEFAULT_GRID_SPAN: f64 = 1000.0;
pub const MAX_OUTER_ITERATIONS: usize = 20;

/// Macro-averaged F-1 over the classes present in `truth`.
///
/// # Panics
/// If the slices differ in length or are empty.
pub fn f1_score(predicted: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "label vectors differ in length");
    assert!(!truth.is_empty(), "need at least one label");
    let classes = predicted.iter().chain(truth).max().map_or(0, |&m| m + 1);
    let mut tp = vec![0usize; classes];
    let mut pred_count = vec![0usize; classes];
    let mut true_count = vec![0usize; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        pred_count[p] += 1;
        true_count[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let mut total = 0.0;
    let mut present = 0usize;
    for c in 0..classes {
        if true_count[c] == 0 {
            continue;
        }
        present += 1;
        if tp[c] > 0 {
            let precision = tp[c] as f64 / pred_count[c] as f64;
            let recall = tp[c] as f64 / true_count[c] as f64;
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    total / present as f64
}

/// Smallest penalties at which the intercept-only fit is optimal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyCertificates {
    /// Largest row norm of `∇_U`.
    pub lambda1: f64,
    /// Spectral norm of `∇_Υ`.
    pub lambda2: f64,
}

/// Largest row norm of the `U` gradient at `params`. When `params` is
/// optimal with `U = 0` for the other coordinates, any `λ1` above this
/// keeps `U = 0` optimal.
pub fn homogeneous_certificate(dataset: &Dataset, params: &ModelParams) -> Result<f64> {
    let g = nll_gradient(dataset, params)?;
    Ok(g.d_u
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max))
}

/// Spectral norm of the heterogeneity gradient at `params`; the analogue of
/// [`homogeneous_certificate`] for `Υ = 0`.
pub fn heterogeneity_certificate(dataset: &Dataset, params: &ModelParams) -> Result<f64> {
    let g = nll_gradient(dataset, params)?;
    if g.d_upsilon.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    Ok(svd_exact(&g.d_upsilon)?.s[0])
}

pub fn penalty_certificates(dataset: &Dataset) -> Result<PenaltyCertificates> {
    let base = ModelParams::intercept_only(dataset);
    Ok(PenaltyCertificates {
        lambda1: homogeneous_certificate(dataset, &base)?,
        lambda2: heterogeneity_certificate(dataset, &base)?,
    })
}

/// `points` log-spaced values from `max` down to `max / span`.
pub fn log_spaced(max: f64, points: usize, span: f64) -> Vec<f64> {
    if points == 1 {
        return vec![max];
    }
    let ratio = span.ln() / (points - 1) as f64;
    (0..points).map(|i| max * (-(i as f64) * ratio).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyGrid {
    lambda1_values: Vec<f64>,
    lambda2_values: Vec<f64>,
}

fn check_leg(values: &[f64], name: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "{name} grid values must be positive"
        )));
    }
    if values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput(format!(
            "{name} grid must be strictly descending"
        )));
    }
    Ok(())
}

impl PenaltyGrid {
    pub fn new(lambda1_values: Vec<f64>, lambda2_values: Vec<f64>) -> Result<Self> {
        check_leg(&lambda1_values, "lambda1")?;
        check_leg(&lambda2_values, "lambda2")?;
        Ok(PenaltyGrid {
            lambda1_values,
            lambda2_values,
        })
    }

    /// Log-spaced grid spanning `[c/1000, c]` per axis, `c` being the
    /// intercept-only certificate.
    pub fn default_for(dataset: &Dataset, points: usize) -> Result<Self> {
        if points == 0 {
            return Err(Error::EmptyGrid);
        }
        let c = penalty_certificates(dataset)?;
        if !(c.lambda1 > 0.0 && c.lambda2 > 0.0) {
            return Err(Error::InvalidInput(
                "intercept-only fit is already optimal; no penalty range to search".into(),
            ));
        }
        Self::new(
            log_spaced(c.lambda1, points, DEFAULT_GRID_SPAN),
            log_spaced(c.lambda2, points, DEFAULT_GRID_SPAN),
        )
    }

    pub fn lambda1_values(&self) -> &[f64] {
        &self.lambda1_values
    }

    pub fn lambda2_values(&self) -> &[f64] {
        &self.lambda2_values
    }

    /// Grid value of `axis` closest to `value` on a log scale.
    pub fn snap(&self, axis: PenaltyAxis, value: f64) -> f64 {
        let leg = match axis {
            PenaltyAxis::Lambda1 => &self.lambda1_values,
            PenaltyAxis::Lambda2 => &self.lambda2_values,
        };
        let target = value.max(f64::MIN_POSITIVE).ln();
        leg.iter()
            .copied()
            .min_by(|a, b| (a.ln() - target).abs().total_cmp(&(b.ln() - target).abs()))
            .expect("grid legs are non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyAxis {
    Lambda1,
    Lambda2,
}

impl PenaltyAxis {
    fn pair(self, varying: f64, fixed: f64) -> Result<PenaltyPair> {
        match self {
            PenaltyAxis::Lambda1 => PenaltyPair::new(varying, fixed),
            PenaltyAxis::Lambda2 => PenaltyPair::new(fixed, varying),
        }
    }
}

/// Solver and prediction settings shared by every solve of a search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub solver: SolverConfig,
    /// Neighbor count for validation predictions.
    pub k: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            solver: SolverConfig::default(),
            k: DEFAULT_NEIGHBORS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathPoint {
    pub penalties: PenaltyPair,
    pub params: ModelParams,
    pub f1: f64,
    pub summary: TraceSummary,
}

#[derive(Debug)]
pub struct SolutionPath {
    pub axis: PenaltyAxis,
    pub points: Vec<PathPoint>,
    /// Solver failure that cut the leg short, if any.
    pub failure: Option<Error>,
}

impl SolutionPath {
    /// Point with the best F-1; ties go to the earlier (larger) penalty.
    pub fn best(&self) -> Option<&PathPoint> {
        let mut best: Option<&PathPoint> = None;
        for p in &self.points {
            if best.is_none_or(|b| p.f1 > b.f1) {
                best = Some(p);
            }
        }
        best
    }
}

/// Validation F-1 of a fit, classifying by largest probability with
/// neighbor-borrowed heterogeneity.
pub fn validation_f1(train: &Dataset, val: &Dataset, params: &ModelParams, k: usize) -> Result<f64> {
    let model = FittedModel::from_fit(train, params.clone(), k.min(train.n_samples()))?;
    let predicted: Vec<usize> = predict_batch(val.features(), &model)?
        .into_iter()
        .map(|p| p.label)
        .collect();
    Ok(f1_score(&predicted, val.labels()))
}

/// Solves the grid `leg` (descending) along `axis` with the other penalty
/// fixed, each solve starting from the previous solution.
pub fn warm_start_path(
    train: &Dataset,
    val: &Dataset,
    axis: PenaltyAxis,
    fixed_value: f64,
    leg: &[f64],
    init: &ModelParams,
    options: &SearchOptions,
) -> Result<SolutionPath> {
    check_leg(leg, "path")?;
    if val.n_features() != train.n_features() || val.num_classes() != train.num_classes() {
        return Err(Error::DimensionMismatch(
            "validation set does not match the training set".into(),
        ));
    }
    init.check_dataset(train)?;
    let mut points: Vec<PathPoint> = Vec::with_capacity(leg.len());
    let mut failure = None;
    for &lambda in leg {
        let penalties = axis.pair(lambda, fixed_value)?;
        let start = points.last().map_or(init, |p| &p.params);
        let solved = fit_fapgar(train, penalties, &options.solver, start).and_then(|(params, trace)| {
            let f1 = validation_f1(train, val, &params, options.k)?;
            Ok(PathPoint {
                penalties,
                params,
                f1,
                summary: trace.summary(),
            })
        });
        match solved {
            Ok(point) => points.push(point),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    Ok(SolutionPath {
        axis,
        points,
        failure,
    })
}

/// One solve of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub outer_iteration: usize,
    pub axis: PenaltyAxis,
    pub lambda1: f64,
    pub lambda2: f64,
    pub f1: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rank: usize,
}

/// Configuration chosen at the end of an outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisitedPoint {
    pub outer_iteration: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchTermination {
    Cycle,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub grid: PenaltyGrid,
    pub init_lambda1: f64,
    pub visited: Vec<VisitedPoint>,
    pub evaluations: Vec<Evaluation>,
    pub selected: PenaltyPair,
    pub selected_f1: f64,
    pub termination: SearchTermination,
}

impl SearchTrace {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `outer_iteration,lambda1,lambda2,f1` rows of the visited points.
    pub fn write_visited_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["outer_iteration", "lambda1", "lambda2", "f1"])?;
        for v in &self.visited {
            w.write_record([
                v.outer_iteration.to_string(),
                v.lambda1.to_string(),
                v.lambda2.to_string(),
                v.f1.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of the search: the trace plus the fit at the selected pair.
#[derive(Debug)]
pub struct SearchResult {
    pub trace: SearchTrace,
    pub params: ModelParams,
}

fn take_best(path: SolutionPath, outer: usize, evaluations: &mut Vec<Evaluation>) -> Result<PathPoint> {
    for p in &path.points {
        evaluations.push(Evaluation {
            outer_iteration: outer,
            axis: path.axis,
            lambda1: p.penalties.lambda1,
            lambda2: p.penalties.lambda2,
            f1: p.f1,
            objective: p.summary.final_objective,
            iterations: p.summary.iterations,
            converged: p.summary.termination == crate::solver::Termination::Tolerance,
            rank: p.summary.final_rank,
        });
    }
    let best = path.best().cloned();
    match (best, path.failure) {
        (Some(best), _) => Ok(best),
        (None, Some(e)) => Err(e),
        (None, None) => Err(Error::EmptyGrid),
    }
}

/// Alternating search: each outer iteration walks the `λ2` leg with `λ1`
/// fixed, then the `λ1` leg with `λ2` fixed, keeping the best validation
/// F-1 on each leg. Stops when an outer iteration selects a configuration
/// chosen before, or after [`MAX_OUTER_ITERATIONS`].
pub fn greedy_local_continuation(
    train: &Dataset,
    val: &Dataset,
    grid: &PenaltyGrid,
    init_lambda1: f64,
    options: &SearchOptions,
) -> Result<SearchResult> {
    let mut lambda1 = grid.snap(PenaltyAxis::Lambda1, init_lambda1);
    let mut params = ModelParams::zeros_for(train);
    let mut visited: Vec<VisitedPoint> = Vec::new();
    let mut evaluations = Vec::new();
    let mut best: Option<(VisitedPoint, ModelParams)> = None;
    let mut termination = SearchTermination::Exhausted;

    for outer in 1..=MAX_OUTER_ITERATIONS {
        let leg2 = warm_start_path(
            train,
            val,
            PenaltyAxis::Lambda2,
            lambda1,
            grid.lambda2_values(),
            &params,
            options,
        )?;
        let pick2 = take_best(leg2, outer, &mut evaluations)?;
        let lambda2 = pick2.penalties.lambda2;
        params = pick2.params;

        let leg1 = warm_start_path(
            train,
            val,
            PenaltyAxis::Lambda1,
            lambda2,
            grid.lambda1_values(),
            &params,
            options,
        )?;
        let pick1 = take_best(leg1, outer, &mut evaluations)?;
        lambda1 = pick1.penalties.lambda1;
        params = pick1.params;

        let point = VisitedPoint {
            outer_iteration: outer,
            lambda1,
            lambda2,
            f1: pick1.f1,
        };
        let repeat = visited
            .iter()
            .any(|v| v.lambda1 == lambda1 && v.lambda2 == lambda2);
        visited.push(point);
        let better = best.as_ref().is_none_or(|(b, _)| {
            point.f1 > b.f1 || (point.f1 == b.f1 && (point.lambda1, point.lambda2) > (b.lambda1, b.lambda2))
        });
        if better {
            best = Some((point, params.clone()));
        }
        if repeat {
            termination = SearchTermination::Cycle;
            break;
        }
    }

    let (chosen, chosen_params) = best.expect("at least one outer iteration ran");
    Ok(SearchResult {
        trace: SearchTrace {
            grid: grid.clone(),
            init_lambda1,
            visited,
            evaluations,
            selected: PenaltyPair::new(chosen.lambda1, chosen.lambda2)?,
            selected_f1: chosen.f1,
            termination,
        },
        params: chosen_params,
    })
}

/// Starting `λ1` for the search: the best validation F-1 along the `λ1`
/// leg of a group-ℓ1-only path (heterogeneity held at zero).
pub fn seed_lambda1(
    train: &Dataset,
    val: &Dataset,
    grid: &PenaltyGrid,
    options: &SearchOptions,
) -> Result<f64> {
    let c = penalty_certificates(train)?;
    let huge = 1e6 * c.lambda2.max(grid.lambda2_values()[0]).max(1.0);
    let path = warm_start_path(
        train,
        val,
        PenaltyAxis::Lambda1,
        huge,
        grid.lambda1_values(),
        &ModelParams::zeros_for(train),
        options,
    )?;
    let mut sink = Vec::new();
    Ok(take_best(path, 0, &mut sink)?.penalties.lambda1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_hand_enumerated() {
        let f = f1_score(&[0, 1, 1, 1], &[0, 0, 1, 1]);
        assert!((f - 11.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn f1_extremes() {
        assert_eq!(f1_score(&[2, 0, 1], &[2, 0, 1]), 1.0);
        assert_eq!(f1_score(&[1, 0, 1], &[0, 1, 0]), 0.0);
    }

    #[test]
    fn f1_ignores_classes_absent_from_truth() {
        // class 2 never occurs in the truth and is left out of the average
        let f = f1_score(&[0, 2], &[0, 1]);
        assert!((f - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_spacing() {
        let v = log_spaced(2.0, 4, 1000.0);
        assert_eq!(v.len(), 4);
        assert!((v[0] - 2.0).abs() < 1e-15);
        assert!((v[3] - 0.002).abs() < 1e-15);
        assert!((v[1] / v[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(
            PenaltyGrid::new(vec![], vec![1.0]),
            Err(Error::EmptyGrid)
        ));
        assert!(PenaltyGrid::new(vec![1.0, 1.0], vec![1.0]).is_err());
        assert!(PenaltyGrid::new(vec![1.0, 0.0], vec![1.0]).is_err());
        assert!(PenaltyGrid::new(vec![2.0, 1.0], vec![3.0]).is_ok());
    }

    #[test]
    fn snapping_is_logarithmic() {
        let g = PenaltyGrid::new(vec![100.0, 10.0, 1.0], vec![1.0]).unwrap();
        assert_eq!(g.snap(PenaltyAxis::Lambda1, 30.0), 10.0);
        assert_eq!(g.snap(PenaltyAxis::Lambda1, 40.0), 100.0);
        assert_eq!(g.snap(PenaltyAxis::Lambda1, 1e-9), 1.0);
    }
}
