//! Proximal-gradient solvers for the penalized latent-effect logit.
//!
//! [`fit_pg`] is the plain constant-step iteration. [`fit_fapgar`] adds
//! Nesterov momentum with function-value restarts: an iterate that raises
//! the objective is rejected, the momentum is reset and the step halved.
//! Both take the nuclear-norm prox through randomized SVT with a rank hint
//! of `rank(previous heterogeneity) + 1`.

use std::io::Write;
use std::time::Instant;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, numerical_rank, svd_exact, DenseMatrix, RngSeed};
use crate::model::{
    gradient_from_predictors, group_l1_norm, linear_predictors, nll_from_predictors, Dataset, Heterogeneity,
    ModelParams, PenaltyPair,
};
use crate::prox::{prox_group_l1, prox_nuclear};

/// Objective growth (relative to the starting value) treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub initial_step: f64,
    /// Threshold on `‖Δα‖ + ‖ΔU‖_F + ‖ΔΥ‖_F` between accepted iterates.
    pub tol: f64,
    pub seed: u64,
    /// `false` runs plain proximal gradient with a constant step.
    pub accelerate: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 5000,
            initial_step: 1.0,
            tol: 1e-6,
            seed: 0,
            accelerate: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be >= 1".into()));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "initial step {} must be positive",
                self.initial_step
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tolerance {} must be positive",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationEvent {
    Accepted,
    /// Objective increased: iterate rejected, momentum reset, step halved.
    Restart,
}

impl IterationEvent {
    pub fn as_str(&self) -> &'static str {
        match self {
            IterationEvent::Accepted => "accepted",
            IterationEvent::Restart => "restart",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Objective of the accepted iterate at the end of the iteration.
    pub objective: f64,
    /// Step size used by this iteration.
    pub step: f64,
    pub event: IterationEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub initial_objective: f64,
    pub records: Vec<IterationRecord>,
    pub restarts: Vec<usize>,
    pub step_halvings: Vec<usize>,
    /// Seconds spent in each iteration.
    pub wall_times: Vec<f64>,
    pub final_rank: usize,
    pub termination: Termination,
}

/// JSON summary of a solve. Wall times are left out so that the document
/// is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub final_step: f64,
    pub restarts: usize,
    pub step_halvings: usize,
    pub final_rank: usize,
    pub termination: Termination,
}

impl SolverTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn final_objective(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.objective)
            .unwrap_or(self.initial_objective)
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Tolerance
    }

    /// First iteration whose objective is within `gap` of `reference`.
    pub fn iterations_to_gap(&self, reference: f64, gap: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.objective - reference <= gap)
            .map(|r| r.iteration)
    }

    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            iterations: self.iterations(),
            initial_objective: self.initial_objective,
            final_objective: self.final_objective(),
            final_step: self.records.last().map(|r| r.step).unwrap_or(f64::NAN),
            restarts: self.restarts.len(),
            step_halvings: self.step_halvings.len(),
            final_rank: self.final_rank,
            termination: self.termination,
        }
    }

    /// `iteration,objective,step,event` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iteration,objective,step,event")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{}",
                r.iteration,
                r.objective,
                r.step,
                r.event.as_str()
            )?;
        }
        Ok(())
    }
}

// Dense working copy of the parameters.
#[derive(Debug, Clone)]
struct Iterate {
    alpha: Array1<f64>,
    u: DenseMatrix,
    upsilon: DenseMatrix,
    rank: usize,
}

impl Iterate {
    fn from_params(params: &ModelParams) -> Self {
        let upsilon = params.upsilon.to_dense();
        let rank = match &params.upsilon {
            Heterogeneity::Factored(f) => f.rank(),
            Heterogeneity::Dense(m) if m.iter().all(|&x| x == 0.0) => 0,
            Heterogeneity::Dense(m) => m.nrows().min(m.ncols()),
        };
        Iterate {
            alpha: params.alpha.clone(),
            u: params.u.clone(),
            upsilon,
            rank,
        }
    }

    fn into_params(self) -> ModelParams {
        ModelParams {
            alpha: self.alpha,
            u: self.u,
            upsilon: Heterogeneity::Dense(self.upsilon),
        }
    }

    fn distance(&self, other: &Iterate) -> f64 {
        let da = (&self.alpha - &other.alpha).mapv(|x| x * x).sum().sqrt();
        let du = frobenius_norm(&(&self.u - &other.u).view());
        let dv = frobenius_norm(&(&self.upsilon - &other.upsilon).view());
        da + du + dv
    }

    // self + beta · (self − previous)
    fn extrapolate(&self, previous: &Iterate, beta: f64) -> Iterate {
        Iterate {
            alpha: &self.alpha + &((&self.alpha - &previous.alpha) * beta),
            u: &self.u + &((&self.u - &previous.u) * beta),
            upsilon: &self.upsilon + &((&self.upsilon - &previous.upsilon) * beta),
            rank: self.rank,
        }
    }
}

fn smooth_loss(dataset: &Dataset, it: &Iterate) -> f64 {
    let v = linear_predictors(dataset.features(), &it.alpha, &it.u, &it.upsilon);
    nll_from_predictors(dataset, &v)
}

fn full_objective(dataset: &Dataset, it: &Iterate, penalties: PenaltyPair) -> Result<f64> {
    let mut f = smooth_loss(dataset, it);
    if penalties.lambda1 != 0.0 {
        f += penalties.lambda1 * group_l1_norm(&it.u);
    }
    if penalties.lambda2 != 0.0 && it.upsilon.iter().any(|&x| x != 0.0) {
        f += penalties.lambda2 * svd_exact(&it.upsilon)?.s.sum();
    }
    Ok(f)
}

// One forward-backward step from `base`; returns the new iterate and its
// objective (nuclear norm read off the SVT factors).
fn prox_step(
    dataset: &Dataset,
    base: &Iterate,
    step: f64,
    penalties: PenaltyPair,
    rank_hint: usize,
    seed: RngSeed,
) -> Result<(Iterate, f64)> {
    let v = linear_predictors(dataset.features(), &base.alpha, &base.u, &base.upsilon);
    let g = gradient_from_predictors(dataset, &v);
    let alpha = &base.alpha - &(&g.d_alpha * step);
    let u = prox_group_l1(&(&base.u - &(&g.d_u * step)), step * penalties.lambda1);
    let upsilon_hat = &base.upsilon - &(&g.d_upsilon * step);
    let (upsilon, nuclear, rank) = if penalties.lambda2 == 0.0 {
        (upsilon_hat, 0.0, base.rank)
    } else {
        let (m, f) = prox_nuclear(&upsilon_hat, step * penalties.lambda2, rank_hint, seed)?;
        let nuclear = f.s.sum();
        (m, nuclear, f.rank())
    };
    let next = Iterate {
        alpha,
        u,
        upsilon,
        rank,
    };
    let objective = smooth_loss(dataset, &next)
        + penalties.lambda1 * group_l1_norm(&next.u)
        + penalties.lambda2 * nuclear;
    Ok((next, objective))
}

fn divergence_limit(initial: f64) -> f64 {
    DIVERGENCE_FACTOR * initial.abs().max(1e-12)
}

fn check_divergence(iteration: usize, objective: f64, limit: f64) -> Result<()> {
    if !objective.is_finite() || objective > limit {
        return Err(Error::DivergenceDetected {
            iteration,
            objective,
            limit,
        });
    }
    Ok(())
}

fn final_rank(it: &Iterate, penalties: PenaltyPair) -> Result<usize> {
    if penalties.lambda2 != 0.0 {
        return Ok(it.rank);
    }
    if it.upsilon.iter().all(|&x| x == 0.0) {
        return Ok(0);
    }
    Ok(numerical_rank(&svd_exact(&it.upsilon)?.s))
}

/// Constant-step proximal gradient.
pub fn fit_pg(
    dataset: &Dataset,
    penalties: PenaltyPair,
    config: &SolverConfig,
    init: &ModelParams,
) -> Result<(ModelParams, SolverTrace)> {
    config.validate()?;
    init.check_dataset(dataset)?;
    let seed = RngSeed(config.seed);
    let step = config.initial_step;
    let mut x = Iterate::from_params(init);
    let initial_objective = full_objective(dataset, &x, penalties)?;
    let limit = divergence_limit(initial_objective);
    let mut records = Vec::new();
    let mut wall_times = Vec::new();
    let mut termination = Termination::MaxIters;
    for t in 1..=config.max_iters {
        let clock = Instant::now();
        let (next, objective) = prox_step(dataset, &x, step, penalties, x.rank + 1, seed.child(t as u64))?;
        check_divergence(t, objective, limit)?;
        let change = next.distance(&x);
        x = next;
        wall_times.push(clock.elapsed().as_secs_f64());
        records.push(IterationRecord {
            iteration: t,
            objective,
            step,
            event: IterationEvent::Accepted,
        });
        if change < config.tol {
            termination = Termination::Tolerance;
            break;
        }
    }
    let final_rank = final_rank(&x, penalties)?;
    Ok((
        x.into_params(),
        SolverTrace {
            initial_objective,
            records,
            restarts: Vec::new(),
            step_halvings: Vec::new(),
            wall_times,
            final_rank,
            termination,
        },
    ))
}

/// Accelerated proximal gradient with function-value restart and step
/// halving. Falls back to [`fit_pg`] when `config.accelerate` is false.
pub fn fit_fapgar(
    dataset: &Dataset,
    penalties: PenaltyPair,
    config: &SolverConfig,
    init: &ModelParams,
) -> Result<(ModelParams, SolverTrace)> {
    if !config.accelerate {
        return fit_pg(dataset, penalties, config, init);
    }
    config.validate()?;
    init.check_dataset(dataset)?;
    let seed = RngSeed(config.seed);
    let mut x = Iterate::from_params(init);
    let mut tilde = x.clone();
    let mut q = 1.0_f64;
    let mut step = config.initial_step;
    let initial_objective = full_objective(dataset, &x, penalties)?;
    let limit = divergence_limit(initial_objective);
    let mut accepted = initial_objective;

    let mut records = Vec::new();
    let mut restarts = Vec::new();
    let mut wall_times = Vec::new();
    let mut termination = Termination::MaxIters;
    for t in 1..=config.max_iters {
        let clock = Instant::now();
        let (candidate, objective) =
            prox_step(dataset, &tilde, step, penalties, x.rank + 1, seed.child(t as u64))?;
        check_divergence(t, objective, limit)?;
        if objective > accepted {
            // restart from the last accepted iterate with half the step
            records.push(IterationRecord {
                iteration: t,
                objective: accepted,
                step,
                event: IterationEvent::Restart,
            });
            restarts.push(t);
            q = 1.0;
            tilde = x.clone();
            step *= 0.5;
            wall_times.push(clock.elapsed().as_secs_f64());
            continue;
        }
        let q_next = 0.5 * (1.0 + (1.0 + 4.0 * q * q).sqrt());
        let beta = (q - 1.0) / q_next;
        tilde = candidate.extrapolate(&x, beta);
        let change = candidate.distance(&x);
        x = candidate;
        q = q_next;
        accepted = objective;
        wall_times.push(clock.elapsed().as_secs_f64());
        records.push(IterationRecord {
            iteration: t,
            objective,
            step,
            event: IterationEvent::Accepted,
        });
        if change < config.tol {
            termination = Termination::Tolerance;
            break;
        }
    }
    let final_rank = final_rank(&x, penalties)?;
    Ok((
        x.into_params(),
        SolverTrace {
            initial_objective,
            records,
            step_halvings: restarts.clone(),
            restarts,
            wall_times,
            final_rank,
            termination,
        },
    ))
}

/// Scaled objective gaps `t · (F(θ_t) − F*)` along a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub reference: f64,
    /// `(iteration, t · (F_t − F*))` for every recorded iteration.
    pub scaled: Vec<(usize, f64)>,
}

impl GapReport {
    /// Largest scaled gap over iterations in `[from, to]`.
    pub fn sup(&self, from: usize, to: usize) -> f64 {
        self.scaled
            .iter()
            .filter(|(t, _)| *t >= from && *t <= to)
            .map(|&(_, g)| g)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Least-squares slope of the scaled gap against `t` over `[from, to]`.
    pub fn trend_slope(&self, from: usize, to: usize) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .scaled
            .iter()
            .filter(|(t, _)| *t >= from && *t <= to)
            .map(|&(t, g)| (t as f64, g))
            .collect();
        let n = pts.len() as f64;
        if pts.len() < 2 {
            return 0.0;
        }
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }
}

/// Scaled gap sequence against `reference`, or against the best objective in
/// the trace when no reference is given.
pub fn estimate_objective_gap(trace: &SolverTrace, reference: Option<f64>) -> GapReport {
    let best = trace
        .records
        .iter()
        .map(|r| r.objective)
        .fold(f64::INFINITY, f64::min);
    let reference = reference.unwrap_or(best);
    let scaled = trace
        .records
        .iter()
        .map(|r| (r.iteration, r.iteration as f64 * (r.objective - reference)))
        .collect();
    GapReport { reference, scaled }
}

/// `‖θ − Prox(θ − s∇f(θ))‖ / s`, zero exactly at a minimizer.
pub fn prox_gradient_residual(
    dataset: &Dataset,
    params: &ModelParams,
    penalties: PenaltyPair,
    step: f64,
) -> Result<f64> {
    params.check_dataset(dataset)?;
    let x = Iterate::from_params(params);
    let min_dim = x.upsilon.nrows().min(x.upsilon.ncols());
    let (next, _) = prox_step(dataset, &x, step, penalties, min_dim, RngSeed(0))?;
    let diff = ((&x.alpha - &next.alpha).mapv(|v| v * v).sum()
        + (&x.u - &next.u).mapv(|v| v * v).sum()
        + (&x.upsilon - &next.upsilon).mapv(|v| v * v).sum())
    .sqrt();
    Ok(diff / step)
}

/// Convenience zero initialization.
pub fn zero_init(dataset: &Dataset) -> ModelParams {
    ModelParams::zeros_for(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use crate::model::{lipschitz_bound, objective};
    use rand::Rng;

    fn instance(n: usize, p: usize, classes: usize, seed: u64) -> Dataset {
        let mut rng = RngSeed(seed).rng();
        let x = gaussian_matrix(n, p, RngSeed(seed).child(1));
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        Dataset::unnamed(x, labels, classes).unwrap()
    }

    #[test]
    fn pg_descends_with_safe_step() {
        let data = instance(30, 3, 3, 1);
        let l = lipschitz_bound(&data).unwrap();
        let cfg = SolverConfig {
            max_iters: 200,
            initial_step: 1.0 / l,
            tol: 1e-12,
            accelerate: false,
            ..Default::default()
        };
        let pen = PenaltyPair::new(0.02, 0.01).unwrap();
        let (_, trace) = fit_pg(&data, pen, &cfg, &zero_init(&data)).unwrap();
        let mut prev = trace.initial_objective;
        for r in &trace.records {
            assert!(r.objective <= prev + 1e-12, "{} > {}", r.objective, prev);
            prev = r.objective;
        }
    }

    #[test]
    fn fixed_point_returns_immediately() {
        let data = instance(20, 2, 2, 2);
        let pen = PenaltyPair::new(0.01, 0.05).unwrap();
        let cfg = SolverConfig {
            max_iters: 20000,
            tol: 1e-12,
            ..Default::default()
        };
        let (sol, _) = fit_fapgar(&data, pen, &cfg, &zero_init(&data)).unwrap();
        let cfg2 = SolverConfig { tol: 1e-6, ..cfg };
        let (_, trace) = fit_fapgar(&data, pen, &cfg2, &sol).unwrap();
        // round-off increases may still trigger restarts before the step
        let accepted: Vec<_> = trace
            .records
            .iter()
            .filter(|r| r.event == IterationEvent::Accepted)
            .collect();
        assert_eq!(accepted.len(), 1);
        assert!(trace.converged());
        assert!((accepted[0].objective - trace.initial_objective).abs() < 1e-12);
    }

    #[test]
    fn fapgar_accepted_objectives_never_rise() {
        let data = instance(40, 3, 3, 3);
        let pen = PenaltyPair::new(0.01, 0.01).unwrap();
        let cfg = SolverConfig {
            max_iters: 300,
            initial_step: 4.0,
            ..Default::default()
        };
        let (_, trace) = fit_fapgar(&data, pen, &cfg, &zero_init(&data)).unwrap();
        assert!(!trace.restarts.is_empty());
        let mut prev = trace.initial_objective;
        let mut step = cfg.initial_step;
        for r in &trace.records {
            assert!(r.objective <= prev);
            assert!(r.step <= step);
            prev = r.objective;
            step = r.step;
        }
        for w in trace.records.windows(2) {
            if w[0].event == IterationEvent::Restart {
                assert_eq!(w[1].step, w[0].step * 0.5);
            } else {
                assert_eq!(w[1].step, w[0].step);
            }
        }
    }

    #[test]
    fn objective_in_trace_matches_model_objective() {
        let data = instance(25, 2, 3, 4);
        let pen = PenaltyPair::new(0.01, 0.02).unwrap();
        let cfg = SolverConfig {
            max_iters: 50,
            ..Default::default()
        };
        let (params, trace) = fit_fapgar(&data, pen, &cfg, &zero_init(&data)).unwrap();
        let direct = objective(&data, &params, pen).unwrap();
        assert!((direct - trace.final_objective()).abs() < 1e-10);
    }

    #[test]
    fn dense_and_factored_init_give_identical_traces() {
        let data = instance(20, 2, 3, 5);
        let pen = PenaltyPair::new(0.01, 0.02).unwrap();
        let low = gaussian_matrix(6, 1, RngSeed(1)).dot(&gaussian_matrix(1, 20, RngSeed(2))) * 0.1;
        let dense = ModelParams {
            upsilon: Heterogeneity::Dense(low),
            ..ModelParams::zeros_for(&data)
        };
        let factored = dense.compacted().unwrap();
        let refactored = factored.densified();
        let cfg = SolverConfig {
            max_iters: 40,
            ..Default::default()
        };
        let (_, t1) = fit_fapgar(&data, pen, &cfg, &factored).unwrap();
        let (_, t2) = fit_fapgar(&data, pen, &cfg, &refactored).unwrap();
        assert_eq!(t1.records, t2.records);
    }

    #[test]
    fn divergence_is_reported() {
        let x = gaussian_matrix(10, 2, RngSeed(1)) * 1e4;
        let data = Dataset::unnamed(x, vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 2).unwrap();
        let cfg = SolverConfig {
            max_iters: 50,
            initial_step: 1e6,
            accelerate: false,
            ..Default::default()
        };
        let err = fit_pg(
            &data,
            PenaltyPair::new(0.0, 0.0).unwrap(),
            &cfg,
            &zero_init(&data),
        );
        assert!(matches!(err, Err(Error::DivergenceDetected { .. })));
    }

    #[test]
    fn trace_csv_layout() {
        let data = instance(10, 2, 2, 6);
        let cfg = SolverConfig {
            max_iters: 3,
            tol: 1e-15,
            ..Default::default()
        };
        let (_, trace) = fit_fapgar(
            &data,
            PenaltyPair::new(0.0, 0.0).unwrap(),
            &cfg,
            &zero_init(&data),
        )
        .unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,objective,step,event");
        assert_eq!(lines.len(), 4);
        assert_eq!(trace.termination, Termination::MaxIters);
    }

    #[test]
    fn gap_report_on_converged_trace() {
        let data = instance(20, 2, 2, 7);
        let pen = PenaltyPair::new(0.01, 0.0).unwrap();
        let cfg = SolverConfig {
            max_iters: 3000,
            tol: 1e-10,
            ..Default::default()
        };
        let (_, trace) = fit_fapgar(&data, pen, &cfg, &zero_init(&data)).unwrap();
        let report = estimate_objective_gap(&trace, None);
        let last = report.scaled.last().unwrap().1;
        assert!(last.abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig {
            max_iters: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SolverConfig {
            initial_step: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SolverConfig {
            tol: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
