//! Greedy alternating search over the penalty grid, seeded from a
//! homogeneous-only path.

use latent_logit::cli::commands::validation_split;
use latent_logit::solver::SolverConfig;
use latent_logit::synth::{generate, Scenario, SynthSpec};
use latent_logit::tuning::{greedy_local_continuation, seed_lambda1, PenaltyGrid, SearchOptions};

fn main() -> latent_logit::Result<()> {
    let spec = SynthSpec::new(
        250,
        4,
        3,
        Scenario::Clustered {
            clusters: 3,
            jitter: 0.0,
            scale: 1.5,
        },
    )
    .with_seed(12);
    let data = generate(&spec)?.dataset;
    let (train, val) = validation_split(&data, 0.2, 12)?;

    let grid = PenaltyGrid::default_for(&train, 8)?;
    let options = SearchOptions {
        solver: SolverConfig {
            max_iters: 1000,
            tol: 1e-5,
            ..SolverConfig::default()
        },
        k: 10,
    };
    let init = seed_lambda1(&train, &val, &grid, &options)?;
    println!("starting lambda1 from the homogeneous path: {init:.4e}");

    let result = greedy_local_continuation(&train, &val, &grid, init, &options)?;
    let trace = &result.trace;
    for v in &trace.visited {
        println!(
            "  outer {}: lambda1 {:.4e}  lambda2 {:.4e}  F1 {:.4}",
            v.outer_iteration, v.lambda1, v.lambda2, v.f1
        );
    }
    println!(
        "stopped by {:?} after {} solves; selected ({:.4e}, {:.4e}) with F1 {:.4}",
        trace.termination,
        trace.evaluations.len(),
        trace.selected.lambda1,
        trace.selected.lambda2,
        trace.selected_f1
    );
    Ok(())
}
