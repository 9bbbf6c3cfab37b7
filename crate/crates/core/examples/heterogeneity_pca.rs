//! Fit clustered synthetic data along a nuclear-norm path and report the
//! rank of the fitted heterogeneity with its principal-component scores.

use latent_logit::analysis::heterogeneity_pca_scores;
use latent_logit::model::PenaltyPair;
use latent_logit::solver::{fit_fapgar, zero_init, SolverConfig};
use latent_logit::synth::{generate, Scenario, SynthSpec};
use latent_logit::tuning::PenaltyGrid;

fn main() -> latent_logit::Result<()> {
    let spec = SynthSpec::new(
        300,
        4,
        3,
        Scenario::Clustered {
            clusters: 4,
            jitter: 0.0,
            scale: 2.0,
        },
    )
    .with_seed(8);
    let instance = generate(&spec)?;
    let data = &instance.dataset;
    let grid = PenaltyGrid::default_for(data, 10)?;
    let lambda1 = grid.lambda1_values()[5];
    let config = SolverConfig {
        max_iters: 2000,
        tol: 1e-5,
        ..SolverConfig::default()
    };

    let mut params = zero_init(data);
    let mut chosen = None;
    for &lambda2 in grid.lambda2_values() {
        let (fit, trace) = fit_fapgar(data, PenaltyPair::new(lambda1, lambda2)?, &config, &params)?;
        println!(
            "lambda2 {lambda2:.3e}: rank {} after {} iterations",
            trace.final_rank,
            trace.iterations()
        );
        if (1..=4).contains(&trace.final_rank) {
            chosen = Some((lambda2, fit.clone()));
        }
        params = fit;
    }

    let Some((lambda2, params)) = chosen else {
        println!("no path point with rank between 1 and 4");
        return Ok(());
    };
    let pca = heterogeneity_pca_scores(&params)?;
    println!(
        "lambda2 {lambda2:.3e}: principal components kept: {}",
        pca.scores.ncols()
    );
    let mut out = Vec::new();
    pca.write_csv(&mut out)?;
    let text = String::from_utf8(out).expect("csv is utf-8");
    for line in text.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
