//! Fit a model, save it as JSON, reload it and classify unseen rows with
//! heterogeneity borrowed from cosine-nearest training samples.

use latent_logit::model::PenaltyPair;
use latent_logit::predict::{predict_batch, FittedModel};
use latent_logit::solver::{fit_fapgar, zero_init, SolverConfig};
use latent_logit::synth::{generate, Scenario, SynthSpec};
use latent_logit::tuning::{f1_score, penalty_certificates};

fn main() -> latent_logit::Result<()> {
    let spec = SynthSpec::new(400, 5, 3, Scenario::Factorized { rank: 2, scale: 1.0 }).with_seed(21);
    let data = generate(&spec)?.dataset;
    let train_idx: Vec<usize> = (0..300).collect();
    let test_idx: Vec<usize> = (300..400).collect();
    let train = data.subset(&train_idx)?;
    let test = data.subset(&test_idx)?;

    let cert = penalty_certificates(&train)?;
    let penalties = PenaltyPair::new(0.05 * cert.lambda1, 0.2 * cert.lambda2)?;
    let config = SolverConfig {
        max_iters: 3000,
        tol: 1e-5,
        ..SolverConfig::default()
    };
    let (params, trace) = fit_fapgar(&train, penalties, &config, &zero_init(&train))?;
    println!(
        "fit: {} iterations, heterogeneity rank {}",
        trace.iterations(),
        trace.final_rank
    );

    let model = FittedModel::from_fit(&train, params, 10)?;
    let path = std::env::temp_dir().join("latent_logit_example_model.json");
    model.save(&path)?;
    let model = FittedModel::load(&path)?;
    println!("model written to and read back from {}", path.display());

    let predictions = predict_batch(test.features(), &model)?;
    let labels: Vec<usize> = predictions.iter().map(|p| p.label).collect();
    println!("held-out macro F1: {:.4}", f1_score(&labels, test.labels()));
    for (row, p) in predictions.iter().take(5).enumerate() {
        println!(
            "  row {row}: class {} probabilities {:.3}",
            p.label + 1,
            p.probabilities
        );
    }
    Ok(())
}
