//! The three generators of low-rank heterogeneity and the CSV format read
//! by the command line.

use latent_logit::cli::data::write_dataset;
use latent_logit::linalg::{numerical_rank, svd_exact};
use latent_logit::synth::{generate, Scenario, SynthSpec};

fn main() -> latent_logit::Result<()> {
    let scenarios = [
        Scenario::GaussianLowRank { rank: 2, scale: 1.0 },
        Scenario::Clustered {
            clusters: 3,
            jitter: 0.0,
            scale: 1.0,
        },
        Scenario::Factorized { rank: 1, scale: 1.0 },
    ];
    for scenario in scenarios {
        let instance = generate(&SynthSpec::new(100, 4, 3, scenario.clone()).with_seed(1))?;
        let s = svd_exact(&instance.truth.upsilon.to_dense())?.s;
        println!(
            "{scenario:?}: heterogeneity rank {}, class counts {:?}",
            numerical_rank(&s),
            instance.dataset.class_counts()
        );
    }

    let instance =
        generate(&SynthSpec::new(5, 3, 2, Scenario::Factorized { rank: 1, scale: 1.0 }).with_seed(2))?;
    let mut out = Vec::new();
    write_dataset(&instance.dataset, &mut out)?;
    print!("{}", String::from_utf8(out).expect("csv is utf-8"));
    Ok(())
}
