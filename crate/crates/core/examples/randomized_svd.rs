//! Randomized against exact SVD on a noisy low-rank matrix, then
//! singular-value thresholding of the same matrix.

use std::time::Instant;

use latent_logit::linalg::{noisy_low_rank, randomized_svd, randomized_svt, svd_exact, RngSeed};

fn main() -> latent_logit::Result<()> {
    let a = noisy_low_rank(300, 1200, 15, 0.1, RngSeed(7));
    let k = 30;

    let start = Instant::now();
    let exact = svd_exact(&a)?.truncate(k);
    let exact_time = start.elapsed();

    let start = Instant::now();
    let approx = randomized_svd(&a, k, RngSeed(8))?;
    let approx_time = start.elapsed();

    let diff = (&approx.s - &exact.s).mapv(|v| v * v).sum().sqrt();
    let rel = diff / exact.s.mapv(|v| v * v).sum().sqrt();
    println!("top {k} singular values of a 300x1200 matrix");
    println!("  exact      {:>10.2?}", exact_time);
    println!("  randomized {:>10.2?}", approx_time);
    println!("  relative l2 error of singular values: {rel:.4}");
    println!(
        "  leading values: exact {:.3} {:.3}, randomized {:.3} {:.3}",
        exact.s[0], exact.s[1], approx.s[0], approx.s[1]
    );

    let rho = exact.s[10];
    let (thresholded, kept) = randomized_svt(&a, rho, 5, RngSeed(9))?;
    println!("thresholding at {rho:.3} keeps {} singular triplets", kept.rank());
    println!("  nuclear norm after thresholding: {:.3}", kept.s.sum());
    println!("  result shape: {:?}", thresholded.dim());
    Ok(())
}
