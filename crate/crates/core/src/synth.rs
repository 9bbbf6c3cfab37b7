//! Synthetic instances with low-rank heterogeneity.
//!
//! Three mechanisms produce a low-rank `pI × N` heterogeneity matrix:
//! a Gaussian factor model, a partition of the samples into clusters that
//! share (up to jitter) one latent column, and an explicit `W Vᵀ`
//! factorization. Labels are drawn from the model's class probabilities at
//! the generating parameters.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, RngSeed};
use crate::model::{linear_predictors, softmax, Dataset, Heterogeneity, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// `Υ = Γ H` with `Γ` (pI × r) scaled by `scale` and `H` standard normal.
    GaussianLowRank { rank: usize, scale: f64 },
    /// `clusters` centroid columns; each sample gets its centroid plus a
    /// jitter drawn uniformly from the ball of radius `jitter`.
    Clustered {
        clusters: usize,
        jitter: f64,
        scale: f64,
    },
    /// `Υ = W Vᵀ` with independent normal factors; `scale` multiplies `W`.
    Factorized { rank: usize, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub num_classes: usize,
    pub scenario: Scenario,
    /// Generating intercepts; drawn N(0, 0.25) when absent.
    pub alpha: Option<Vec<f64>>,
    /// Generating homogeneous effects (p × I, row-major); drawn when absent.
    pub homogeneous: Option<Vec<Vec<f64>>>,
    /// Fraction of rows of the drawn `U` set exactly to zero.
    pub zero_row_fraction: f64,
    /// Standard deviation of the drawn `U` entries.
    pub homogeneous_scale: f64,
    /// Bernoulli(0.5) dummy features when true, standard normal otherwise.
    pub binary_features: bool,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(n_samples: usize, n_features: usize, num_classes: usize, scenario: Scenario) -> Self {
        SynthSpec {
            n_samples,
            n_features,
            num_classes,
            scenario,
            alpha: None,
            homogeneous: None,
            zero_row_fraction: 0.0,
            homogeneous_scale: 1.0,
            binary_features: true,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        let (n, p, classes) = (self.n_samples, self.n_features, self.num_classes);
        if n == 0 || p == 0 || classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need N >= 1, p >= 1, I >= 2; got ({n}, {p}, {classes})"
            )));
        }
        let cap = (p * classes).min(n);
        let (rank, scale) = match self.scenario {
            Scenario::GaussianLowRank { rank, scale } => (rank, scale),
            Scenario::Factorized { rank, scale } => (rank, scale),
            Scenario::Clustered {
                clusters,
                jitter,
                scale,
            } => {
                if !(jitter >= 0.0) {
                    return Err(Error::InvalidInput(format!("jitter {jitter} must be >= 0")));
                }
                if clusters == 0 {
                    return Err(Error::InvalidInput("need at least one cluster".into()));
                }
                (clusters, scale)
            }
        };
        if rank > cap {
            return Err(Error::InvalidInput(format!(
                "rank/cluster count {rank} exceeds min(pI, N) = {cap}"
            )));
        }
        if !(scale >= 0.0) || !(0.0..=1.0).contains(&self.zero_row_fraction) {
            return Err(Error::InvalidInput("invalid scale or zero-row fraction".into()));
        }
        if let Some(a) = &self.alpha {
            if a.len() != classes {
                return Err(Error::DimensionMismatch(format!(
                    "alpha has {} entries for {classes} classes",
                    a.len()
                )));
            }
        }
        if let Some(u) = &self.homogeneous {
            if u.len() != p || u.iter().any(|r| r.len() != classes) {
                return Err(Error::DimensionMismatch(
                    "homogeneous effects must be p x I".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthInstance {
    pub dataset: Dataset,
    pub truth: ModelParams,
    /// Cluster of each sample (clustered scenario only).
    pub clusters: Option<Vec<usize>>,
}

fn features(spec: &SynthSpec) -> Array2<f64> {
    let (n, p) = (spec.n_samples, spec.n_features);
    let seed = RngSeed(spec.seed).child(1);
    if spec.binary_features {
        let mut rng = seed.rng();
        let coin = Bernoulli::new(0.5).expect("valid probability");
        Array2::from_shape_fn((n, p), |_| if coin.sample(&mut rng) { 1.0 } else { 0.0 })
    } else {
        gaussian_matrix(n, p, seed)
    }
}

fn homogeneous_part(spec: &SynthSpec) -> (Array1<f64>, Array2<f64>) {
    let (p, classes) = (spec.n_features, spec.num_classes);
    let alpha = match &spec.alpha {
        Some(a) => Array1::from(a.clone()),
        None => {
            gaussian_matrix(1, classes, RngSeed(spec.seed).child(2))
                .row(0)
                .to_owned()
                * 0.5
        }
    };
    let u = match &spec.homogeneous {
        Some(rows) => Array2::from_shape_fn((p, classes), |(i, j)| rows[i][j]),
        None => {
            let mut u = gaussian_matrix(p, classes, RngSeed(spec.seed).child(3)) * spec.homogeneous_scale;
            let zeros = (spec.zero_row_fraction * p as f64).round() as usize;
            let mut rows: Vec<usize> = (0..p).collect();
            rows.shuffle(&mut RngSeed(spec.seed).child(4).rng());
            for &i in rows.iter().take(zeros) {
                u.row_mut(i).fill(0.0);
            }
            u
        }
    };
    (alpha, u)
}

fn finish(spec: &SynthSpec, upsilon: Array2<f64>, clusters: Option<Vec<usize>>) -> Result<SynthInstance> {
    let x = features(spec);
    let (alpha, u) = homogeneous_part(spec);
    let v = linear_predictors(&x, &alpha, &u, &upsilon);
    let mut rng = RngSeed(spec.seed).child(9).rng();
    let labels = v
        .axis_iter(Axis(0))
        .map(|row| {
            let probs = softmax(row);
            let draw: f64 = rng.random();
            let mut acc = 0.0;
            for (j, p) in probs.iter().enumerate() {
                acc += p;
                if draw < acc {
                    return j;
                }
            }
            probs.len() - 1
        })
        .collect();
    let dataset = Dataset::unnamed(x, labels, spec.num_classes)?;
    Ok(SynthInstance {
        dataset,
        truth: ModelParams {
            alpha,
            u,
            upsilon: Heterogeneity::Dense(upsilon),
        },
        clusters,
    })
}

pub fn gen_gaussian_lowrank(spec: &SynthSpec) -> Result<SynthInstance> {
    spec.validate()?;
    let Scenario::GaussianLowRank { rank, scale } = spec.scenario else {
        return Err(Error::InvalidInput(
            "expected the gaussian low-rank scenario".into(),
        ));
    };
    let rows = spec.n_features * spec.num_classes;
    let upsilon = if rank == 0 {
        Array2::zeros((rows, spec.n_samples))
    } else {
        let gamma = gaussian_matrix(rows, rank, RngSeed(spec.seed).child(5)) * scale;
        let h = gaussian_matrix(rank, spec.n_samples, RngSeed(spec.seed).child(6));
        gamma.dot(&h)
    };
    finish(spec, upsilon, None)
}

pub fn gen_clustered(spec: &SynthSpec) -> Result<SynthInstance> {
    spec.validate()?;
    let Scenario::Clustered {
        clusters,
        jitter,
        scale,
    } = spec.scenario
    else {
        return Err(Error::InvalidInput("expected the clustered scenario".into()));
    };
    let rows = spec.n_features * spec.num_classes;
    let n = spec.n_samples;
    let centroids = gaussian_matrix(rows, clusters, RngSeed(spec.seed).child(5)) * scale;
    // balanced assignment, shuffled
    let mut assignment: Vec<usize> = (0..n).map(|i| i % clusters).collect();
    assignment.shuffle(&mut RngSeed(spec.seed).child(6).rng());
    let mut upsilon = Array2::zeros((rows, n));
    let mut rng = RngSeed(spec.seed).child(7).rng();
    for (col, &c) in assignment.iter().enumerate() {
        let mut column = centroids.column(c).to_owned();
        if jitter > 0.0 {
            let dir: Array1<f64> = (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.dot(&dir).sqrt();
            let radius = jitter * rng.random::<f64>().powf(1.0 / rows as f64);
            if norm > 0.0 {
                column += &(dir * (radius / norm));
            }
        }
        upsilon.column_mut(col).assign(&column);
    }
    finish(spec, upsilon, Some(assignment))
}

pub fn gen_factorized(spec: &SynthSpec) -> Result<SynthInstance> {
    spec.validate()?;
    let Scenario::Factorized { rank, scale } = spec.scenario else {
        return Err(Error::InvalidInput("expected the factorized scenario".into()));
    };
    let rows = spec.n_features * spec.num_classes;
    let upsilon = if rank == 0 {
        Array2::zeros((rows, spec.n_samples))
    } else {
        let w = gaussian_matrix(rows, rank, RngSeed(spec.seed).child(5)) * scale;
        let v = gaussian_matrix(spec.n_samples, rank, RngSeed(spec.seed).child(6));
        w.dot(&v.t())
    };
    finish(spec, upsilon, None)
}

/// Dispatches on the scenario.
pub fn generate(spec: &SynthSpec) -> Result<SynthInstance> {
    match spec.scenario {
        Scenario::GaussianLowRank { .. } => gen_gaussian_lowrank(spec),
        Scenario::Clustered { .. } => gen_clustered(spec),
        Scenario::Factorized { .. } => gen_factorized(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{numerical_rank, svd_exact};
    use crate::model::class_probabilities;
    use crate::model::HeterogeneitySource;

    fn rank_of(inst: &SynthInstance) -> usize {
        numerical_rank(&svd_exact(&inst.truth.upsilon.to_dense()).unwrap().s)
    }

    #[test]
    fn gaussian_rank_bounds() {
        let spec = SynthSpec::new(100, 4, 3, Scenario::GaussianLowRank { rank: 0, scale: 1.0 });
        assert!(gen_gaussian_lowrank(&spec).unwrap().truth.upsilon.is_zero());
        let spec = SynthSpec::new(100, 4, 3, Scenario::GaussianLowRank { rank: 2, scale: 1.0 });
        assert_eq!(rank_of(&gen_gaussian_lowrank(&spec).unwrap()), 2);
    }

    #[test]
    fn clustered_rank_and_distances() {
        let spec = SynthSpec::new(
            60,
            3,
            3,
            Scenario::Clustered {
                clusters: 3,
                jitter: 0.0,
                scale: 1.0,
            },
        );
        let inst = gen_clustered(&spec).unwrap();
        assert!(rank_of(&inst) <= 3);

        let eps = 0.2;
        let spec = SynthSpec::new(
            60,
            3,
            3,
            Scenario::Clustered {
                clusters: 3,
                jitter: eps,
                scale: 1.0,
            },
        )
        .with_seed(4);
        let inst = gen_clustered(&spec).unwrap();
        let ups = inst.truth.upsilon.to_dense();
        let clusters = inst.clusters.unwrap();
        for a in 0..60 {
            for b in 0..60 {
                if clusters[a] == clusters[b] {
                    let d = &ups.column(a) - &ups.column(b);
                    assert!(d.dot(&d).sqrt() <= 2.0 * eps + 1e-12);
                }
            }
        }
        // best rank-τ approximation error bounded by the jitter budget
        let s = svd_exact(&ups).unwrap().s;
        let tail: f64 = s.iter().skip(3).map(|x| x * x).sum::<f64>().sqrt();
        assert!(tail <= eps * (60f64).sqrt());
    }

    #[test]
    fn factorized_rank_and_determinism() {
        let spec = SynthSpec::new(50, 3, 2, Scenario::Factorized { rank: 1, scale: 1.0 }).with_seed(3);
        let inst = gen_factorized(&spec).unwrap();
        assert_eq!(rank_of(&inst), 1);
        let spec = SynthSpec::new(50, 3, 2, Scenario::Factorized { rank: 3, scale: 1.0 }).with_seed(3);
        let a = gen_factorized(&spec).unwrap();
        let b = gen_factorized(&spec).unwrap();
        assert_eq!(rank_of(&a), 3);
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn rank_above_cap_is_rejected() {
        let spec = SynthSpec::new(5, 1, 2, Scenario::Factorized { rank: 3, scale: 1.0 });
        assert!(generate(&spec).is_err());
        let spec = SynthSpec::new(
            5,
            1,
            2,
            Scenario::Clustered {
                clusters: 2,
                jitter: -1.0,
                scale: 1.0,
            },
        );
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn zero_rows_are_planted() {
        let mut spec = SynthSpec::new(20, 10, 3, Scenario::GaussianLowRank { rank: 1, scale: 1.0 });
        spec.zero_row_fraction = 0.4;
        let inst = generate(&spec).unwrap();
        let zero_rows = inst
            .truth
            .u
            .axis_iter(Axis(0))
            .filter(|r| r.iter().all(|&x| x == 0.0))
            .count();
        assert_eq!(zero_rows, 4);
    }

    #[test]
    fn label_frequencies_match_model_probabilities() {
        // chi-square goodness of fit of the empirical class counts against
        // the summed model probabilities, N = 10000, 3 classes (2 dof):
        // the 0.001 critical value is 13.816
        let spec =
            SynthSpec::new(10_000, 3, 3, Scenario::GaussianLowRank { rank: 2, scale: 0.5 }).with_seed(11);
        let inst = generate(&spec).unwrap();
        let mut expected = [0.0; 3];
        for n in 0..10_000 {
            let p = class_probabilities(
                &inst.truth,
                inst.dataset.features().row(n),
                HeterogeneitySource::Sample(n),
            )
            .unwrap();
            for j in 0..3 {
                expected[j] += p[j];
            }
        }
        let counts = inst.dataset.class_counts();
        let chi2: f64 = (0..3)
            .map(|j| (counts[j] as f64 - expected[j]).powi(2) / expected[j])
            .sum();
        assert!(chi2 < 13.816, "chi2 = {chi2}");
    }
}
