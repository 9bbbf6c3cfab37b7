//! Proximal operators of the two penalties.

use ndarray::Axis;

use crate::error::{Error, Result};
use crate::linalg::{randomized_svt, DenseMatrix, RngSeed, SvdFactors};

/// Step size paired with a penalty weight; the prox threshold is their
/// product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxStep {
    step: f64,
    lambda: f64,
}

impl ProxStep {
    pub fn new(step: f64, lambda: f64) -> Result<Self> {
        if !(step > 0.0) || !(lambda >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "prox step needs step > 0 and lambda >= 0, got ({step}, {lambda})"
            )));
        }
        Ok(ProxStep { step, lambda })
    }

    pub fn threshold(&self) -> f64 {
        self.step * self.lambda
    }
}

/// Row-wise group soft-thresholding: row `i` becomes
/// `(1 − t/‖row_i‖)₊ · row_i`.
pub fn prox_group_l1(u_hat: &DenseMatrix, t: f64) -> DenseMatrix {
    assert!(t >= 0.0, "threshold must be non-negative");
    let mut out = u_hat.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm <= t || norm == 0.0 {
            row.fill(0.0);
        } else {
            row *= 1.0 - t / norm;
        }
    }
    out
}

/// Singular-value soft-thresholding by `t`; `rank_hint` seeds the
/// randomized rank search.
pub fn prox_nuclear(
    upsilon_hat: &DenseMatrix,
    t: f64,
    rank_hint: usize,
    seed: RngSeed,
) -> Result<(DenseMatrix, SvdFactors)> {
    randomized_svt(upsilon_hat, t, rank_hint.max(1), seed)
}
