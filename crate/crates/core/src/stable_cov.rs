//! Stable covariance: average the top half of the good-subset ladder into a
//! weight vector and report the weighted second moment with its score.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::good_subsets::{OutlierLadder, Score, SubsetLadder, covariance_score, run_ladder};
use crate::linalg::{Dataset, PsdMatrix, pair_and_rescale, weighted_second_moment};

#[derive(Debug, Clone)]
pub struct StableCovOutput {
    pub sigma_hat: PsdMatrix,
    /// `None` when `sigma_hat` is singular, which only happens with `score = k`.
    pub sigma_hat_inv: Option<DMatrix<f64>>,
    pub weights: Vec<f64>,
    pub score: Score,
    pub ladder: SubsetLadder,
}

/// Pairs `x` and runs [`stable_covariance_paired`] on the result.
pub fn stable_covariance(x: &Dataset, lambda0: f64, k: usize) -> Result<StableCovOutput> {
    check_params(lambda0, k)?;
    let y = pair_and_rescale(x)?;
    stable_covariance_paired(&y, lambda0, k)
}

/// Stable covariance of already paired, mean-zero rows `y`.
pub fn stable_covariance_paired(y: &Dataset, lambda0: f64, k: usize) -> Result<StableCovOutput> {
    check_params(lambda0, k)?;
    if y.n() == 0 {
        return Err(Error::TooFewSamples(0));
    }
    let outliers = OutlierLadder::new(lambda0, k)?;
    let run = run_ladder(y, &outliers, true);
    let ladder = run.ladder;
    let score = covariance_score(&ladder);

    let scale = 1.0 / (k as f64 * y.n() as f64);
    let weights: Vec<f64> = ladder.top_half_counts().into_iter().map(|c| c as f64 * scale).collect();
    let sigma_hat = weighted_second_moment(y, &weights)?;

    // Uniform weights over S_{k+1} = S_{2k} reproduce the matrix whose
    // inverse the incremental pass already holds.
    let uniform_top = matches!(
        (ladder.size(k + 1), ladder.size(2 * k)),
        (Some(a), Some(b)) if a == b
    );
    let sigma_hat_inv = match run.upper_inverse {
        Some(inv) if uniform_top => Some(inv),
        _ => sigma_hat.inverse().cloned(),
    };

    Ok(StableCovOutput {
        sigma_hat,
        sigma_hat_inv,
        weights,
        score,
        ladder,
    })
}

fn check_params(lambda0: f64, k: usize) -> Result<()> {
    if !(lambda0.is_finite() && lambda0 >= 1.0) {
        return Err(Error::ParameterRange(format!("lambda0 must be at least 1, got {lambda0}")));
    }
    if k == 0 {
        return Err(Error::ParameterRange("k must be at least 1".into()));
    }
    Ok(())
}
