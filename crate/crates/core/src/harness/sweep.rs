//! Accuracy sweeps over the sample size for the three private estimators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::synth::{CovarianceSpec, Distribution, GenSpec, generate};
use super::{default_lambda0, quartiles, trial_rng};
use crate::error::Result;
use crate::mechanism::{Estimate, learn_gaussian, private_covariance, private_mean};
use crate::oracle::matrix_distances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepTarget {
    /// `‖μ̃ − μ‖_Σ`.
    Mean,
    /// `‖Σ^{−1/2} Σ̃ Σ^{−1/2} − I‖₂`.
    Covariance,
    /// Larger of the mean error and the Frobenius covariance error.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub target: SweepTarget,
    pub distribution: Distribution,
    pub d: usize,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub eps: f64,
    pub delta: f64,
    /// `None` uses the default threshold for each `(d, n)`.
    pub lambda0: Option<f64>,
    pub covariance: CovarianceSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: usize,
    pub data_seed: u64,
    pub passed: bool,
    /// `+∞` for FAIL.
    pub error: f64,
    pub psd: Option<bool>,
    pub score1: Option<usize>,
    pub score2: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub n: usize,
    pub lambda0: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub records: Vec<TrialRecord>,
    pub cells: Vec<CellSummary>,
    pub strictly_decreasing: bool,
    /// Every released covariance was positive semidefinite.
    pub all_psd: bool,
}

fn is_psd(m: &nalgebra::DMatrix<f64>) -> bool {
    let eig = m.clone().symmetric_eigenvalues();
    eig.min() >= -1e-9 * eig.max().abs().max(1.0)
}

/// Runs every cell of the grid. FAIL counts as infinite error, so a cell
/// that fails in at least half its trials has an infinite median.
pub fn run_accuracy_sweep(config: &SweepConfig) -> Result<SweepResult> {
    let mut records = Vec::new();
    let mut cells = Vec::new();
    for (c, &n) in config.ns.iter().enumerate() {
        let lambda0 = config.lambda0.unwrap_or_else(|| default_lambda0(config.d, n));
        let mut errors = Vec::with_capacity(config.trials);
        for t in 0..config.trials {
            let mut rng = trial_rng(config.seed, ((c as u64) << 32) + t as u64);
            let data_seed: u64 = rng.random();
            let spec = GenSpec {
                distribution: config.distribution,
                ..GenSpec::gaussian(n, config.d, config.covariance, data_seed)
            };
            let truth = generate(&spec)?;
            let x = &truth.data;
            let out = match config.target {
                SweepTarget::Mean => private_mean(x, config.eps, config.delta, lambda0, &mut rng)?,
                SweepTarget::Covariance => private_covariance(x, config.eps, config.delta, lambda0, &mut rng)?,
                SweepTarget::Gaussian => learn_gaussian(x, config.eps, config.delta, lambda0, &mut rng)?,
            };
            let mean_error = |m: &[f64]| -> Result<f64> {
                let diff: Vec<f64> = m.iter().zip(&truth.mean).map(|(a, b)| a - b).collect();
                Ok(truth.covariance.mahalanobis_sq(&diff)?.sqrt())
            };
            let (error, psd) = match &out.estimate {
                None => (f64::INFINITY, None),
                Some(Estimate::Mean(m)) => (mean_error(m)?, None),
                Some(Estimate::Covariance(s)) => {
                    (matrix_distances(&truth.covariance, s.entries())?.spectral, Some(is_psd(s.entries())))
                }
                Some(Estimate::Gaussian { mean, covariance }) => {
                    let cov_err = matrix_distances(&truth.covariance, covariance.entries())?.frobenius;
                    (mean_error(mean)?.max(cov_err), Some(is_psd(covariance.entries())))
                }
            };
            errors.push(error);
            records.push(TrialRecord {
                n,
                trial: t,
                data_seed,
                passed: out.passed(),
                error,
                psd,
                score1: out.score1,
                score2: out.score2,
            });
        }
        let (median, q1, q3) = quartiles(&errors);
        cells.push(CellSummary {
            n,
            lambda0,
            median,
            q1,
            q3,
            failures: errors.iter().filter(|e| e.is_infinite()).count(),
        });
    }
    let strictly_decreasing = cells.windows(2).all(|w| w[1].median < w[0].median);
    let all_psd = records.iter().all(|r| r.psd != Some(false));
    Ok(SweepResult {
        config: config.clone(),
        records,
        cells,
        strictly_decreasing,
        all_psd,
    })
}
