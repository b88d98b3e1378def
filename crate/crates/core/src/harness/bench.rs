//! Wall-clock comparison of the incremental ladder against the naive one,
//! with a replay check of the downdated norms against fresh factorizations.

use std::time::Instant;

use serde::Serialize;

use super::synth::{CovarianceSpec, Distribution, GenSpec, OutlierSpec, generate};
use crate::error::Result;
use crate::good_subsets::{OutlierLadder, SubsetLadder, subset_ladder, subset_ladder_full};
use crate::linalg::{Dataset, PrecisionState, pair_and_rescale};
use crate::oracle::{naive_ladder, naive_norms};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    /// Source rows; the ladder runs on the `n/2` paired rows.
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub lambda0: f64,
    /// Planted outliers, to force some removals.
    pub outliers: usize,
    pub seed: u64,
    /// Also replay the downdates against fresh factorizations.
    pub verify_downdates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub config: BenchConfig,
    pub fast_ms: f64,
    pub naive_ms: f64,
    pub speedup: f64,
    /// Every level the fast path stored equals the naive level.
    pub sets_match: bool,
    pub removed: usize,
    /// Largest relative gap between downdated and freshly computed norms.
    pub max_downdate_error: Option<f64>,
}

fn bench_data(config: &BenchConfig) -> Result<Dataset> {
    let spec = GenSpec {
        distribution: if config.outliers > 0 {
            Distribution::GaussianWithPlantedOutliers
        } else {
            Distribution::Gaussian
        },
        outliers: (config.outliers > 0).then_some(OutlierSpec {
            count: config.outliers,
            magnitude: 10.0,
        }),
        ..GenSpec::gaussian(config.n, config.d, CovarianceSpec::RotatedDiagonal { condition: 10.0 }, config.seed)
    };
    Ok(pair_and_rescale(&generate(&spec)?.data)?.into_dataset())
}

/// Relative gap used for norm comparisons; equal infinities count as zero.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }
}

/// Replays the ladder's removals level by level through rank-one downdates
/// and compares all norms with a fresh factorization at every level.
pub fn replay_downdates(y: &Dataset, ladder: &SubsetLadder) -> f64 {
    let mut state = PrecisionState::new(y, y.n() as f64);
    let mut worst = 0.0f64;
    let top = ladder.levels() - 1;
    for level in (0..=top).rev() {
        let Some(set) = ladder.set(level) else { break };
        let mut keep = vec![false; y.n()];
        set.iter().for_each(|&i| keep[i] = true);
        for i in 0..y.n() {
            if !keep[i] {
                state.downdate(i);
            }
        }
        let fresh = naive_norms(y, &set);
        for (a, b) in state.norms().iter().zip(&fresh) {
            worst = worst.max(relative_gap(*a, *b));
        }
    }
    worst
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchResult> {
    let y = bench_data(config)?;
    let ladder = OutlierLadder::new(config.lambda0, config.k)?;

    let start = Instant::now();
    let fast = subset_ladder(&y, &ladder);
    let fast_ms = start.elapsed().as_secs_f64() * 1e3;

    let start = Instant::now();
    let naive = naive_ladder(&y, &ladder);
    let naive_ms = start.elapsed().as_secs_f64() * 1e3;

    let sets_match = (0..ladder.levels()).all(|l| match fast.set(l) {
        Some(s) => Some(s) == naive.set(l),
        None => true,
    });
    let removed = y.n() - naive.size(0).unwrap_or(0);
    let max_downdate_error = config.verify_downdates.then(|| replay_downdates(&y, &subset_ladder_full(&y, &ladder)));
    Ok(BenchResult {
        config: config.clone(),
        fast_ms,
        naive_ms,
        speedup: naive_ms / fast_ms.max(1e-6),
        sets_match,
        removed,
        max_downdate_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoke_bench_is_fast_and_consistent() {
        let config = BenchConfig {
            n: 100,
            d: 3,
            k: 4,
            lambda0: 6.0,
            outliers: 3,
            seed: 1,
            verify_downdates: true,
        };
        let out = run_bench(&config).unwrap();
        assert!(out.sets_match);
        assert!(out.fast_ms < 1000.0 && out.naive_ms < 1000.0);
        assert!(out.max_downdate_error.unwrap() < 1e-6);
    }
}
