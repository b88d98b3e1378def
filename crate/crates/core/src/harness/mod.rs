//! Synthetic data, adjacency construction and the experiment drivers behind
//! the command-line tool and the acceptance suite.

pub mod adjacency;
pub mod audit;
pub mod bench;
pub mod calibrate;
pub mod sweep;
pub mod synth;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Failure probability budget behind the default outlier threshold.
pub const DEFAULT_BETA: f64 = 0.1;

/// Default outlier threshold `4 (d + 2 ln(2n²/β))`.
pub fn default_lambda0(d: usize, n: usize) -> f64 {
    let n = n.max(1) as f64;
    4.0 * (d as f64 + 2.0 * (2.0 * n * n / DEFAULT_BETA).ln())
}

/// Independent generator stream for trial `index` under `master_seed`.
pub fn trial_rng(master_seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Median, first and third quartile of `values`; infinite entries sort last.
/// Returns NaNs for an empty slice.
pub fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        if lo == hi || v[lo] == v[hi] {
            v[lo]
        } else {
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        }
    };
    (at(0.5), at(0.25), at(0.75))
}
