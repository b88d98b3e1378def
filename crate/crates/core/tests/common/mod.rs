#![allow(dead_code)]

use fastdp::Dataset;
use rand::Rng;
use rand_distr::StandardNormal;

/// `m` rows of a standard Gaussian in `d` dimensions, each row blown up by a
/// factor in `[3, 30)` with probability `outlier_rate`.
pub fn contaminated<R: Rng>(m: usize, d: usize, outlier_rate: f64, rng: &mut R) -> Dataset {
    let mut data = Vec::with_capacity(m * d);
    for _ in 0..m {
        let scale = if rng.random::<f64>() < outlier_rate {
            rng.random_range(3.0..30.0)
        } else {
            1.0
        };
        data.extend((0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)));
    }
    Dataset::from_vec(m, d, data).unwrap()
}

/// Relative gap with equal values (including equal infinities) at zero.
pub fn rel(a: f64, b: f64) -> f64 {
    if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) }
}
