mod common;

use std::f64::consts::E;

use common::{contaminated, rel};
use fastdp::Dataset;
use fastdp::cores::{ReferenceSet, stable_mean};
use fastdp::good_subsets::{OutlierLadder, covariance_score, is_good_subset, largest_good_subset, subset_ladder_full};
use fastdp::io::{read_bin, read_csv, write_bin, write_csv};
use fastdp::linalg::{PsdMatrix, weighted_second_moment};
use fastdp::mechanism::ptr_pass_probability;
use fastdp::oracle::matrix_distances;
use fastdp::stable_cov::{stable_covariance, stable_covariance_paired};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn data(seed: u64, m: usize, d: usize, rate: f64) -> Dataset {
    contaminated(m, d, rate, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Random invertible matrix with condition number at most about `kappa`.
fn conditioned(seed: u64, d: usize, kappa: f64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let spectrum = DMatrix::from_fn(d, d, |r, c| {
        if r == c { kappa.powf(r as f64 / (d.max(2) - 1) as f64) } else { 0.0 }
    });
    let g2 = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    &q * spectrum * g2.qr().q().transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn good_subsets_grow_with_threshold(seed in any::<u64>(), m in 3usize..40, d in 1usize..4, lo in 1.0f64..6.0, factor in 1.0f64..3.0) {
        let y = data(seed, m, d, 0.2);
        let small = largest_good_subset(&y, lo);
        let big = largest_good_subset(&y, lo * factor);
        prop_assert!(small.iter().all(|i| big.contains(i)));
        prop_assert!(is_good_subset(&y, &big, lo * factor));
    }

    #[test]
    fn ladder_levels_are_nested(seed in any::<u64>(), m in 5usize..80, d in 1usize..4, k in 1usize..6, l0 in 1.0f64..8.0) {
        let y = data(seed, m, d, 0.1);
        let ladder = subset_ladder_full(&y, &OutlierLadder::new(l0, k).unwrap());
        for l in 0..2 * k {
            let lower = ladder.set(l).unwrap();
            let upper = ladder.set(l + 1).unwrap();
            prop_assert!(lower.iter().all(|i| upper.contains(i)), "level {}", l);
        }
    }

    #[test]
    fn removing_a_point_keeps_a_slightly_looser_good_subset(seed in any::<u64>(), m in 24usize..80, d in 1usize..3, j_pick in any::<prop::sample::Index>()) {
        let y = data(seed, m, d, 0.1);
        let lambda = (4.0 * d as f64 + 4.0).min(m as f64 / 2.0);
        let s = largest_good_subset(&y, lambda);
        prop_assume!(!s.is_empty());
        let j = s[j_pick.index(s.len())];
        let rest: Vec<usize> = s.iter().copied().filter(|&i| i != j).collect();
        prop_assert!(is_good_subset(&y, &rest, (2.0 * lambda / m as f64).exp() * lambda));
    }

    #[test]
    fn covariance_weights_are_a_good_weighting(seed in any::<u64>(), m in 100usize..300, d in 1usize..4, k in 1usize..4, l0 in 2.0f64..6.0) {
        prop_assume!(k as f64 <= m as f64 / (2.0 * E * E * l0));
        let y = data(seed, m, d, 0.05);
        let out = stable_covariance_paired(&y, l0, k).unwrap();
        let unit = 1.0 / (k * m) as f64;
        for w in &out.weights {
            let c = w / unit;
            prop_assert!((c - c.round()).abs() < 1e-9 && c.round() <= k as f64);
        }
        let direct = weighted_second_moment(&y, &out.weights).unwrap();
        prop_assert_eq!(out.sigma_hat.entries(), direct.entries());
        if out.score.value() < k && !out.sigma_hat.is_singular() {
            for (i, w) in out.weights.iter().enumerate() {
                if *w > 0.0 {
                    prop_assert!(out.sigma_hat.mahalanobis_sq(y.row(i)).unwrap() <= 2.0 * E * E * l0 * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn adjacent_scores_differ_by_at_most_two(seed in any::<u64>(), m in 60usize..200, d in 1usize..3, row in any::<prop::sample::Index>(), scale in 0.0f64..50.0) {
        let y = data(seed, m, d, 0.05);
        let l0 = d as f64 + 2.0;
        let k = ((m as f64 / (2.0 * E * E * l0)).floor() as usize).max(1);
        prop_assume!(k as f64 <= m as f64 / (2.0 * E * E * l0));
        let i = row.index(m);
        let replacement: Vec<f64> = y.row((i + 1) % m).iter().map(|v| v * scale).collect();
        let y2 = y.with_row(i, &replacement).unwrap();
        let ladder = OutlierLadder::new(l0, k).unwrap();
        let a = subset_ladder_full(&y, &ladder);
        let b = subset_ladder_full(&y2, &ladder);
        prop_assert!(covariance_score(&a).value().abs_diff(covariance_score(&b).value()) <= 2);
        for l in 0..2 * k {
            let upper = b.set(l + 1).unwrap();
            prop_assert!(a.set(l).unwrap().iter().all(|j| *j == i || upper.contains(j)), "level {}", l);
            let upper = a.set(l + 1).unwrap();
            prop_assert!(b.set(l).unwrap().iter().all(|j| *j == i || upper.contains(j)), "level {}", l);
        }
    }

    #[test]
    fn permuting_pairs_permutes_the_output(seed in any::<u64>(), m in 20usize..80, d in 1usize..4, k in 1usize..4) {
        let y = data(seed, m, d, 0.1);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let z = y.select(&perm).unwrap();
        let a = stable_covariance_paired(&y, 4.0, k).unwrap();
        let b = stable_covariance_paired(&z, 4.0, k).unwrap();
        prop_assert_eq!(a.score, b.score);
        for (new, &old) in perm.iter().enumerate() {
            prop_assert_eq!(b.weights[new], a.weights[old]);
        }
        for (p, q) in a.sigma_hat.entries().iter().zip(b.sigma_hat.entries().iter()) {
            prop_assert!(rel(*p, *q) < 1e-9);
        }
    }

    #[test]
    fn estimators_are_affine_equivariant(seed in any::<u64>(), n in 60usize..160, d in 1usize..4, shift in prop::collection::vec(-50.0f64..50.0, 3)) {
        let x = data(seed, n, d, 0.05);
        let a = conditioned(seed ^ 2, d, 100.0);
        let b = &shift[..d];
        let xt = x.map_rows(&a).unwrap().translate(b).unwrap();
        let (l0, k) = (d as f64 + 4.0, 2);
        let c1 = stable_covariance(&x, l0, k).unwrap();
        let c2 = stable_covariance(&xt, l0, k).unwrap();
        prop_assert_eq!(c1.score, c2.score);
        prop_assert_eq!(&c1.weights, &c2.weights);
        let expected = &a * c1.sigma_hat.entries() * a.transpose();
        prop_assert!((c2.sigma_hat.entries() - &expected).norm() <= 1e-6 * expected.norm());
        prop_assume!(!c1.sigma_hat.is_singular());
        let r = ReferenceSet::sample(n, 6 * k + 10, &mut ChaCha8Rng::seed_from_u64(seed));
        let m1 = stable_mean(&x, &c1.sigma_hat, l0, k, &r).unwrap();
        let m2 = stable_mean(&xt, &c2.sigma_hat, l0, k, &r).unwrap();
        prop_assert_eq!(m1.score, m2.score);
        prop_assert_eq!(m1.cores.entry_levels(), m2.cores.entry_levels());
        let mapped: Vec<f64> = (a * nalgebra::DVector::from_column_slice(&m1.mu_hat)).iter().zip(b).map(|(v, s)| v + s).collect();
        let diff: Vec<f64> = mapped.iter().zip(&m2.mu_hat).map(|(p, q)| p - q).collect();
        prop_assert!(c2.sigma_hat.mahalanobis_sq(&diff).unwrap().sqrt() < 1e-6);
    }

    #[test]
    fn matrix_distance_norms_are_ordered(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(d, d + 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let h = DMatrix::from_fn(d, d + 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = PsdMatrix::new(&g * g.transpose());
        let b = &h * h.transpose();
        let m = matrix_distances(&a, &b).unwrap();
        prop_assert!(m.spectral <= m.frobenius * (1.0 + 1e-12));
        prop_assert!(m.frobenius <= m.trace_norm * (1.0 + 1e-12));
        prop_assert!(m.trace_norm <= m.spectral * d as f64 * (1.0 + 1e-12));
        prop_assert!(m.psd_sandwich_gamma >= 0.0 && m.psd_sandwich_gamma <= 1.0);
        let same = matrix_distances(&a, a.entries()).unwrap();
        prop_assert!(same.trace_norm < 1e-9 && same.psd_sandwich_gamma < 1e-9);
    }

    #[test]
    fn reference_sets_are_distinct_and_in_range(seed in any::<u64>(), n in 1usize..300, size in 0usize..400) {
        let r = ReferenceSet::sample(n, size, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(r.len(), size.min(n));
        prop_assert!(r.indices().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(r.indices().iter().all(|&i| i < n));
    }

    #[test]
    fn pass_probability_is_a_nonincreasing_probability(eps in 0.01f64..1.0, delta_frac in 0.001f64..0.1, z in 0.0f64..100.0, dz in 0.0f64..5.0) {
        let delta = delta_frac * eps;
        let p = ptr_pass_probability(z, eps, delta);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(ptr_pass_probability(z + dz, eps, delta) <= p);
    }

    #[test]
    fn files_round_trip(values in prop::collection::vec(-1e300f64..1e300, 1..60), d in 1usize..4) {
        let n = values.len() / d;
        prop_assume!(n > 0);
        let x = Dataset::from_vec(n, d, values[..n * d].to_vec()).unwrap();
        let mut csv = Vec::new();
        write_csv(&x, &mut csv).unwrap();
        prop_assert_eq!(&read_csv(csv.as_slice()).unwrap(), &x);
        let mut bin = Vec::new();
        write_bin(&x, &mut bin).unwrap();
        prop_assert_eq!(&read_bin(bin.as_slice()).unwrap(), &x);
    }
}

/// Each index lands in a reference set of size `s` from `[n]` with
/// probability `s/n`.
#[test]
fn reference_sampling_covers_indices_uniformly() {
    let (n, size, trials) = (200, 50, 4000);
    let mut hits = vec![0usize; n];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..trials {
        for &i in ReferenceSet::sample(n, size, &mut rng).indices() {
            hits[i] += 1;
        }
    }
    let p = size as f64 / n as f64;
    let sd = (trials as f64 * p * (1.0 - p)).sqrt();
    for (i, &h) in hits.iter().enumerate() {
        assert!((h as f64 - trials as f64 * p).abs() < 5.0 * sd, "index {i}: {h}");
    }
}
