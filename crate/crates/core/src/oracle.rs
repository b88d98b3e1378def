//! Brute-force and naive reference implementations for checking the fast
//! paths, plus matrix closeness metrics.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::cores::{ReferenceSet, sq_dist, whiten};
use crate::error::{Error, Result};
use crate::good_subsets::{OutlierLadder, SubsetLadder, is_good_subset};
use crate::linalg::{Dataset, PsdMatrix, subset_second_moment};

const MAX_BRUTE_ROWS: usize = 12;
const MAX_HAMMING_ROWS: usize = 8;
const MAX_HAMMING_RADIUS: usize = 2;

/// Largest λ-good subset by exhaustive enumeration over all `2^m` subsets.
/// Errors if the inclusion-maximal good subsets are not unique.
pub fn brute_largest_good_subset(y: &Dataset, lambda: f64) -> Result<Vec<usize>> {
    let m = y.n();
    if m > MAX_BRUTE_ROWS {
        return Err(Error::OracleTooLarge(format!("m = {m} exceeds {MAX_BRUTE_ROWS}")));
    }
    let members = |mask: u32| -> Vec<usize> { (0..m).filter(|i| mask >> i & 1 == 1).collect() };
    let good: Vec<u32> = (0..1u32 << m).filter(|&mask| is_good_subset(y, &members(mask), lambda)).collect();
    let maximal: Vec<u32> = good
        .iter()
        .copied()
        .filter(|&a| !good.iter().any(|&b| b != a && a & b == a))
        .collect();
    match maximal.as_slice() {
        [only] => Ok(members(*only)),
        _ => Err(Error::NonUniqueMaximum),
    }
}

/// Fewest row replacements that make all of `[m]` λ-good, searching
/// replacement rows in `{0} ∪ rows of y`. `None` means more than `r_max`.
pub fn brute_hamming_to_no_outlier(y: &Dataset, lambda: f64, r_max: usize) -> Result<Option<usize>> {
    let m = y.n();
    if m > MAX_HAMMING_ROWS || r_max > MAX_HAMMING_RADIUS {
        return Err(Error::OracleTooLarge(format!(
            "m = {m}, r_max = {r_max} (limits {MAX_HAMMING_ROWS}, {MAX_HAMMING_RADIUS})"
        )));
    }
    let mut alphabet = vec![vec![0.0; y.d()]];
    alphabet.extend(y.rows().map(<[f64]>::to_vec));
    let all: Vec<usize> = (0..m).collect();
    let fits = |positions: &[usize], choices: &[usize]| -> Result<bool> {
        let mut z = y.clone();
        for (&p, &c) in positions.iter().zip(choices) {
            z = z.with_row(p, &alphabet[c])?;
        }
        Ok(is_good_subset(&z, &all, lambda))
    };
    if fits(&[], &[])? {
        return Ok(Some(0));
    }
    for r in 1..=r_max.min(m) {
        for positions in combinations(m, r) {
            for choices in product(alphabet.len(), r) {
                if fits(&positions, &choices)? {
                    return Ok(Some(r));
                }
            }
        }
    }
    Ok(None)
}

fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    if r == 0 {
        return vec![Vec::new()];
    }
    (r - 1..n)
        .flat_map(|last| {
            combinations(last, r - 1).into_iter().map(move |mut c| {
                c.push(last);
                c
            })
        })
        .collect()
}

fn product(base: usize, r: usize) -> Vec<Vec<usize>> {
    (0..base.pow(r as u32))
        .map(|mut code| {
            (0..r)
                .map(|_| {
                    let digit = code % base;
                    code /= base;
                    digit
                })
                .collect()
        })
        .collect()
}

/// Greedy fixpoint that refactorizes the second moment from scratch on every
/// pass. Returns the sorted survivors.
fn fresh_greedy(y: &Dataset, lambda: f64) -> Vec<usize> {
    let m = y.n();
    let mut active = vec![true; m];
    loop {
        let sigma = PsdMatrix::new(subset_second_moment(y, &active, m as f64));
        let mut removed = false;
        for i in 0..m {
            if active[i] && sigma.mahalanobis_sq(y.row(i)).unwrap_or(f64::INFINITY) > lambda {
                active[i] = false;
                removed = true;
            }
        }
        if !removed {
            return (0..m).filter(|&i| active[i]).collect();
        }
    }
}

/// Every level computed independently from the full index set.
pub fn naive_ladder(y: &Dataset, ladder: &OutlierLadder) -> SubsetLadder {
    let sets: Vec<Vec<usize>> = (0..ladder.levels()).map(|l| fresh_greedy(y, ladder.threshold(l))).collect();
    SubsetLadder::from_sets(y.n(), ladder.k(), &sets).expect("largest good subsets are nested")
}

/// Squared norm of every row under `(1/m) Σ_{j∈subset} y_j y_jᵀ`, freshly factorized.
pub fn naive_norms(y: &Dataset, subset: &[usize]) -> Vec<f64> {
    let mut mask = vec![false; y.n()];
    subset.iter().for_each(|&i| mask[i] = true);
    let sigma = PsdMatrix::new(subset_second_moment(y, &mask, y.n() as f64));
    y.rows().map(|r| sigma.mahalanobis_sq(r).unwrap_or(f64::NAN)).collect()
}

/// Norms of `A^{−1/2} B A^{−1/2} − I` and the smallest `γ` with
/// `(1−γ)A ⪯ B ⪯ A/(1−γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatrixDistances {
    pub trace_norm: f64,
    pub frobenius: f64,
    pub spectral: f64,
    pub psd_sandwich_gamma: f64,
}

/// Relative eigenvalues of `B` against positive definite `A`.
pub fn relative_eigenvalues(a: &PsdMatrix, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = a.dim();
    if b.nrows() != d || b.ncols() != d {
        return Err(Error::Shape(format!("matrices are {d}x{d} and {}x{}", b.nrows(), b.ncols())));
    }
    let l = a.factor().ok_or(Error::SingularCovariance)?;
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or(Error::SingularCovariance)?;
    let c = &l_inv * b * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    Ok(SymmetricEigen::new(c).eigenvalues.iter().copied().collect())
}

pub fn matrix_distances(a: &PsdMatrix, b: &DMatrix<f64>) -> Result<MatrixDistances> {
    let mu = relative_eigenvalues(a, b)?;
    let dev = mu.iter().map(|v| (v - 1.0).abs());
    let lo = mu.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gamma = if mu.is_empty() {
        0.0
    } else {
        0.0f64.max(1.0 - lo).max(1.0 - 1.0 / hi)
    };
    Ok(MatrixDistances {
        trace_norm: dev.clone().sum(),
        frobenius: dev.clone().map(|v| v * v).sum::<f64>().sqrt(),
        spectral: dev.fold(0.0, f64::max),
        psd_sandwich_gamma: gamma,
    })
}

/// Outcome of the scalable degree-representativeness check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    Holds,
    Violated,
    Inconclusive,
}

/// Degree-representativeness without the quadratic scan. Points within
/// whitened radius `√(e²λ₀)/2` of the whitened mean form a clique `C` at
/// threshold `e²λ₀`, so for them both neighbor fractions lie in
/// `[|C|/n, 1]` and `[|R∩C|/|R|, 1]`. Points outside `C` are counted
/// exactly; more than `max_exact` of them gives up.
pub fn certify_degree_representative(
    x: &Dataset,
    sigma_hat: &PsdMatrix,
    lambda0: f64,
    reference: &ReferenceSet,
    max_exact: usize,
) -> Result<Certificate> {
    if reference.is_empty() || x.n() == 0 {
        return Ok(Certificate::Inconclusive);
    }
    let w = whiten(x, sigma_hat)?;
    let (n, d) = (x.n(), x.d());
    let point = |i: usize| &w[i * d..(i + 1) * d];
    let mut center = vec![0.0; d];
    for i in 0..n {
        center.iter_mut().zip(point(i)).for_each(|(c, v)| *c += v / n as f64);
    }
    let lambda = lambda0 * std::f64::consts::E.powi(2);
    let radius_sq = lambda / 4.0;
    let inside: Vec<bool> = (0..n).map(|i| sq_dist(point(i), &center) <= radius_sq).collect();
    let outside: Vec<usize> = (0..n).filter(|&i| !inside[i]).collect();
    if outside.len() > max_exact {
        return Ok(Certificate::Inconclusive);
    }
    let (nf, rf) = (n as f64, reference.len() as f64);
    let clique = (n - outside.len()) as f64;
    let clique_in_ref = reference.indices().iter().filter(|&&j| inside[j]).count() as f64;
    if (1.0 - clique / nf).max(1.0 - clique_in_ref / rf) > 1.0 / 6.0 {
        return Ok(Certificate::Inconclusive);
    }
    let mut in_ref = vec![false; n];
    reference.indices().iter().for_each(|&j| in_ref[j] = true);
    for &i in &outside {
        let (mut z, mut zr) = (0usize, 0usize);
        for j in 0..n {
            if sq_dist(point(i), point(j)) <= lambda {
                z += 1;
                zr += in_ref[j] as usize;
            }
        }
        if (zr as f64 / rf - z as f64 / nf).abs() > 1.0 / 6.0 {
            return Ok(Certificate::Violated);
        }
    }
    Ok(Certificate::Holds)
}

/// One oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub instance: String,
    pub oracle_value: f64,
    pub fast_value: f64,
    pub agree: bool,
    pub discrepancy: f64,
}

impl OracleReport {
    /// Agreement means relative discrepancy at most `tolerance`.
    pub fn compare(instance: impl Into<String>, oracle_value: f64, fast_value: f64, tolerance: f64) -> Self {
        let discrepancy = if oracle_value == fast_value {
            0.0
        } else {
            (oracle_value - fast_value).abs() / oracle_value.abs().max(fast_value.abs())
        };
        Self {
            instance: instance.into(),
            oracle_value,
            fast_value,
            agree: discrepancy <= tolerance,
            discrepancy,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::good_subsets::{largest_good_subset, subset_ladder_full};

    fn column(values: &[f64]) -> Dataset {
        Dataset::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(brute_largest_good_subset(&column(&[2.0, 2.0, 2.0]), 1.0).unwrap(), vec![0, 1, 2]);
        let y = column(&[1.0, 1.0, 1.0, 1.0, 100.0]);
        assert_eq!(brute_largest_good_subset(&y, 4.0).unwrap(), vec![0, 1, 2, 3]);
        let zeros = Dataset::from_vec(4, 2, vec![0.0; 8]).unwrap();
        assert!(brute_largest_good_subset(&zeros, 3.0).unwrap().is_empty());
        let big = column(&[1.0; 13]);
        assert!(matches!(brute_largest_good_subset(&big, 1.0), Err(Error::OracleTooLarge(_))));
    }

    #[test]
    fn hamming_examples() {
        let clean = column(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(brute_hamming_to_no_outlier(&clean, 2.0, 2).unwrap(), Some(0));
        let one = column(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 100.0]);
        assert_eq!(brute_hamming_to_no_outlier(&one, 3.0, 2).unwrap(), Some(1));
        let two = column(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 100.0, -300.0]);
        assert_eq!(brute_hamming_to_no_outlier(&two, 3.0, 1).unwrap(), None);
    }

    #[test]
    fn naive_and_fast_agree_on_outlier_example() {
        let y = column(&[1.0, 1.0, 1.0, 1.0, 100.0]);
        let ladder = OutlierLadder::new(4.0, 2).unwrap();
        assert_eq!(naive_ladder(&y, &ladder), {
            let fast = subset_ladder_full(&y, &ladder);
            SubsetLadder::from_sets(5, 2, &(0..5).map(|l| fast.set(l).unwrap()).collect::<Vec<_>>()).unwrap()
        });
        assert_eq!(fresh_greedy(&y, 4.0), largest_good_subset(&y, 4.0));
    }

    #[test]
    fn distance_examples() {
        let eye = PsdMatrix::identity(2);
        let same = matrix_distances(&eye, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(same.trace_norm, 0.0);
        assert_eq!(same.psd_sandwich_gamma, 0.0);
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.1, 1.0]));
        let dist = matrix_distances(&eye, &b).unwrap();
        for v in [dist.trace_norm, dist.frobenius, dist.spectral] {
            assert!((v - 0.1).abs() < 1e-12);
        }
        let dist = matrix_distances(&PsdMatrix::identity(3), &(DMatrix::identity(3, 3) * 2.0)).unwrap();
        assert!((dist.trace_norm - 3.0).abs() < 1e-12);
        assert!((dist.psd_sandwich_gamma - 0.5).abs() < 1e-12);
    }

    #[test]
    fn certificate_on_tight_cluster() {
        let x = Dataset::from_vec(50, 1, (0..50).map(|i| (i % 5) as f64 * 0.01).collect()).unwrap();
        let r = ReferenceSet::from_indices(50, (0..10).collect()).unwrap();
        assert_eq!(certify_degree_representative(&x, &PsdMatrix::identity(1), 1.0, &r, 10).unwrap(), Certificate::Holds);
        let far = column(&[0.0, 0.0, 0.0, 9.0]);
        let r = ReferenceSet::from_indices(4, vec![3]).unwrap();
        assert_ne!(certify_degree_representative(&far, &PsdMatrix::identity(1), 1.0, &r, 10).unwrap(), Certificate::Holds);
    }

    #[test]
    fn report_tolerance() {
        assert!(OracleReport::compare("x", 1.0, 1.0 + 1e-9, 1e-6).agree);
        assert!(!OracleReport::compare("x", 1.0, 1.1, 1e-6).agree);
    }
}
