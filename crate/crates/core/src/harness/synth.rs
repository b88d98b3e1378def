//! Seeded synthetic datasets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Dataset, PsdMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    Gaussian,
    /// Independent ±1 coordinates pushed through the covariance square root.
    ScaledBernoulliSubgaussian,
    GaussianWithPlantedOutliers,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CovarianceSpec {
    Identity,
    /// Eigenvalues spaced geometrically from 1 to `condition`.
    Diagonal { condition: f64 },
    /// The diagonal spectrum in a uniformly random orthonormal basis.
    RotatedDiagonal { condition: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    pub count: usize,
    /// Planted rows sit at Mahalanobis norm `magnitude · √d` from the mean.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub distribution: Distribution,
    pub n: usize,
    pub d: usize,
    /// Empty means the zero vector.
    #[serde(default)]
    pub mean: Vec<f64>,
    pub covariance: CovarianceSpec,
    #[serde(default)]
    pub outliers: Option<OutlierSpec>,
    pub seed: u64,
}

impl GenSpec {
    pub fn gaussian(n: usize, d: usize, covariance: CovarianceSpec, seed: u64) -> Self {
        Self {
            distribution: Distribution::Gaussian,
            n,
            d,
            mean: Vec::new(),
            covariance,
            outliers: None,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub data: Dataset,
    pub mean: Vec<f64>,
    pub covariance: PsdMatrix,
    /// Square root `A` with `A Aᵀ = covariance`.
    pub root: DMatrix<f64>,
    pub outlier_rows: Vec<usize>,
}

fn spectrum(d: usize, condition: f64) -> Vec<f64> {
    if d == 1 {
        return vec![1.0];
    }
    (0..d).map(|i| condition.powf(i as f64 / (d - 1) as f64)).collect()
}

fn random_rotation<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    // Sign fix so the rotation is Haar distributed.
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn validate(spec: &GenSpec) -> Result<()> {
    if spec.n == 0 || spec.d == 0 {
        return Err(Error::InvalidSpec(format!("n and d must be positive, got n = {}, d = {}", spec.n, spec.d)));
    }
    if !spec.mean.is_empty() && spec.mean.len() != spec.d {
        return Err(Error::InvalidSpec(format!("mean has length {}, expected {}", spec.mean.len(), spec.d)));
    }
    if spec.mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("mean must be finite".into()));
    }
    match spec.covariance {
        CovarianceSpec::Diagonal { condition } | CovarianceSpec::RotatedDiagonal { condition }
            if !(condition.is_finite() && (1.0..=1e8).contains(&condition)) =>
        {
            return Err(Error::InvalidSpec(format!("condition number must lie in [1, 1e8], got {condition}")));
        }
        _ => {}
    }
    match (spec.distribution, spec.outliers) {
        (Distribution::GaussianWithPlantedOutliers, None) => {
            return Err(Error::InvalidSpec("planted outliers require an outlier spec".into()));
        }
        (_, Some(o)) if o.count > spec.n || !(o.magnitude.is_finite() && o.magnitude > 0.0) => {
            return Err(Error::InvalidSpec(format!(
                "outlier count must be at most n and magnitude positive, got {} and {}",
                o.count, o.magnitude
            )));
        }
        _ => {}
    }
    Ok(())
}

/// Draws the dataset described by `spec`. Deterministic in `spec.seed`; the
/// basis rotation (if any) is drawn first, then the rows, then the outliers.
pub fn generate(spec: &GenSpec) -> Result<Generated> {
    validate(spec)?;
    let (n, d) = (spec.n, spec.d);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let root = match spec.covariance {
        CovarianceSpec::Identity => DMatrix::identity(d, d),
        CovarianceSpec::Diagonal { condition } => {
            DMatrix::from_diagonal(&DVector::from_vec(spectrum(d, condition)).map(f64::sqrt))
        }
        CovarianceSpec::RotatedDiagonal { condition } => {
            let q = random_rotation(d, &mut rng);
            q * DMatrix::from_diagonal(&DVector::from_vec(spectrum(d, condition)).map(f64::sqrt))
        }
    };
    let mean = if spec.mean.is_empty() { vec![0.0; d] } else { spec.mean.clone() };
    let covariance = PsdMatrix::new(&root * root.transpose());

    let mut data = Vec::with_capacity(n * d);
    let mut z = DVector::<f64>::zeros(d);
    for _ in 0..n {
        match spec.distribution {
            Distribution::ScaledBernoulliSubgaussian => {
                z.iter_mut().for_each(|v| *v = if rng.random::<bool>() { 1.0 } else { -1.0 })
            }
            _ => z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
        }
        let x = &root * &z;
        data.extend(x.iter().zip(&mean).map(|(a, b)| a + b));
    }

    let mut outlier_rows = Vec::new();
    if let Some(o) = spec.outliers {
        outlier_rows = sample(&mut rng, n, o.count).into_vec();
        outlier_rows.sort_unstable();
        for &i in &outlier_rows {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let scale = o.magnitude * (d as f64).sqrt() / z.norm();
            let x = &root * &z * scale;
            for (c, v) in data[i * d..(i + 1) * d].iter_mut().enumerate() {
                *v = mean[c] + x[c];
            }
        }
    }
    Ok(Generated {
        data: Dataset::from_vec(n, d, data)?,
        mean,
        covariance,
        root,
        outlier_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::default_lambda0;
    use crate::oracle::matrix_distances;

    #[test]
    fn identity_gaussian_covariance_is_close() {
        let g = generate(&GenSpec::gaussian(10_000, 3, CovarianceSpec::Identity, 1)).unwrap();
        let x = &g.data;
        let mu = x.mean();
        let mut cov = DMatrix::<f64>::zeros(3, 3);
        for row in x.rows() {
            let v = DVector::from_iterator(3, row.iter().zip(&mu).map(|(a, b)| a - b));
            cov += &v * v.transpose();
        }
        cov /= x.n() as f64;
        assert!((cov - DMatrix::identity(3, 3)).norm() < 0.1);
    }

    #[test]
    fn sample_means_concentrate() {
        let (n, d) = (2000, 4);
        for seed in 0..20 {
            let spec = GenSpec::gaussian(n, d, CovarianceSpec::RotatedDiagonal { condition: 50.0 }, seed);
            let g = generate(&spec).unwrap();
            let norm = g.covariance.mahalanobis_sq(&g.data.mean()).unwrap().sqrt();
            assert!(norm <= 5.0 * (d as f64 / n as f64).sqrt(), "seed {seed}: {norm}");
        }
    }

    #[test]
    fn covariances_are_well_formed() {
        for cov in [
            CovarianceSpec::Identity,
            CovarianceSpec::Diagonal { condition: 100.0 },
            CovarianceSpec::RotatedDiagonal { condition: 1000.0 },
        ] {
            let g = generate(&GenSpec::gaussian(5, 6, cov, 3)).unwrap();
            assert!(!g.covariance.is_singular());
            let eig = g.covariance.entries().clone().symmetric_eigenvalues();
            assert!(eig.min() >= 1e-8 * eig.max());
            let root_sq = &g.root * g.root.transpose();
            assert!(matrix_distances(&g.covariance, &root_sq).unwrap().spectral < 1e-10);
        }
    }

    #[test]
    fn planted_outlier_stands_out() {
        let spec = GenSpec {
            distribution: Distribution::GaussianWithPlantedOutliers,
            n: 2000,
            d: 3,
            mean: vec![1.0, -1.0, 0.5],
            covariance: CovarianceSpec::Diagonal { condition: 10.0 },
            outliers: Some(OutlierSpec { count: 1, magnitude: 100.0 }),
            seed: 4,
        };
        let g = generate(&spec).unwrap();
        let lambda0 = default_lambda0(3, 2000);
        let above: Vec<usize> = (0..g.data.n())
            .filter(|&i| {
                let v: Vec<f64> = g.data.row(i).iter().zip(&g.mean).map(|(a, b)| a - b).collect();
                g.covariance.mahalanobis_sq(&v).unwrap() > lambda0
            })
            .collect();
        assert_eq!(above, g.outlier_rows);
    }

    #[test]
    fn rademacher_rows_are_bounded() {
        let spec = GenSpec {
            distribution: Distribution::ScaledBernoulliSubgaussian,
            ..GenSpec::gaussian(500, 2, CovarianceSpec::Identity, 8)
        };
        let g = generate(&spec).unwrap();
        assert!(g.data.as_slice().iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn deterministic_and_validated() {
        let spec = GenSpec::gaussian(50, 2, CovarianceSpec::RotatedDiagonal { condition: 4.0 }, 11);
        assert_eq!(generate(&spec).unwrap().data, generate(&spec).unwrap().data);
        let bad = GenSpec::gaussian(50, 2, CovarianceSpec::Diagonal { condition: 0.5 }, 11);
        assert!(matches!(generate(&bad), Err(Error::InvalidSpec(_))));
        let empty = GenSpec::gaussian(0, 2, CovarianceSpec::Identity, 11);
        assert!(generate(&empty).is_err());
    }
}
