//! Neighboring datasets that differ from a base dataset in one row.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Dataset, cholesky};

/// Distance of a planted replacement, in multiples of the data's RMS spread.
pub const OUTLIER_MAGNITUDE: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjacencyMode {
    /// Row becomes the zero vector.
    ReplaceWithZero,
    /// Row moves far away along a random direction.
    ReplaceWithOutlier,
    /// Row is redrawn from the Gaussian fitted to the data.
    ReplaceWithResample,
}

impl AdjacencyMode {
    pub const ALL: [AdjacencyMode; 3] = [
        AdjacencyMode::ReplaceWithZero,
        AdjacencyMode::ReplaceWithOutlier,
        AdjacencyMode::ReplaceWithResample,
    ];
}

fn empirical_moments(x: &Dataset) -> (Vec<f64>, DMatrix<f64>) {
    let mu = x.mean();
    let d = x.d();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in x.rows() {
        let v = DVector::from_iterator(d, row.iter().zip(&mu).map(|(a, b)| a - b));
        cov.ger(1.0, &v, &v, 1.0);
    }
    (mu, cov / x.n().max(1) as f64)
}

fn square_root(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(l) = cholesky(cov) {
        return l;
    }
    let eig = SymmetricEigen::new(cov.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Copy of `x` with row `i` replaced according to `mode`. Deterministic in `seed`.
pub fn make_adjacent(x: &Dataset, mode: AdjacencyMode, i: usize, seed: u64) -> Result<Dataset> {
    if i >= x.n() {
        return Err(Error::Shape(format!("row {i} out of range for n = {}", x.n())));
    }
    let d = x.d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row: Vec<f64> = match mode {
        AdjacencyMode::ReplaceWithZero => vec![0.0; d],
        AdjacencyMode::ReplaceWithOutlier => {
            let (mu, cov) = empirical_moments(x);
            let spread = cov.trace().sqrt().max(1.0);
            let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            u.iter_mut().for_each(|v| *v *= OUTLIER_MAGNITUDE * spread / norm);
            mu.iter().zip(&u).map(|(a, b)| a + b).collect()
        }
        AdjacencyMode::ReplaceWithResample => {
            let (mu, cov) = empirical_moments(x);
            let root = square_root(&cov);
            let g = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let z = root * g;
            mu.iter().zip(z.iter()).map(|(a, b)| a + b).collect()
        }
    };
    let mut out = x.with_row(i, &row)?;
    // A redraw can coincide with the original row only with probability 0,
    // but zero replacement of a zero row would leave the data unchanged.
    if out == *x {
        let nudged: Vec<f64> = row.iter().map(|v| v + 1.0).collect();
        out = x.with_row(i, &nudged)?;
    }
    Ok(out)
}
