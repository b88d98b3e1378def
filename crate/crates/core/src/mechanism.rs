//! The private layer: parameter derivation, the propose-test-release gate,
//! shaped Gaussian noise, and the mean, covariance and Gaussian learners.
//!
//! Every mechanism draws from the supplied generator in a fixed order:
//! reference set, then the PTR coin, then noise.

use std::f64::consts::E;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cores::{ReferenceSet, StableMeanOutput, stable_mean};
use crate::error::{Error, Result};
use crate::linalg::{Dataset, PsdMatrix, pair_and_rescale};
use crate::stable_cov::{StableCovOutput, stable_covariance, stable_covariance_paired};

/// Parameters derived from `(ε, δ, λ₀, n)` for both the mean and the
/// covariance mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyParams {
    pub eps: f64,
    pub delta: f64,
    pub lambda0: f64,
    pub n: usize,
    /// Score cap for the mean mechanism.
    pub k: usize,
    /// Reference set size.
    pub reference_size: usize,
    /// Squared noise scale of the shaped Gaussian.
    pub c_sq: f64,
    /// Smallest `n` the mean mechanism accepts (real-valued).
    pub mean_gate: f64,
    /// Score cap for the covariance mechanism.
    pub cov_k: usize,
    /// Number of Gaussian draws released by the covariance mechanism.
    pub cov_samples: usize,
    pub cov_gate: f64,
}

impl PrivacyParams {
    pub fn mean_gate_met(&self) -> bool {
        self.n as f64 >= self.mean_gate
    }

    pub fn cov_gate_met(&self) -> bool {
        self.n as f64 >= self.cov_gate
    }
}

/// Validates `0 < ε ≤ 1`, `0 < δ ≤ ε/10`, `λ₀ ≥ 1` and evaluates every derived constant.
pub fn derive_params(eps: f64, delta: f64, lambda0: f64, n: usize) -> Result<PrivacyParams> {
    if !(eps.is_finite() && eps > 0.0 && eps <= 1.0) {
        return Err(Error::ParameterRange(format!("eps must satisfy 0 < eps <= 1, got {eps}")));
    }
    if !(delta.is_finite() && delta > 0.0 && delta <= eps / 10.0) {
        return Err(Error::ParameterRange(format!("delta must satisfy 0 < delta <= eps/10, got {delta}")));
    }
    if !(lambda0.is_finite() && lambda0 >= 1.0) {
        return Err(Error::ParameterRange(format!("lambda0 must be at least 1, got {lambda0}")));
    }
    let nf = n as f64;
    let e2 = E * E;
    let k = (6.0 * (6.0 / delta).ln() / eps).ceil() as usize + 4;
    let reference_size = 6 * k + (18.0 * (16.0 * nf / delta).ln()).ceil().max(0.0) as usize;
    let c_sq = 720.0 * e2 * lambda0 * (12.0 / delta).ln() / (eps * eps * nf * nf);
    let mean_gate = 192.0 * e2 * lambda0 * (6.0 / delta).ln() / eps + 160.0 * e2 * lambda0;
    let log2d = (2.0 / delta).ln();
    let cov_k = (4.0 * log2d / eps).ceil() as usize + 4;
    let cov_samples = (1e-6 * nf * nf * eps * eps / (lambda0 * lambda0 * log2d)).floor() as usize;
    let cov_gate = 272.0 * e2 * lambda0 * log2d / eps;
    Ok(PrivacyParams {
        eps,
        delta,
        lambda0,
        n,
        k,
        reference_size,
        c_sq,
        mean_gate,
        cov_k,
        cov_samples,
        cov_gate,
    })
}

/// Score at and beyond which the gate fails with certainty.
pub fn ptr_cutoff(eps: f64, delta: f64) -> f64 {
    2.0 * ((1.0 - delta) / delta).ln() / eps + 4.0
}

/// Pass probability of the PTR gate at score `z`: 1 at zero, 0 from the
/// cutoff on, and `1 − e^{(ε/2)(z−2)} δ` in between, clamped to `[0, 1]`.
pub fn ptr_pass_probability(z: f64, eps: f64, delta: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    if z >= ptr_cutoff(eps, delta) {
        return 0.0;
    }
    (1.0 - (0.5 * eps * (z - 2.0)).exp() * delta).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PtrOutcome {
    Pass,
    Fail,
}

/// One Bernoulli draw of the gate. Always consumes exactly one uniform.
pub fn m_ptr<R: Rng + ?Sized>(z: usize, eps: f64, delta: f64, rng: &mut R) -> PtrOutcome {
    let u: f64 = rng.random();
    if u < ptr_pass_probability(z as f64, eps, delta) {
        PtrOutcome::Pass
    } else {
        PtrOutcome::Fail
    }
}

/// `μ̂ + c Σ_i √w_i z_i y_i` with `z ~ N(0, I_m)`; one normal per row of `y`
/// is drawn even where the weight is zero.
pub fn sample_shaped_gaussian<R: Rng + ?Sized>(
    mu_hat: &[f64],
    y: &Dataset,
    weights: &[f64],
    c: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if mu_hat.len() != y.d() || weights.len() != y.n() {
        return Err(Error::Shape(format!(
            "mean has length {}, weights {}, data is {}x{}",
            mu_hat.len(),
            weights.len(),
            y.n(),
            y.d()
        )));
    }
    let mut out = mu_hat.to_vec();
    for (row, &w) in y.rows().zip(weights) {
        let z: f64 = rng.sample(StandardNormal);
        let scale = c * w.sqrt() * z;
        if w > 0.0 {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += scale * v);
        }
    }
    Ok(out)
}

/// Why a mechanism returned FAIL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    BelowSampleGate,
    PtrRejected,
    NoSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacySpent {
    pub eps: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimate {
    Mean(Vec<f64>),
    Covariance(PsdMatrix),
    Gaussian { mean: Vec<f64>, covariance: PsdMatrix },
}

/// Either FAIL (with its reason) or a released estimate; the estimate is
/// present only if the gate passed.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismOutput {
    pub estimate: Option<Estimate>,
    pub failure: Option<FailReason>,
    pub score1: Option<usize>,
    pub score2: Option<usize>,
    pub privacy_spent: PrivacySpent,
}

impl MechanismOutput {
    fn fail(reason: FailReason, spent: PrivacySpent) -> Self {
        Self {
            estimate: None,
            failure: Some(reason),
            score1: None,
            score2: None,
            privacy_spent: spent,
        }
    }

    pub fn passed(&self) -> bool {
        self.estimate.is_some()
    }
}

/// Non-private intermediates of one mean-mechanism run.
#[derive(Debug, Clone, Default)]
pub struct MeanTrace {
    pub reference: Option<ReferenceSet>,
    pub covariance: Option<StableCovOutput>,
    pub mean: Option<StableMeanOutput>,
    pub pass_probability: Option<f64>,
}

/// Private mean with covariance-shaped noise. Errors only on out-of-range
/// parameters; every data-dependent refusal is a FAIL output.
pub fn private_mean<R: Rng + ?Sized>(
    x: &Dataset,
    eps: f64,
    delta: f64,
    lambda0: f64,
    rng: &mut R,
) -> Result<MechanismOutput> {
    private_mean_traced(x, eps, delta, lambda0, rng).map(|(out, _)| out)
}

pub fn private_mean_traced<R: Rng + ?Sized>(
    x: &Dataset,
    eps: f64,
    delta: f64,
    lambda0: f64,
    rng: &mut R,
) -> Result<(MechanismOutput, MeanTrace)> {
    let params = derive_params(eps, delta, lambda0, x.n())?;
    let spent = PrivacySpent { eps, delta };
    let mut trace = MeanTrace::default();
    if !params.mean_gate_met() {
        return Ok((MechanismOutput::fail(FailReason::BelowSampleGate, spent), trace));
    }
    let k = params.k;
    let reference = ReferenceSet::sample(x.n(), params.reference_size, rng);
    let y = pair_and_rescale(x)?;
    let cov = stable_covariance_paired(&y, lambda0, k)?;
    let score1 = cov.score.value();
    // A singular preconditioner leaves the mean stage undefined; treating
    // its score as the cap makes the gate fail with certainty.
    let mean = if cov.sigma_hat.is_singular() {
        None
    } else {
        Some(stable_mean(x, &cov.sigma_hat, lambda0, k, &reference)?)
    };
    let score2 = mean.as_ref().map_or(k, |m| m.score.value());

    let (ptr_eps, ptr_delta) = (eps / 3.0, delta / 6.0);
    let z = score1.max(score2);
    trace.pass_probability = Some(ptr_pass_probability(z as f64, ptr_eps, ptr_delta));
    let outcome = m_ptr(z, ptr_eps, ptr_delta, rng);

    let mut out = MechanismOutput {
        estimate: None,
        failure: None,
        score1: Some(score1),
        score2: Some(score2),
        privacy_spent: spent,
    };
    match (outcome, &mean) {
        (PtrOutcome::Pass, Some(m)) => {
            let noisy = sample_shaped_gaussian(&m.mu_hat, &y, &cov.weights, params.c_sq.sqrt(), rng)?;
            out.estimate = Some(Estimate::Mean(noisy));
        }
        _ => out.failure = Some(FailReason::PtrRejected),
    }
    trace.reference = Some(reference);
    trace.covariance = Some(cov);
    trace.mean = mean;
    Ok((out, trace))
}

/// `Σ^{1/2}`-style factor for sampling: the Cholesky factor when available,
/// otherwise the symmetric eigen square root with negative eigenvalues
/// clamped to zero.
fn sampling_factor(sigma: &PsdMatrix) -> DMatrix<f64> {
    if let Some(l) = sigma.factor() {
        return l.clone();
    }
    let eig = SymmetricEigen::new(sigma.entries().clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Private covariance via the Gaussian sampling mechanism. `x` is handed to
/// the stable covariance as is (which pairs it).
pub fn private_covariance<R: Rng + ?Sized>(
    x: &Dataset,
    eps: f64,
    delta: f64,
    lambda0: f64,
    rng: &mut R,
) -> Result<MechanismOutput> {
    let params = derive_params(eps, delta, lambda0, x.n())?;
    let spent = PrivacySpent { eps, delta };
    if !params.cov_gate_met() {
        return Ok(MechanismOutput::fail(FailReason::BelowSampleGate, spent));
    }
    let cov = stable_covariance(x, lambda0, params.cov_k)?;
    let score = cov.score.value();
    let outcome = m_ptr(score, eps / 2.0, delta / 2.0, rng);
    let mut out = MechanismOutput {
        estimate: None,
        failure: None,
        score1: Some(score),
        score2: None,
        privacy_spent: spent,
    };
    if outcome == PtrOutcome::Fail {
        out.failure = Some(FailReason::PtrRejected);
        return Ok(out);
    }
    let n_draws = params.cov_samples;
    if n_draws == 0 {
        out.failure = Some(FailReason::NoSamples);
        return Ok(out);
    }
    let d = x.d();
    let factor = sampling_factor(&cov.sigma_hat);
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut g = DVector::<f64>::zeros(d);
    for _ in 0..n_draws {
        g.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let z = &factor * &g;
        acc.ger(1.0, &z, &z, 1.0);
    }
    out.estimate = Some(Estimate::Covariance(PsdMatrix::new(acc / n_draws as f64)));
    Ok(out)
}

/// Private mean of `x`, then private covariance of its paired rows; FAIL if
/// either fails. Spends `(2ε, 2δ)`.
pub fn learn_gaussian<R: Rng + ?Sized>(
    x: &Dataset,
    eps: f64,
    delta: f64,
    lambda0: f64,
    rng: &mut R,
) -> Result<MechanismOutput> {
    let mean = private_mean(x, eps, delta, lambda0, rng)?;
    let y = pair_and_rescale(x)?;
    let cov = private_covariance(&y, eps, delta, lambda0, rng)?;
    let spent = PrivacySpent {
        eps: 2.0 * eps,
        delta: 2.0 * delta,
    };
    let score1 = match (mean.score1, mean.score2) {
        (Some(a), Some(b)) => Some(a.max(b)),
        _ => None,
    };
    let (estimate, failure) = match (mean.estimate, cov.estimate) {
        (Some(Estimate::Mean(m)), Some(Estimate::Covariance(c))) => (
            Some(Estimate::Gaussian {
                mean: m,
                covariance: c,
            }),
            None,
        ),
        _ => (None, mean.failure.or(cov.failure)),
    };
    Ok(MechanismOutput {
        estimate,
        failure,
        score1,
        score2: cov.score1,
        privacy_spent: spent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn derived_constants() {
        let p = derive_params(1.0, 0.06, 1.0, 10_000).unwrap();
        assert_eq!(p.k, 32);
        assert_eq!(p.reference_size, 459);
        assert!(derive_params(1.0, 0.2, 1.0, 100).is_err());
        assert!(derive_params(0.0, 0.0, 1.0, 100).is_err());
        assert!(derive_params(1.5, 0.01, 1.0, 100).is_err());
        assert!(derive_params(1.0, 0.01, 0.5, 100).is_err());
    }

    #[test]
    fn pass_probability_examples() {
        assert_eq!(ptr_pass_probability(0.0, 1.0, 0.05), 1.0);
        assert!((ptr_pass_probability(2.0, 1.0, 0.05) - 0.95).abs() < 1e-15);
        let cutoff = 2.0 * (1.0f64 / 0.05).ln() + 4.0;
        assert_eq!(ptr_pass_probability(cutoff, 1.0, 0.05), 0.0);
        assert_eq!(ptr_pass_probability(cutoff + 3.0, 1.0, 0.05), 0.0);
    }

    #[test]
    fn cap_score_fails_with_certainty() {
        for (eps, delta) in [(1.0, 1e-6), (0.5, 0.01), (0.1, 0.001)] {
            let p = derive_params(eps, delta, 1.0, 1000).unwrap();
            assert!(ptr_pass_probability(p.k as f64, eps / 3.0, delta / 6.0) == 0.0);
            assert!(ptr_pass_probability(p.cov_k as f64, eps / 2.0, delta / 2.0) == 0.0);
        }
    }

    #[test]
    fn m_ptr_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(m_ptr(0, 1.0, 0.05, &mut rng), PtrOutcome::Pass);
            assert_eq!(m_ptr(100, 1.0, 0.05, &mut rng), PtrOutcome::Fail);
        }
    }

    #[test]
    fn shaped_sampler_with_zero_weights_returns_center() {
        let y = Dataset::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = sample_shaped_gaussian(&[0.5, -0.5], &y, &[0.0; 3], 2.0, &mut rng).unwrap();
        assert_eq!(out, vec![0.5, -0.5]);
    }

    #[test]
    fn shaped_sampler_is_reproducible() {
        let y = Dataset::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_shaped_gaussian(&[0.0, 0.0], &y, &[0.2, 0.3, 0.5], 1.0, &mut rng).unwrap()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn below_gate_fails_without_randomness() {
        let x = Dataset::from_vec(100, 2, (0..200).map(|i| i as f64).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let before = rng.clone();
        let out = private_mean(&x, 1.0, 1e-6, 10.0, &mut rng).unwrap();
        assert_eq!(out.failure, Some(FailReason::BelowSampleGate));
        assert!(out.estimate.is_none());
        assert_eq!(rng, before);
        let out = private_covariance(&x, 1.0, 1e-6, 10.0, &mut rng).unwrap();
        assert_eq!(out.failure, Some(FailReason::BelowSampleGate));
        let out = learn_gaussian(&x, 1.0, 1e-6, 10.0, &mut rng).unwrap();
        assert!(out.estimate.is_none());
        assert_eq!(out.privacy_spent, PrivacySpent { eps: 2.0, delta: 2e-6 });
    }
}
