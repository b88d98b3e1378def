//! Stability audit: evaluate the estimators on adjacent dataset pairs and
//! check every deterministic closeness bound whose preconditions hold.

use std::collections::BTreeMap;
use std::f64::consts::E;

use rand::Rng;
use serde::Serialize;

use super::adjacency::{AdjacencyMode, make_adjacent};
use super::synth::{GenSpec, generate};
use super::trial_rng;
use crate::cores::{ReferenceSet, StableMeanOutput, stable_mean};
use crate::error::Result;
use crate::linalg::Dataset;
use crate::mechanism::derive_params;
use crate::oracle::{Certificate, certify_degree_representative, matrix_distances};
use crate::stable_cov::{StableCovOutput, stable_covariance};

/// Slack for floating-point comparisons against the bounds.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditConfig {
    /// Base datasets use this spec with seeds `spec.seed, spec.seed + 1, …`.
    pub spec: GenSpec,
    pub bases: usize,
    pub pairs: usize,
    pub modes: Vec<AdjacencyMode>,
    pub lambda0: f64,
    pub k: usize,
    pub reference_size: usize,
    /// Skip the mean stage entirely.
    pub covariance_only: bool,
    /// Points outside the certificate clique that may be counted exactly.
    pub certificate_limit: usize,
    pub seed: u64,
}

impl AuditConfig {
    /// Config whose `k` and reference size come from the mean mechanism's
    /// parameters at `(ε, δ, λ₀, n)`.
    pub fn for_privacy(spec: GenSpec, eps: f64, delta: f64, lambda0: f64, pairs: usize, seed: u64) -> Result<Self> {
        let p = derive_params(eps, delta, lambda0, spec.n)?;
        Ok(Self {
            spec,
            bases: 1,
            pairs,
            modes: AdjacencyMode::ALL.to_vec(),
            lambda0,
            k: p.k,
            reference_size: p.reference_size,
            covariance_only: false,
            certificate_limit: 5000,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckOutcome {
    Held,
    Violated,
    PreconditionsUnmet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    CovarianceScoreSensitivity,
    MeanScoreSensitivity,
    CovarianceWeightStability,
    CovarianceTraceCloseness,
    MeanWeightStability,
    MeanCloseness,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub base: usize,
    pub row: usize,
    pub mode: AdjacencyMode,
    pub cov_scores: (usize, usize),
    pub mean_scores: Option<(usize, usize)>,
    pub cov_weight_gap: f64,
    pub cov_trace: Option<(f64, f64)>,
    pub sandwich_gamma: Option<f64>,
    pub mean_weight_gap: Option<f64>,
    pub mean_weight_max: Option<f64>,
    pub mean_distance_sq: Option<f64>,
    pub degree_representative: Option<(Certificate, Certificate)>,
    pub checks: BTreeMap<Check, CheckOutcome>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub held: usize,
    pub violated: usize,
    pub preconditions_unmet: usize,
}

/// Bounds in force for this configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditBounds {
    pub cov_weight_gap: f64,
    pub cov_trace: f64,
    pub mean_weight_gap: f64,
    pub mean_weight_max: f64,
    pub mean_distance_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditResult {
    pub config: AuditConfig,
    pub bounds: AuditBounds,
    pub records: Vec<PairRecord>,
    pub summary: BTreeMap<Check, Tally>,
    pub passed: bool,
}

impl AuditResult {
    pub fn tally(&self, check: Check) -> Tally {
        self.summary.get(&check).copied().unwrap_or_default()
    }
}

struct Evaluation {
    cov: StableCovOutput,
    mean: Option<StableMeanOutput>,
    certificate: Option<Certificate>,
}

fn evaluate(x: &Dataset, config: &AuditConfig, reference: &ReferenceSet) -> Result<Evaluation> {
    let cov = stable_covariance(x, config.lambda0, config.k)?;
    let (mean, certificate) = if config.covariance_only || cov.sigma_hat.is_singular() {
        (None, None)
    } else {
        let mean = stable_mean(x, &cov.sigma_hat, config.lambda0, config.k, reference)?;
        let cert = certify_degree_representative(x, &cov.sigma_hat, config.lambda0, reference, config.certificate_limit)?;
        (Some(mean), Some(cert))
    };
    Ok(Evaluation { cov, mean, certificate })
}

fn l1_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum()
}

fn judge(ok: bool) -> CheckOutcome {
    if ok { CheckOutcome::Held } else { CheckOutcome::Violated }
}

pub fn audit_bounds(config: &AuditConfig) -> AuditBounds {
    let n = config.spec.n as f64;
    let m = (config.spec.n / 2) as f64;
    let k = config.k as f64;
    let e2l = E * E * config.lambda0;
    let gamma = 16.0 * e2l / n;
    AuditBounds {
        cov_weight_gap: 2.0 / m,
        cov_trace: (1.0 + 2.0 * gamma) * gamma,
        mean_weight_gap: 4.0 * (1.0 + 2.0 * k / n).powi(2) / n,
        mean_weight_max: (1.0 + 2.0 * k / n) / n,
        mean_distance_sq: 40.0 * e2l / (n * n),
    }
}

fn compare(
    config: &AuditConfig,
    bounds: &AuditBounds,
    a: &Evaluation,
    b: &Evaluation,
    (base, row, mode): (usize, usize, AdjacencyMode),
) -> Result<PairRecord> {
    let k = config.k;
    let n = config.spec.n as f64;
    let m = (config.spec.n / 2) as f64;
    let e2l = E * E * config.lambda0;
    let within = |v: f64, bound: f64| v <= bound * (1.0 + BOUND_SLACK);
    let mut checks = BTreeMap::new();

    let (s1, s1p) = (a.cov.score.value(), b.cov.score.value());
    checks.insert(Check::CovarianceScoreSensitivity, judge(s1.abs_diff(s1p) <= 2));

    let cov_weight_gap = l1_gap(&a.cov.weights, &b.cov.weights);
    let cov_ready = s1 < k && s1p < k && (k as f64) <= m / (2.0 * e2l);
    checks.insert(
        Check::CovarianceWeightStability,
        if cov_ready { judge(within(cov_weight_gap, bounds.cov_weight_gap)) } else { CheckOutcome::PreconditionsUnmet },
    );

    let both_regular = !a.cov.sigma_hat.is_singular() && !b.cov.sigma_hat.is_singular();
    let (cov_trace, sandwich_gamma) = if both_regular {
        let ab = matrix_distances(&a.cov.sigma_hat, b.cov.sigma_hat.entries())?;
        let ba = matrix_distances(&b.cov.sigma_hat, a.cov.sigma_hat.entries())?;
        (Some((ab.trace_norm, ba.trace_norm)), Some(ab.psd_sandwich_gamma))
    } else {
        (None, None)
    };
    checks.insert(
        Check::CovarianceTraceCloseness,
        match cov_trace {
            Some((t1, t2)) if cov_ready => judge(within(t1, bounds.cov_trace) && within(t2, bounds.cov_trace)),
            // Scores below the cap with a singular estimate contradict the lemma.
            None if cov_ready => CheckOutcome::Violated,
            _ => CheckOutcome::PreconditionsUnmet,
        },
    );

    let mut record = PairRecord {
        base,
        row,
        mode,
        cov_scores: (s1, s1p),
        mean_scores: None,
        cov_weight_gap,
        cov_trace,
        sandwich_gamma,
        mean_weight_gap: None,
        mean_weight_max: None,
        mean_distance_sq: None,
        degree_representative: None,
        checks,
    };
    let (Some(ma), Some(mb), Some(gamma)) = (&a.mean, &b.mean, sandwich_gamma) else {
        for c in [Check::MeanScoreSensitivity, Check::MeanWeightStability, Check::MeanCloseness] {
            record.checks.insert(c, CheckOutcome::PreconditionsUnmet);
        }
        return Ok(record);
    };

    let (s2, s2p) = (ma.score.value(), mb.score.value());
    record.mean_scores = Some((s2, s2p));
    let sandwich = gamma <= 0.5 && (gamma == 0.0 || (k as f64) <= 1.0 / (2.0 * gamma));
    record.checks.insert(
        Check::MeanScoreSensitivity,
        if sandwich { judge(s2.abs_diff(s2p) <= 2) } else { CheckOutcome::PreconditionsUnmet },
    );

    let gap = l1_gap(&ma.weights, &mb.weights);
    let max_w = ma.weights.iter().chain(&mb.weights).copied().fold(0.0, f64::max);
    record.mean_weight_gap = Some(gap);
    record.mean_weight_max = Some(max_w);
    let mean_ready = sandwich && s2 < k && s2p < k;
    record.checks.insert(
        Check::MeanWeightStability,
        if mean_ready {
            judge(within(gap, bounds.mean_weight_gap) && within(max_w, bounds.mean_weight_max))
        } else {
            CheckOutcome::PreconditionsUnmet
        },
    );

    let diff: Vec<f64> = ma.mu_hat.iter().zip(&mb.mu_hat).map(|(p, q)| p - q).collect();
    let dist = a.cov.sigma_hat.mahalanobis_sq(&diff)?;
    record.mean_distance_sq = Some(dist);
    let certs = (a.certificate.unwrap_or(Certificate::Inconclusive), b.certificate.unwrap_or(Certificate::Inconclusive));
    record.degree_representative = Some(certs);
    let gamma_cov = 16.0 * e2l / n;
    let closeness_ready = mean_ready
        && cov_ready
        && gamma <= gamma_cov
        && (k as f64) <= 1.0 / (2.0 * gamma_cov)
        && config.reference_size > 6 * k
        && certs == (Certificate::Holds, Certificate::Holds);
    record.checks.insert(
        Check::MeanCloseness,
        if closeness_ready { judge(within(dist, bounds.mean_distance_sq)) } else { CheckOutcome::PreconditionsUnmet },
    );
    Ok(record)
}

/// Runs the audit. Pair `t` perturbs base `t mod bases` at a uniformly
/// chosen row, cycling through the configured modes. Both members of a pair
/// share one reference set.
pub fn run_stability_audit(config: &AuditConfig) -> Result<AuditResult> {
    let bounds = audit_bounds(config);
    let bases = config.bases.max(1);
    let mut records = Vec::with_capacity(config.pairs);
    let mut summary: BTreeMap<Check, Tally> = BTreeMap::new();
    let modes = if config.modes.is_empty() { AdjacencyMode::ALL.to_vec() } else { config.modes.clone() };

    for b in 0..bases.min(config.pairs.max(1)) {
        let spec = GenSpec {
            seed: config.spec.seed.wrapping_add(b as u64),
            ..config.spec.clone()
        };
        let x = generate(&spec)?.data;
        let mut rng = trial_rng(config.seed, b as u64);
        let reference = ReferenceSet::sample(x.n(), config.reference_size, &mut rng);
        let base_eval = evaluate(&x, config, &reference)?;

        for t in (b..config.pairs).step_by(bases) {
            let mut pair_rng = trial_rng(config.seed, (1 << 32) + t as u64);
            let row = pair_rng.random_range(0..x.n());
            let mode = modes[t % modes.len()];
            let x2 = make_adjacent(&x, mode, row, pair_rng.random())?;
            let eval = evaluate(&x2, config, &reference)?;
            let record = compare(config, &bounds, &base_eval, &eval, (b, row, mode))?;
            for (check, outcome) in &record.checks {
                let tally = summary.entry(*check).or_default();
                match outcome {
                    CheckOutcome::Held => tally.held += 1,
                    CheckOutcome::Violated => tally.violated += 1,
                    CheckOutcome::PreconditionsUnmet => tally.preconditions_unmet += 1,
                }
            }
            records.push(record);
        }
    }
    let passed = summary.values().all(|t| t.violated == 0);
    Ok(AuditResult {
        config: config.clone(),
        bounds,
        records,
        summary,
        passed,
    })
}
