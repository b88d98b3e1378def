//! PTR gate calibration: Monte Carlo pass rates against the closed form, and
//! an analytic grid check of the two-sided privacy inequality.

use serde::Serialize;

use super::trial_rng;
use crate::mechanism::{PtrOutcome, m_ptr, ptr_cutoff, ptr_pass_probability};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PtrCalibrationConfig {
    pub settings: Vec<(f64, f64)>,
    pub scores: Vec<usize>,
    pub trials: usize,
    /// Allowed gap between empirical and closed-form pass rates.
    pub tolerance: f64,
    pub grid_step: f64,
    pub seed: u64,
}

impl Default for PtrCalibrationConfig {
    fn default() -> Self {
        Self {
            settings: vec![(1.0, 0.05), (0.5, 0.01)],
            scores: vec![0, 1, 2, 4, 8],
            trials: 100_000,
            tolerance: 0.01,
            grid_step: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassRateRecord {
    pub eps: f64,
    pub delta: f64,
    pub z: usize,
    pub empirical: f64,
    pub closed_form: f64,
    pub abs_error: f64,
}

/// First grid point where `p(z) ≤ e^ε p(z+2) + δ` or its mirror fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridViolation {
    pub z: f64,
    pub p_z: f64,
    pub p_z_plus_2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCheck {
    pub eps: f64,
    pub delta: f64,
    pub points: usize,
    pub violations: usize,
    pub first_violation: Option<GridViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PtrCalibrationResult {
    pub config: PtrCalibrationConfig,
    pub records: Vec<PassRateRecord>,
    pub grid: Vec<GridCheck>,
    pub rates_passed: bool,
    pub grid_passed: bool,
}

/// Checks both directions of the inequality on `z ∈ {0, step, …}` up to the cutoff.
pub fn ptr_grid_check(eps: f64, delta: f64, step: f64) -> GridCheck {
    let cutoff = ptr_cutoff(eps, delta);
    let growth = eps.exp();
    let mut points = 0;
    let mut violations = 0;
    let mut first_violation = None;
    let mut i = 0u64;
    loop {
        let z = i as f64 * step;
        if z > cutoff {
            break;
        }
        let p = ptr_pass_probability(z, eps, delta);
        let q = ptr_pass_probability(z + 2.0, eps, delta);
        let slack = 1e-12;
        if p > growth * q + delta + slack || q > growth * p + delta + slack {
            violations += 1;
            first_violation.get_or_insert(GridViolation { z, p_z: p, p_z_plus_2: q });
        }
        points += 1;
        i += 1;
    }
    GridCheck {
        eps,
        delta,
        points,
        violations,
        first_violation,
    }
}

pub fn run_ptr_calibration(config: &PtrCalibrationConfig) -> PtrCalibrationResult {
    let mut records = Vec::new();
    for (s, &(eps, delta)) in config.settings.iter().enumerate() {
        for (j, &z) in config.scores.iter().enumerate() {
            let mut rng = trial_rng(config.seed, ((s as u64) << 32) + j as u64);
            let passes = (0..config.trials)
                .filter(|_| m_ptr(z, eps, delta, &mut rng) == PtrOutcome::Pass)
                .count();
            let empirical = passes as f64 / config.trials.max(1) as f64;
            let closed_form = ptr_pass_probability(z as f64, eps, delta);
            records.push(PassRateRecord {
                eps,
                delta,
                z,
                empirical,
                closed_form,
                abs_error: (empirical - closed_form).abs(),
            });
        }
    }
    let grid: Vec<GridCheck> = config
        .settings
        .iter()
        .map(|&(eps, delta)| ptr_grid_check(eps, delta, config.grid_step))
        .collect();
    PtrCalibrationResult {
        rates_passed: records.iter().all(|r| r.abs_error <= config.tolerance),
        grid_passed: grid.iter().all(|g| g.violations == 0),
        config: config.clone(),
        records,
        grid,
    }
}
