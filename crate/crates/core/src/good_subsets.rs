//! Largest λ-good subsets and their nested ladder over the geometric grid of
//! outlier thresholds `λ_ℓ = e^{ℓ/k} λ₀`, `ℓ = 0..=2k`.
//!
//! A subset `S ⊆ [m]` is λ-good when every member satisfies
//! `y_iᵀ ((1/m) Σ_{j∈S} y_j y_jᵀ)⁻¹ y_i ≤ λ`. The greedy fixpoint that
//! repeatedly drops every point above the threshold returns the unique
//! largest such subset.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Dataset, PrecisionState, PsdMatrix, subset_second_moment};

/// Thresholds `λ_ℓ = e^{ℓ/k} λ₀` for `ℓ = 0..=2k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutlierLadder {
    lambda0: f64,
    k: usize,
}

impl OutlierLadder {
    pub fn new(lambda0: f64, k: usize) -> Result<Self> {
        if !(lambda0.is_finite() && lambda0 > 0.0) {
            return Err(Error::ParameterRange(format!("lambda0 must be positive and finite, got {lambda0}")));
        }
        if k == 0 {
            return Err(Error::ParameterRange("k must be at least 1".into()));
        }
        Ok(Self { lambda0, k })
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of thresholds, `2k + 1`.
    pub fn levels(&self) -> usize {
        2 * self.k + 1
    }

    #[inline]
    pub fn threshold(&self, level: usize) -> f64 {
        self.lambda0 * (level as f64 / self.k as f64).exp()
    }

    pub fn thresholds(&self) -> Vec<f64> {
        (0..self.levels()).map(|l| self.threshold(l)).collect()
    }
}

/// Capped score `min{k, min_{0≤ℓ≤k} (size − |S_ℓ| + ℓ)}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Score(pub usize);

impl Score {
    pub fn value(self) -> usize {
        self.0
    }
}

/// Evaluates the capped score from per-level sizes. Levels that are not
/// stored are known (from an early-halt certificate) to contribute at least
/// `k`, so they are skipped.
pub(crate) fn capped_score(total: usize, k: usize, sizes: &[Option<usize>]) -> Score {
    let mut best = k;
    for (l, size) in sizes.iter().enumerate().take(k + 1) {
        if let Some(s) = size {
            best = best.min(total - s + l);
        }
    }
    Score(best)
}

/// Record of an early halt: the sweep at `level` dropped the active set to
/// `size_bound ≤ m − k`, so `|S_level| ≤ size_bound` and lower levels were
/// not computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Truncation {
    pub level: usize,
    pub size_bound: usize,
}

/// Nested family `S_0 ⊆ … ⊆ S_{2k}` stored as, per point, the smallest level
/// whose set contains it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetLadder {
    m: usize,
    k: usize,
    entry: Vec<Option<usize>>,
    sizes: Vec<Option<usize>>,
    truncation: Option<Truncation>,
    final_norms: Vec<f64>,
}

impl SubsetLadder {
    /// Builds a ladder from explicit per-level sets, which must be nested.
    pub fn from_sets(m: usize, k: usize, sets: &[Vec<usize>]) -> Result<Self> {
        if sets.len() != 2 * k + 1 {
            return Err(Error::Shape(format!("expected {} levels, got {}", 2 * k + 1, sets.len())));
        }
        let mut entry: Vec<Option<usize>> = vec![None; m];
        for (l, set) in sets.iter().enumerate().rev() {
            let mut member = vec![false; m];
            for &i in set {
                if i >= m {
                    return Err(Error::Shape(format!("index {i} out of range for m = {m}")));
                }
                member[i] = true;
            }
            for i in 0..m {
                match (member[i], entry[i]) {
                    (true, Some(e)) if e == l + 1 => entry[i] = Some(l),
                    (true, None) if l == 2 * k => entry[i] = Some(l),
                    (true, _) => {
                        return Err(Error::Shape(format!("sets are not nested at level {l} (index {i})")));
                    }
                    (false, _) => {}
                }
            }
        }
        let sizes = sets.iter().map(|s| Some(s.len())).collect();
        Ok(Self {
            m,
            k,
            entry,
            sizes,
            truncation: None,
            final_norms: Vec::new(),
        })
    }

    /// Builds a fully stored ladder from per-point entry levels.
    pub(crate) fn from_entry_levels(k: usize, entry: Vec<Option<usize>>) -> Self {
        let mut sizes = vec![0usize; 2 * k + 1];
        for e in entry.iter().flatten() {
            sizes[*e] += 1;
        }
        let mut running = 0;
        let sizes = sizes
            .into_iter()
            .map(|c| {
                running += c;
                Some(running)
            })
            .collect();
        Self {
            m: entry.len(),
            k,
            entry,
            sizes,
            truncation: None,
            final_norms: Vec::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn levels(&self) -> usize {
        2 * self.k + 1
    }

    pub fn truncation(&self) -> Option<Truncation> {
        self.truncation
    }

    pub fn is_stored(&self, level: usize) -> bool {
        self.sizes[level].is_some()
    }

    pub fn size(&self, level: usize) -> Option<usize> {
        self.sizes[level]
    }

    pub fn sizes(&self) -> &[Option<usize>] {
        &self.sizes
    }

    /// Smallest stored level containing each point (`None`: not in `S_{2k}`).
    pub fn entry_levels(&self) -> &[Option<usize>] {
        &self.entry
    }

    pub fn set(&self, level: usize) -> Option<Vec<usize>> {
        self.sizes[level]?;
        Some((0..self.m).filter(|&i| self.entry[i].is_some_and(|e| e <= level)).collect())
    }

    /// Squared norms under the last active set reached by the fast path
    /// (empty for ladders built from explicit sets).
    pub fn final_norms(&self) -> &[f64] {
        &self.final_norms
    }

    /// Per point, the number of levels `ℓ ∈ {k+1, …, 2k}` whose stored set
    /// contains it.
    pub fn top_half_counts(&self) -> Vec<usize> {
        let k = self.k;
        self.entry
            .iter()
            .map(|e| match e {
                Some(e) => 2 * k + 1 - (*e).max(k + 1),
                None => 0,
            })
            .collect()
    }
}

/// One greedy fixpoint at threshold `lambda`, removing every current outlier
/// per pass. Records the level of each removal in `removed_at`. Returns
/// `true` if the active count fell to `halt_at` or below (the sweep then
/// stops immediately).
fn sweep(
    state: &mut PrecisionState<'_>,
    lambda: f64,
    level: usize,
    removed_at: &mut [Option<usize>],
    halt_at: Option<usize>,
) -> bool {
    let m = removed_at.len();
    loop {
        let out: Vec<usize> = (0..m).filter(|&i| state.is_active(i) && state.norm(i) > lambda).collect();
        if out.is_empty() {
            return false;
        }
        for i in out {
            state.downdate(i);
            removed_at[i] = Some(level);
            if halt_at.is_some_and(|h| state.active_count() <= h) {
                return true;
            }
        }
    }
}

/// The unique largest λ-good subset of `y` (possibly empty), sorted.
pub fn largest_good_subset(y: &Dataset, lambda: f64) -> Vec<usize> {
    let mut state = PrecisionState::new(y, y.n() as f64);
    let mut removed = vec![None; y.n()];
    sweep(&mut state, lambda, 0, &mut removed, None);
    state.active_indices()
}

pub(crate) struct LadderRun {
    pub ladder: SubsetLadder,
    /// Inverse of `(1/m) Σ_{S_{k+1}} y yᵀ`, captured when level `k+1` was stored.
    pub upper_inverse: Option<nalgebra::DMatrix<f64>>,
}

pub(crate) fn run_ladder(y: &Dataset, ladder: &OutlierLadder, halt_early: bool) -> LadderRun {
    let m = y.n();
    let k = ladder.k();
    let top = 2 * k;
    let mut state = PrecisionState::new(y, m as f64);
    let mut removed_at: Vec<Option<usize>> = vec![None; m];
    let mut sizes = vec![None; top + 1];
    let mut truncation = None;
    let mut upper_inverse = None;
    let halt_at = if halt_early { m.checked_sub(k) } else { None };

    for level in (0..=top).rev() {
        if sweep(&mut state, ladder.threshold(level), level, &mut removed_at, halt_at) {
            truncation = Some(Truncation {
                level,
                size_bound: state.active_count(),
            });
            break;
        }
        sizes[level] = Some(state.active_count());
        if level == k + 1 {
            upper_inverse = state.inverse();
        }
    }

    let floor = truncation.map_or(0, |t| t.level + 1);
    let entry = removed_at
        .iter()
        .map(|r| {
            let e = r.map_or(floor, |l| l + 1);
            (e <= top).then_some(e)
        })
        .collect();
    LadderRun {
        ladder: SubsetLadder {
            m,
            k,
            entry,
            sizes,
            truncation,
            final_norms: state.norms().to_vec(),
        },
        upper_inverse,
    }
}

/// All `2k + 1` largest good subsets in one descending pass that reuses
/// removals through rank-one downdates. Halts as soon as the active set
/// shrinks to `m − k` points or fewer; see [`SubsetLadder::truncation`].
pub fn subset_ladder(y: &Dataset, ladder: &OutlierLadder) -> SubsetLadder {
    run_ladder(y, ladder, true).ladder
}

/// Same as [`subset_ladder`] with early halting disabled, so every level is stored.
pub fn subset_ladder_full(y: &Dataset, ladder: &OutlierLadder) -> SubsetLadder {
    run_ladder(y, ladder, false).ladder
}

/// `min{k, min_{0≤ℓ≤k} (m − |S_ℓ| + ℓ)}`; a ladder truncated at level
/// `k + 1` or above scores `k`.
pub fn covariance_score(ladder: &SubsetLadder) -> Score {
    if ladder.truncation.is_some_and(|t| t.level > ladder.k) {
        return Score(ladder.k);
    }
    capped_score(ladder.m, ladder.k, &ladder.sizes)
}

/// True iff `subset` is empty, or its second moment is invertible and every
/// member's squared norm under it is at most `lambda`.
pub fn is_good_subset(y: &Dataset, subset: &[usize], lambda: f64) -> bool {
    if subset.is_empty() {
        return true;
    }
    let mut mask = vec![false; y.n()];
    for &i in subset {
        mask[i] = true;
    }
    let sigma = PsdMatrix::new(subset_second_moment(y, &mask, y.n() as f64));
    if sigma.is_singular() {
        return false;
    }
    subset
        .iter()
        .all(|&i| sigma.mahalanobis_sq(y.row(i)).is_ok_and(|v| v <= lambda))
}
