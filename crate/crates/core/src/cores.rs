//! Reference-set cores and the stable mean.
//!
//! Under a preconditioner Σ̂, point `i` belongs to the core at level `ℓ` when
//! at most `ℓ` reference points lie farther than `λ_ℓ` from it, i.e. it has
//! at least `|R| − ℓ` reference neighbors. Self-pairs count as neighbors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::good_subsets::{OutlierLadder, Score, SubsetLadder, capped_score};
use crate::linalg::{Dataset, PsdMatrix};

/// Sorted, distinct reference indices into `[n]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceSet {
    n: usize,
    indices: Vec<usize>,
}

impl ReferenceSet {
    /// Uniform size-`size` subset of `[n]`; the whole range when `size ≥ n`.
    pub fn sample<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Self {
        if size >= n {
            return Self::full(n);
        }
        let mut indices = rand::seq::index::sample(rng, n, size).into_vec();
        indices.sort_unstable();
        Self { n, indices }
    }

    pub fn full(n: usize) -> Self {
        Self {
            n,
            indices: (0..n).collect(),
        }
    }

    pub fn from_indices(n: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if let Some(&last) = indices.last()
            && last >= n
        {
            return Err(Error::InvalidReferenceSet(format!("index {last} out of range for n = {n}")));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidReferenceSet("duplicate indices".into()));
        }
        Ok(Self { n, indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn population(&self) -> usize {
        self.n
    }
}

/// Rows of `x` mapped through `L⁻¹`, so Mahalanobis distances under Σ̂ become
/// Euclidean.
pub(crate) fn whiten(x: &Dataset, sigma_hat: &PsdMatrix) -> Result<Vec<f64>> {
    let d = x.d();
    if sigma_hat.dim() != d {
        return Err(Error::Shape(format!("preconditioner is {0}x{0}, data has {d} columns", sigma_hat.dim())));
    }
    let mut out = vec![0.0; x.n() * d];
    for (row, slot) in x.rows().zip(out.chunks_exact_mut(d.max(1))) {
        if !sigma_hat.whiten_into(row, slot) {
            return Err(Error::SingularCovariance);
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn check_reference(x: &Dataset, reference: &ReferenceSet) -> Result<()> {
    if reference.population() != x.n() {
        return Err(Error::InvalidReferenceSet(format!(
            "reference set drawn from [{}], data has {} rows",
            reference.population(),
            x.n()
        )));
    }
    Ok(())
}

/// Points with at least `tau` reference neighbors within squared distance
/// `lambda` under `sigma_hat` (ties count as neighbors).
pub fn largest_core(
    x: &Dataset,
    sigma_hat: &PsdMatrix,
    lambda: f64,
    tau: usize,
    reference: &ReferenceSet,
) -> Result<Vec<usize>> {
    check_reference(x, reference)?;
    let w = whiten(x, sigma_hat)?;
    let d = x.d();
    let point = |i: usize| &w[i * d..(i + 1) * d];
    Ok((0..x.n())
        .filter(|&i| {
            let near = reference
                .indices()
                .iter()
                .filter(|&&j| sq_dist(point(i), point(j)) <= lambda)
                .count();
            near >= tau
        })
        .collect())
}

/// The nested cores `S_0 ⊆ … ⊆ S_{2k}` over `[n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreLadder {
    ladder: SubsetLadder,
    top_neighbors: Vec<usize>,
}

impl CoreLadder {
    pub fn n(&self) -> usize {
        self.ladder.m()
    }

    pub fn k(&self) -> usize {
        self.ladder.k()
    }

    pub fn set(&self, level: usize) -> Vec<usize> {
        self.ladder.set(level).expect("core ladders store every level")
    }

    pub fn size(&self, level: usize) -> usize {
        self.ladder.size(level).expect("core ladders store every level")
    }

    pub fn entry_levels(&self) -> &[Option<usize>] {
        self.ladder.entry_levels()
    }

    /// Per point, the number of reference neighbors at the top threshold `e²λ₀`.
    pub fn top_neighbors(&self) -> &[usize] {
        &self.top_neighbors
    }

    pub fn as_subset_ladder(&self) -> &SubsetLadder {
        &self.ladder
    }
}

/// All `2k + 1` cores with `τ_ℓ = |R| − ℓ` in one pass over the `n × |R|`
/// distance matrix. Only distances above `λ₀` matter, so each row keeps just
/// those, sorted, and reads every level off them.
///
/// Coordinates are centered on the reference centroid and the references
/// sorted by norm, so a row stops scanning once `‖p‖ + ‖r‖` falls below
/// `√λ₀`: by the triangle inequality no remaining reference can be far.
pub fn core_ladder(
    x: &Dataset,
    sigma_hat: &PsdMatrix,
    ladder: &OutlierLadder,
    reference: &ReferenceSet,
) -> Result<CoreLadder> {
    check_reference(x, reference)?;
    let mut w = whiten(x, sigma_hat)?;
    let d = x.d();
    let k = ladder.k();
    let thresholds = ladder.thresholds();

    if d > 0 && !reference.is_empty() {
        let mut center = vec![0.0; d];
        for &j in reference.indices() {
            center.iter_mut().zip(&w[j * d..(j + 1) * d]).for_each(|(c, v)| *c += v);
        }
        center.iter_mut().for_each(|c| *c /= reference.len() as f64);
        for p in w.chunks_exact_mut(d) {
            p.iter_mut().zip(&center).for_each(|(v, c)| *v -= c);
        }
    }
    let norm = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut order: Vec<(f64, usize)> = reference
        .indices()
        .iter()
        .map(|&j| (norm(&w[j * d..(j + 1) * d]), j))
        .collect();
    order.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    let ref_norms: Vec<f64> = order.iter().map(|o| o.0).collect();
    let refs: Vec<f64> = order
        .iter()
        .flat_map(|&(_, j)| w[j * d..(j + 1) * d].iter().copied())
        .collect();
    // Shrunk so rounding in the norms cannot skip a reference at exactly λ₀.
    let reach = thresholds[0].sqrt() * (1.0 - 1e-9);

    let mut far = Vec::new();
    let mut entry = Vec::with_capacity(x.n());
    let mut top_neighbors = Vec::with_capacity(x.n());
    for i in 0..x.n() {
        let p = &w[i * d..(i + 1) * d];
        far.clear();
        if d > 0 {
            let cutoff = reach - norm(p);
            let scan = ref_norms.partition_point(|&b| b > cutoff);
            far.extend(
                refs[..scan * d]
                    .chunks_exact(d)
                    .map(|q| sq_dist(p, q))
                    .filter(|&dist| dist > thresholds[0]),
            );
        }
        far.sort_unstable_by(|a, b| b.total_cmp(a));
        let beyond = |lambda: f64| far.partition_point(|&dist| dist > lambda);
        entry.push((0..=2 * k).find(|&l| beyond(thresholds[l]) <= l));
        top_neighbors.push(reference.len() - beyond(thresholds[2 * k]));
    }
    Ok(CoreLadder {
        ladder: SubsetLadder::from_entry_levels(k, entry),
        top_neighbors,
    })
}

#[derive(Debug, Clone)]
pub struct StableMeanOutput {
    pub mu_hat: Vec<f64>,
    pub weights: Vec<f64>,
    pub score: Score,
    pub cores: CoreLadder,
}

/// Weighted mean over the top half of the core ladder, with its score
/// `min{k, min_{0≤ℓ≤k} (n − |S_ℓ| + ℓ)}`.
pub fn stable_mean(
    x: &Dataset,
    sigma_hat: &PsdMatrix,
    lambda0: f64,
    k: usize,
    reference: &ReferenceSet,
) -> Result<StableMeanOutput> {
    let required = 6 * k;
    if reference.len() <= required {
        return Err(Error::ReferenceSetTooSmall {
            size: reference.len(),
            required,
        });
    }
    let outliers = OutlierLadder::new(lambda0, k)?;
    let cores = core_ladder(x, sigma_hat, &outliers, reference)?;
    let score = capped_score(x.n(), k, cores.ladder.sizes());

    let counts = cores.ladder.top_half_counts();
    let total: usize = counts.iter().sum();
    let weights: Vec<f64> = if total == 0 {
        vec![0.0; x.n()]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    let mut mu_hat = vec![0.0; x.d()];
    for (row, &wi) in x.rows().zip(&weights) {
        if wi > 0.0 {
            mu_hat.iter_mut().zip(row).for_each(|(m, v)| *m += wi * v);
        }
    }
    Ok(StableMeanOutput {
        mu_hat,
        weights,
        score,
        cores,
    })
}

/// Exact check that `|z̃_i/|R| − z_i/n| ≤ 1/6` for every `i`, where `z_i` and
/// `z̃_i` count neighbors at threshold `e²λ₀` in `[n]` and in `R`. Quadratic
/// in `n`.
pub fn is_degree_representative(
    x: &Dataset,
    sigma_hat: &PsdMatrix,
    lambda0: f64,
    reference: &ReferenceSet,
) -> Result<bool> {
    check_reference(x, reference)?;
    if reference.is_empty() {
        return Ok(x.n() == 0);
    }
    let w = whiten(x, sigma_hat)?;
    let d = x.d();
    let point = |i: usize| &w[i * d..(i + 1) * d];
    let lambda = lambda0 * std::f64::consts::E.powi(2);
    let mut in_ref = vec![false; x.n()];
    reference.indices().iter().for_each(|&j| in_ref[j] = true);
    let n = x.n() as f64;
    let r = reference.len() as f64;
    Ok((0..x.n()).all(|i| {
        let (mut z, mut zr) = (0usize, 0usize);
        for j in 0..x.n() {
            if sq_dist(point(i), point(j)) <= lambda {
                z += 1;
                zr += in_ref[j] as usize;
            }
        }
        (zr as f64 / r - z as f64 / n).abs() <= 1.0 / 6.0
    }))
}
