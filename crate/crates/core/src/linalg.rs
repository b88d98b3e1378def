//! Dense symmetric linear algebra used by the estimators.
//!
//! Datasets are stored row-major (one sample per row) so that per-sample
//! loops touch contiguous memory. Small `d × d` matrices use `nalgebra`.
//! All reductions run in a fixed row-major, left-to-right order so that
//! computations on adjacent datasets are bit-reproducible.

use std::ops::Deref;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative pivot threshold for Cholesky, scaled by the largest diagonal entry.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// A Sherman–Morrison denominator below `DENOMINATOR_TOLERANCE * m` triggers a
/// fresh factorization instead of an incremental update.
pub const DENOMINATOR_TOLERANCE: f64 = 1e-9;

/// Number of incremental downdates after which [`PrecisionState`] refactorizes.
pub const REFRESH_INTERVAL: usize = 256;

/// An `n × d` matrix of finite samples, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Dataset {
    pub fn from_vec(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Shape(format!("need n >= 1 and d >= 1, got {n} x {d}")));
        }
        if data.len() != n * d {
            return Err(Error::Shape(format!(
                "buffer has {} entries, expected {n} x {d} = {}",
                data.len(),
                n * d
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / d, col: pos % d });
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Shape(format!(
                "row {bad} has {} columns, expected {d}",
                rows[bad].len()
            )));
        }
        Self::from_vec(n, d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Copy of this dataset with row `i` replaced.
    pub fn with_row(&self, i: usize, row: &[f64]) -> Result<Self> {
        if i >= self.n {
            return Err(Error::Shape(format!("row index {i} out of range for n = {}", self.n)));
        }
        if row.len() != self.d {
            return Err(Error::Shape(format!("replacement row has {} columns, expected {}", row.len(), self.d)));
        }
        if let Some(col) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, col });
        }
        let mut out = self.clone();
        out.data[i * self.d..(i + 1) * self.d].copy_from_slice(row);
        Ok(out)
    }

    /// Indices of rows that differ, or `None` when the shapes disagree.
    pub fn differing_rows(&self, other: &Dataset) -> Option<Vec<usize>> {
        if self.n != other.n || self.d != other.d {
            return None;
        }
        Some((0..self.n).filter(|&i| self.row(i) != other.row(i)).collect())
    }

    /// Same shape and exactly one differing row.
    pub fn is_adjacent(&self, other: &Dataset) -> bool {
        self.differing_rows(other).is_some_and(|rows| rows.len() == 1)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.d];
        for row in self.rows() {
            for (m, v) in mu.iter_mut().zip(row) {
                *m += v;
            }
        }
        let inv_n = 1.0 / self.n as f64;
        mu.iter_mut().for_each(|m| *m *= inv_n);
        mu
    }

    /// Applies `row ↦ A·row` to every sample.
    pub fn map_rows(&self, a: &DMatrix<f64>) -> Result<Self> {
        if a.ncols() != self.d {
            return Err(Error::Shape(format!("transform has {} columns, data has d = {}", a.ncols(), self.d)));
        }
        let out_d = a.nrows();
        let mut data = Vec::with_capacity(self.n * out_d);
        for row in self.rows() {
            for r in 0..out_d {
                let mut s = 0.0;
                for (c, v) in row.iter().enumerate() {
                    s += a[(r, c)] * v;
                }
                data.push(s);
            }
        }
        Self::from_vec(self.n, out_d, data)
    }

    /// Adds `shift` to every sample.
    pub fn translate(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.d {
            return Err(Error::Shape("shift length does not match d".into()));
        }
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.d) {
            for (v, s) in row.iter_mut().zip(shift) {
                *v += s;
            }
        }
        Self::from_vec(self.n, self.d, data)
    }

    /// Sub-dataset made of the listed rows, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::Shape(format!("row index {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::from_vec(indices.len(), self.d, data)
    }
}

/// Rows `(x_i − x_{i+m}) / √2` for `m = ⌊n/2⌋`, keeping the source size.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    rows: Dataset,
    source_n: usize,
}

impl PairedDataset {
    /// Wraps rows that are already paired (for example, when a paired
    /// dataset is handed on to a covariance routine that expects `y`).
    pub fn from_paired_rows(rows: Dataset) -> Self {
        let source_n = 2 * rows.n();
        Self { rows, source_n }
    }

    pub fn m(&self) -> usize {
        self.rows.n()
    }

    pub fn source_n(&self) -> usize {
        self.source_n
    }

    pub fn into_dataset(self) -> Dataset {
        self.rows
    }
}

impl Deref for PairedDataset {
    type Target = Dataset;

    fn deref(&self) -> &Dataset {
        &self.rows
    }
}

/// Pairs sample `i` with sample `i + m` and rescales by `1/√2`. An odd
/// trailing sample is dropped.
pub fn pair_and_rescale(x: &Dataset) -> Result<PairedDataset> {
    if x.n() < 2 {
        return Err(Error::TooFewSamples(x.n()));
    }
    let m = x.n() / 2;
    let d = x.d();
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut data = Vec::with_capacity(m * d);
    for i in 0..m {
        let (a, b) = (x.row(i), x.row(i + m));
        data.extend(a.iter().zip(b).map(|(p, q)| scale * (p - q)));
    }
    Ok(PairedDataset {
        rows: Dataset::from_vec(m, d, data)?,
        source_n: x.n(),
    })
}

/// Lower-triangular Cholesky factor, or `None` when a pivot falls at or below
/// `PIVOT_TOLERANCE` times the largest diagonal entry.
pub fn cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = a.nrows();
    debug_assert_eq!(d, a.ncols());
    let max_diag = (0..d).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
    let tol = PIVOT_TOLERANCE * max_diag;
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut s = a[(j, j)];
        for p in 0..j {
            s -= l[(j, p)] * l[(j, p)];
        }
        // also rejects NaN
        if !(s > tol) {
            return None;
        }
        let ljj = s.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut s = a[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// Row-major copy of a lower-triangular factor, for fast substitution.
#[derive(Debug, Clone, PartialEq)]
struct RowFactor {
    d: usize,
    data: Vec<f64>,
}

impl RowFactor {
    fn new(l: &DMatrix<f64>) -> Self {
        let d = l.nrows();
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                data[i * d + j] = l[(i, j)];
            }
        }
        Self { d, data }
    }

    /// Solves `L z = v`.
    #[inline]
    fn forward(&self, v: &[f64], z: &mut [f64]) {
        let d = self.d;
        for i in 0..d {
            let row = &self.data[i * d..i * d + i];
            let mut s = v[i];
            for (lij, zj) in row.iter().zip(&z[..i]) {
                s -= lij * zj;
            }
            z[i] = s / self.data[i * d + i];
        }
    }

    /// `L⁻ᵀ L⁻¹`, assembled from two triangular solves per column.
    fn inverse(&self) -> DMatrix<f64> {
        let d = self.d;
        // columns of L⁻¹
        let mut linv = DMatrix::<f64>::zeros(d, d);
        let mut e = vec![0.0; d];
        let mut z = vec![0.0; d];
        for c in 0..d {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            self.forward(&e, &mut z);
            for r in 0..d {
                linv[(r, c)] = z[r];
            }
        }
        let inv = linv.transpose() * &linv;
        symmetrize(&inv)
    }
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Symmetric positive (semi)definite matrix with cached Cholesky factor and
/// inverse. Both caches are present exactly when the factorization succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    entries: DMatrix<f64>,
    factor: Option<DMatrix<f64>>,
    row_factor: Option<RowFactor>,
    inverse: Option<DMatrix<f64>>,
}

impl PsdMatrix {
    /// Symmetrizes `entries` and attempts a Cholesky factorization.
    pub fn new(entries: DMatrix<f64>) -> Self {
        assert_eq!(entries.nrows(), entries.ncols(), "PsdMatrix must be square");
        let entries = symmetrize(&entries);
        let factor = cholesky(&entries);
        let row_factor = factor.as_ref().map(RowFactor::new);
        let inverse = row_factor.as_ref().map(RowFactor::inverse);
        Self {
            entries,
            factor,
            row_factor,
            inverse,
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::new(DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn factor(&self) -> Option<&DMatrix<f64>> {
        self.factor.as_ref()
    }

    pub fn inverse(&self) -> Option<&DMatrix<f64>> {
        self.inverse.as_ref()
    }

    pub fn is_singular(&self) -> bool {
        self.factor.is_none()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// Writes `L⁻¹ v` into `out`; returns `false` (leaving `out` untouched)
    /// when the matrix is singular.
    #[inline]
    pub fn whiten_into(&self, v: &[f64], out: &mut [f64]) -> bool {
        match &self.row_factor {
            Some(f) => {
                f.forward(v, out);
                true
            }
            None => false,
        }
    }

    /// `vᵀ Σ⁻¹ v`, or `+∞` when the matrix is singular.
    pub fn mahalanobis_sq(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::Shape(format!("vector has length {}, matrix is {}x{}", v.len(), self.dim(), self.dim())));
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteVector(i));
        }
        let mut z = vec![0.0; v.len()];
        if !self.whiten_into(v, &mut z) {
            return Ok(f64::INFINITY);
        }
        Ok(z.iter().map(|t| t * t).sum())
    }
}

/// Squared Mahalanobis norm of `v` under `sigma`; `+∞` for singular `sigma`.
pub fn mahalanobis_sq(v: &[f64], sigma: &PsdMatrix) -> Result<f64> {
    sigma.mahalanobis_sq(v)
}

/// Adds `scale · row rowᵀ` to the upper triangle of a row-major `d × d` buffer.
#[inline]
fn accumulate_outer(acc: &mut [f64], d: usize, row: &[f64], scale: f64) {
    for a in 0..d {
        let sa = scale * row[a];
        let dst = &mut acc[a * d + a..a * d + d];
        for (t, rb) in dst.iter_mut().zip(&row[a..]) {
            *t += sa * rb;
        }
    }
}

fn upper_to_matrix(acc: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |r, c| if r <= c { acc[r * d + c] } else { acc[c * d + r] })
}

/// `Σ_i w_i y_i y_iᵀ`.
pub fn weighted_second_moment(y: &Dataset, w: &[f64]) -> Result<PsdMatrix> {
    if w.len() != y.n() {
        return Err(Error::Shape(format!("{} weights for {} rows", w.len(), y.n())));
    }
    if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::ParameterRange(format!("weight {i} must be finite and nonnegative")));
    }
    let d = y.d();
    let mut acc = vec![0.0; d * d];
    for (row, &wi) in y.rows().zip(w) {
        if wi != 0.0 {
            accumulate_outer(&mut acc, d, row, wi);
        }
    }
    Ok(PsdMatrix::new(upper_to_matrix(&acc, d)))
}

/// `(1/divisor) Σ_{j active} y_j y_jᵀ`.
pub fn subset_second_moment(y: &Dataset, active: &[bool], divisor: f64) -> DMatrix<f64> {
    let d = y.d();
    let mut acc = vec![0.0; d * d];
    for (row, _) in y.rows().zip(active).filter(|(_, a)| **a) {
        accumulate_outer(&mut acc, d, row, 1.0);
    }
    let inv = 1.0 / divisor;
    acc.iter_mut().for_each(|v| *v *= inv);
    upper_to_matrix(&acc, d)
}

/// Inverse second-moment matrix of an active subset together with every
/// point's squared Mahalanobis norm under it, maintained through rank-one
/// downdates as points leave the active set.
#[derive(Debug, Clone)]
pub struct PrecisionState<'a> {
    y: &'a Dataset,
    divisor: f64,
    // row-major d × d, None when the active second moment is singular
    inv: Option<Vec<f64>>,
    norms: Vec<f64>,
    active: Vec<bool>,
    active_count: usize,
    since_refresh: usize,
    fresh_factorizations: usize,
}

impl<'a> PrecisionState<'a> {
    /// State for the full index set, normalized by `divisor` (usually `m`).
    pub fn new(y: &'a Dataset, divisor: f64) -> Self {
        Self::with_active(y, divisor, vec![true; y.n()])
    }

    pub fn with_active(y: &'a Dataset, divisor: f64, active: Vec<bool>) -> Self {
        assert_eq!(active.len(), y.n(), "active mask length must equal row count");
        let active_count = active.iter().filter(|a| **a).count();
        let mut state = Self {
            y,
            divisor,
            inv: None,
            norms: vec![f64::INFINITY; y.n()],
            active,
            active_count,
            since_refresh: 0,
            fresh_factorizations: 0,
        };
        state.refresh();
        state
    }

    /// Recomputes the inverse and all norms from a fresh factorization.
    pub fn refresh(&mut self) {
        let d = self.y.d();
        self.since_refresh = 0;
        self.fresh_factorizations += 1;
        let sigma = subset_second_moment(self.y, &self.active, self.divisor);
        let Some(l) = cholesky(&sigma) else {
            self.inv = None;
            self.norms.iter_mut().for_each(|v| *v = f64::INFINITY);
            return;
        };
        let factor = RowFactor::new(&l);
        let inv = factor.inverse();
        let mut flat = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                flat[r * d + c] = inv[(r, c)];
            }
        }
        self.inv = Some(flat);
        let mut z = vec![0.0; d];
        for (norm, row) in self.norms.iter_mut().zip(self.y.rows()) {
            factor.forward(row, &mut z);
            *norm = z.iter().map(|t| t * t).sum();
        }
    }

    /// Removes point `i` from the active set via Sherman–Morrison:
    /// `Σ₂⁻¹ = Σ₁⁻¹ + Σ₁⁻¹uuᵀΣ₁⁻¹ / (m − uᵀΣ₁⁻¹u)`.
    /// Removing an inactive index is a no-op.
    pub fn downdate(&mut self, i: usize) {
        if !self.active[i] {
            return;
        }
        self.active[i] = false;
        self.active_count -= 1;
        let d = self.y.d();
        // a singular matrix stays singular once points are removed
        let Some(inv) = self.inv.as_mut() else {
            return;
        };
        // Fewer than d rows cannot span; the update would only leave cancellation residue.
        if self.active_count < d {
            self.inv = None;
            self.norms.iter_mut().for_each(|v| *v = f64::INFINITY);
            return;
        }
        let u = self.y.row(i);
        let mut g = vec![0.0; d];
        for (a, ga) in g.iter_mut().enumerate() {
            let row = &inv[a * d..(a + 1) * d];
            *ga = row.iter().zip(u).map(|(p, q)| p * q).sum();
        }
        let quad: f64 = g.iter().zip(u).map(|(p, q)| p * q).sum();
        let denom = self.divisor - quad;
        if !denom.is_finite() || denom.abs() < DENOMINATOR_TOLERANCE * self.divisor {
            self.refresh();
            return;
        }
        let inv_denom = 1.0 / denom;
        for a in 0..d {
            let ga = g[a] * inv_denom;
            for (t, gb) in inv[a * d..(a + 1) * d].iter_mut().zip(&g) {
                *t += ga * gb;
            }
        }
        for (norm, row) in self.norms.iter_mut().zip(self.y.rows()) {
            let t: f64 = row.iter().zip(&g).map(|(p, q)| p * q).sum();
            *norm += t * t * inv_denom;
        }
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.refresh();
        }
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    pub fn inverse(&self) -> Option<DMatrix<f64>> {
        let d = self.y.d();
        self.inv.as_ref().map(|flat| DMatrix::from_fn(d, d, |r, c| flat[r * d + c]))
    }

    pub fn is_singular(&self) -> bool {
        self.inv.is_none()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn active_count(&self) -> usize {
        self.active_count
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn divisor(&self) -> f64 {
        self.divisor
    }

    /// Number of full factorizations performed so far (initial one included).
    pub fn fresh_factorizations(&self) -> usize {
        self.fresh_factorizations
    }
}

/// Functional form of [`PrecisionState::downdate`].
pub fn rank_one_downdate(mut state: PrecisionState<'_>, i: usize) -> PrecisionState<'_> {
    state.downdate(i);
    state
}
