//! Seeded generation of measurement matrices, sparse signals, and the
//! (delta, rho) -> (m, s) parameter mapping.
//!
//! All generators are pure functions of their shape parameters and seed
//! (streams from [`crate::rng`]), so repeated calls are bitwise identical and
//! sweeps can run in parallel on derived seeds.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rustdct::{DctPlanner, TransformType2And3};

use crate::blas;
use crate::error::{Error, Result};
use crate::rng;

/// Default cap on dense allocations, in elements (~2 GiB of f64).
pub const DEFAULT_DENSE_CAP: usize = 1 << 28;

/// A point on the (delta, rho) sampling plane at signal dimension n.
///
/// delta = m/n is the undersampling rate and rho = s/m the oversampling
/// rate; both live in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePoint {
    pub n: usize,
    pub delta: f64,
    pub rho: f64,
}

impl PlanePoint {
    pub fn new(n: usize, delta: f64, rho: f64) -> Result<Self> {
        let p = PlanePoint { n, delta, rho };
        p.params()?;
        Ok(p)
    }

    /// Maps (delta, rho) to measurement count m and sparsity s.
    ///
    /// m = round(delta * n), s = max(1, round(rho * m)), rounding half up.
    pub fn params(&self) -> Result<(usize, usize)> {
        if self.n == 0 {
            return Err(Error::invalid("signal dimension n must be positive"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::invalid(format!("delta must be in (0, 1], got {}", self.delta)));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::invalid(format!("rho must be in (0, 1], got {}", self.rho)));
        }
        let m = (self.delta * self.n as f64).round() as usize;
        if m < 1 {
            return Err(Error::invalid(format!(
                "delta {} at n {} rounds to m = 0",
                self.delta, self.n
            )));
        }
        if m > self.n {
            return Err(Error::invalid(format!("m = {m} exceeds n = {}", self.n)));
        }
        let s = ((self.rho * m as f64).round() as usize).max(1);
        if s > m {
            return Err(Error::invalid(format!("s = {s} exceeds m = {m}")));
        }
        Ok((m, s))
    }
}

/// Convenience wrapper for [`PlanePoint::params`].
pub fn params_from_plane(point: PlanePoint) -> Result<(usize, usize)> {
    point.params()
}

/// The measurement-matrix families used across the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MatrixKind {
    Gaussian,
    SparseCol,
    SubDct,
    Tomo,
    ExplicitDense,
}

impl MatrixKind {
    pub fn label(&self) -> &'static str {
        match self {
            MatrixKind::Gaussian => "gaussian",
            MatrixKind::SparseCol => "sparse",
            MatrixKind::SubDct => "dct",
            MatrixKind::Tomo => "tomo",
            MatrixKind::ExplicitDense => "dense",
        }
    }
}

#[derive(Debug)]
pub(crate) enum Storage {
    Dense(Array2<f64>),
    /// Column-compressed: column j owns rows[j*p .. (j+1)*p] (sorted) with
    /// matching values.
    SparseCols {
        p: usize,
        rows: Vec<u32>,
        vals: Vec<f64>,
    },
    /// Row-subsampled orthonormal DCT-II, stored as the selected row indices;
    /// apply/adjoint go through a fast transform.
    SubDct { rows: Vec<u32> },
}

/// An m x n measurement matrix with fast apply / adjoint-apply.
#[derive(Debug)]
pub struct MeasurementMatrix {
    kind: MatrixKind,
    m: usize,
    n: usize,
    seed: u64,
    storage: Storage,
}

thread_local! {
    static DCT_PLANS: RefCell<HashMap<usize, Arc<dyn TransformType2And3<f64>>>> =
        RefCell::new(HashMap::new());
}

fn with_dct_plan<R>(n: usize, f: impl FnOnce(&Arc<dyn TransformType2And3<f64>>) -> R) -> R {
    DCT_PLANS.with(|cell| {
        let mut map = cell.borrow_mut();
        let plan = map
            .entry(n)
            .or_insert_with(|| DctPlanner::new().plan_dct2(n))
            .clone();
        drop(map);
        f(&plan)
    })
}

/// In-place orthonormal DCT-II of `buf`.
fn dct2_orthonormal(buf: &mut [f64]) {
    let n = buf.len();
    with_dct_plan(n, |plan| plan.process_dct2(buf));
    let scale = (2.0 / n as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
    buf[0] *= std::f64::consts::FRAC_1_SQRT_2;
}

/// In-place transpose (inverse) of the orthonormal DCT-II.
fn dct2_orthonormal_adjoint(buf: &mut [f64]) {
    let n = buf.len();
    let scale = (2.0 / n as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
    // DCT-III as implemented halves the first input; pre-doubling the
    // sqrt(2)-scaled entry lands exactly on the orthonormal transpose.
    buf[0] *= std::f64::consts::SQRT_2;
    with_dct_plan(n, |plan| plan.process_dct3(buf));
}

impl MeasurementMatrix {
    pub fn kind(&self) -> MatrixKind {
        self.kind
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Wraps an explicit dense matrix.
    pub fn from_dense(a: Array2<f64>) -> Self {
        Self::from_dense_with(a, MatrixKind::ExplicitDense, 0)
    }

    pub(crate) fn from_dense_with(a: Array2<f64>, kind: MatrixKind, seed: u64) -> Self {
        let (m, n) = a.dim();
        MeasurementMatrix { kind, m, n, seed, storage: Storage::Dense(a) }
    }

    pub(crate) fn from_parts(
        kind: MatrixKind,
        m: usize,
        n: usize,
        seed: u64,
        storage: Storage,
    ) -> Self {
        MeasurementMatrix { kind, m, n, seed, storage }
    }

    /// y = A x.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n, "apply: x length");
        assert_eq!(y.len(), self.m, "apply: y length");
        match &self.storage {
            Storage::Dense(a) => blas::gemv(a.as_slice().unwrap(), self.m, self.n, x, y),
            Storage::SparseCols { p, rows, vals } => {
                y.fill(0.0);
                for j in 0..self.n {
                    let xj = x[j];
                    if xj == 0.0 {
                        continue;
                    }
                    for t in j * p..(j + 1) * p {
                        y[rows[t] as usize] += vals[t] * xj;
                    }
                }
            }
            Storage::SubDct { rows } => {
                let mut buf = x.to_vec();
                dct2_orthonormal(&mut buf);
                for (yi, &r) in y.iter_mut().zip(rows) {
                    *yi = buf[r as usize];
                }
            }
        }
    }

    /// z = A^T r.
    pub fn adjoint_into(&self, r: &[f64], z: &mut [f64]) {
        assert_eq!(r.len(), self.m, "adjoint: r length");
        assert_eq!(z.len(), self.n, "adjoint: z length");
        match &self.storage {
            Storage::Dense(a) => blas::gemv_t(a.as_slice().unwrap(), self.m, self.n, r, z),
            Storage::SparseCols { p, rows, vals } => {
                for j in 0..self.n {
                    let mut acc = 0.0;
                    for t in j * p..(j + 1) * p {
                        acc += vals[t] * r[rows[t] as usize];
                    }
                    z[j] = acc;
                }
            }
            Storage::SubDct { rows } => {
                let mut buf = vec![0.0; self.n];
                for (ri, &row) in r.iter().zip(rows) {
                    buf[row as usize] = *ri;
                }
                dct2_orthonormal_adjoint(&mut buf);
                z.copy_from_slice(&buf);
            }
        }
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut y = Array1::zeros(self.m);
        self.apply_into(x.as_slice().unwrap(), y.as_slice_mut().unwrap());
        y
    }

    pub fn adjoint_apply(&self, r: ArrayView1<f64>) -> Array1<f64> {
        let mut z = Array1::zeros(self.n);
        self.adjoint_into(r.as_slice().unwrap(), z.as_slice_mut().unwrap());
        z
    }

    /// Writes column j into `out`.
    pub fn column_into(&self, j: usize, out: &mut [f64]) {
        assert!(j < self.n);
        assert_eq!(out.len(), self.m);
        match &self.storage {
            Storage::Dense(a) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = a[(i, j)];
                }
            }
            Storage::SparseCols { p, rows, vals } => {
                out.fill(0.0);
                for t in j * p..(j + 1) * p {
                    out[rows[t] as usize] = vals[t];
                }
            }
            Storage::SubDct { .. } => {
                let mut e = vec![0.0; self.n];
                e[j] = 1.0;
                self.apply_into(&e, out);
            }
        }
    }

    /// Gathers the columns listed in `cols` into a row-major (m, k) block.
    pub fn gather_columns(&self, cols: &[usize]) -> Vec<f64> {
        let k = cols.len();
        let mut block = vec![0.0; self.m * k];
        match &self.storage {
            Storage::Dense(a) => {
                let data = a.as_slice().unwrap();
                for i in 0..self.m {
                    let row = &data[i * self.n..(i + 1) * self.n];
                    let out = &mut block[i * k..(i + 1) * k];
                    for (slot, &j) in out.iter_mut().zip(cols) {
                        *slot = row[j];
                    }
                }
            }
            Storage::SparseCols { p, rows, vals } => {
                for (jj, &j) in cols.iter().enumerate() {
                    for t in j * p..(j + 1) * p {
                        block[rows[t] as usize * k + jj] = vals[t];
                    }
                }
            }
            Storage::SubDct { .. } => {
                let mut col = vec![0.0; self.m];
                for (jj, &j) in cols.iter().enumerate() {
                    self.column_into(j, &mut col);
                    for i in 0..self.m {
                        block[i * k + jj] = col[i];
                    }
                }
            }
        }
        block
    }

    /// Row i as a contiguous slice; only dense-backed kinds have one.
    pub fn row_slice(&self, i: usize) -> Option<&[f64]> {
        match &self.storage {
            Storage::Dense(a) => {
                let data = a.as_slice().unwrap();
                Some(&data[i * self.n..(i + 1) * self.n])
            }
            _ => None,
        }
    }

    /// The dense slice backing this matrix, if any.
    pub fn dense_data(&self) -> Option<&Array2<f64>> {
        match &self.storage {
            Storage::Dense(a) => Some(a),
            _ => None,
        }
    }

    /// Materializes the full dense matrix (tests, export, oracles).
    pub fn to_dense(&self) -> Array2<f64> {
        match &self.storage {
            Storage::Dense(a) => a.clone(),
            Storage::SparseCols { p, rows, vals } => {
                let mut a = Array2::zeros((self.m, self.n));
                for j in 0..self.n {
                    for t in j * p..(j + 1) * p {
                        a[(rows[t] as usize, j)] = vals[t];
                    }
                }
                a
            }
            Storage::SubDct { rows } => {
                let mut a = Array2::zeros((self.m, self.n));
                let norm = (2.0 / self.n as f64).sqrt();
                for (i, &r) in rows.iter().enumerate() {
                    let k = r as usize;
                    let sigma = if k == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
                    for j in 0..self.n {
                        let angle = std::f64::consts::PI * k as f64 * (2 * j + 1) as f64
                            / (2.0 * self.n as f64);
                        a[(i, j)] = sigma * norm * angle.cos();
                    }
                }
                a
            }
        }
    }

    /// Per-column nonzero structure for the sparse ensemble.
    pub fn sparse_structure(&self) -> Option<(usize, &[u32], &[f64])> {
        match &self.storage {
            Storage::SparseCols { p, rows, vals } => Some((*p, rows, vals)),
            _ => None,
        }
    }

    /// Selected DCT row indices for the subsampled-DCT ensemble.
    pub fn subdct_rows(&self) -> Option<&[u32]> {
        match &self.storage {
            Storage::SubDct { rows } => Some(rows),
            _ => None,
        }
    }
}

fn check_dense_cap(m: usize, n: usize, cap: usize) -> Result<()> {
    let elems = m.checked_mul(n).ok_or(Error::AllocationCap { rows: m, cols: n, cap })?;
    if elems > cap {
        return Err(Error::AllocationCap { rows: m, cols: n, cap });
    }
    Ok(())
}

/// Dense Gaussian ensemble with entries i.i.d. N(0, 1/m), so columns have
/// unit norm in expectation.
pub fn gen_gaussian(m: usize, n: usize, seed: u64) -> Result<MeasurementMatrix> {
    gen_gaussian_scaled(m, n, seed, None)
}

/// Dense Gaussian matrix with entries i.i.d. N(0, 1).
pub fn gen_gaussian_unit(m: usize, n: usize, seed: u64) -> Result<MeasurementMatrix> {
    gen_gaussian_scaled(m, n, seed, Some(1.0))
}

fn gen_gaussian_scaled(
    m: usize,
    n: usize,
    seed: u64,
    sigma: Option<f64>,
) -> Result<MeasurementMatrix> {
    if m < 1 || n < 1 {
        return Err(Error::invalid("gaussian matrix needs m, n >= 1"));
    }
    check_dense_cap(m, n, DEFAULT_DENSE_CAP)?;
    let sigma = sigma.unwrap_or_else(|| 1.0 / (m as f64).sqrt());
    let mut rng = rng::stream(seed);
    let data: Vec<f64> = (0..m * n).map(|_| sigma * rng::normal(&mut rng)).collect();
    let a = Array2::from_shape_vec((m, n), data).expect("shape");
    Ok(MeasurementMatrix::from_dense_with(a, MatrixKind::Gaussian, seed))
}

/// Sparse ensemble: each column holds exactly p nonzeros at distinct uniform
/// rows, each equal to +/- p^(-1/2), so every column has unit norm.
pub fn gen_sparse_col(m: usize, n: usize, p: usize, seed: u64) -> Result<MeasurementMatrix> {
    if p < 1 || p > m {
        return Err(Error::invalid(format!("need 1 <= p <= m, got p={p}, m={m}")));
    }
    if n < 1 {
        return Err(Error::invalid("need n >= 1"));
    }
    let mut rng = rng::stream(seed);
    let mag = 1.0 / (p as f64).sqrt();
    let mut rows = Vec::with_capacity(n * p);
    let mut vals = Vec::with_capacity(n * p);
    for _ in 0..n {
        let mut picked = rng::sample_without_replacement(m, p, &mut rng);
        picked.sort_unstable();
        for r in picked {
            rows.push(r as u32);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            vals.push(sign * mag);
        }
    }
    Ok(MeasurementMatrix::from_parts(
        MatrixKind::SparseCol,
        m,
        n,
        seed,
        Storage::SparseCols { p, rows, vals },
    ))
}

use rand::Rng;

/// Subsampled-DCT ensemble: m distinct rows of the n x n orthonormal DCT-II
/// matrix, drawn uniformly without replacement and kept in ascending order.
pub fn gen_subdct(m: usize, n: usize, seed: u64) -> Result<MeasurementMatrix> {
    if m < 1 || n < 1 || m > n {
        return Err(Error::invalid(format!("need 1 <= m <= n, got m={m}, n={n}")));
    }
    let mut rng = rng::stream(seed);
    let mut rows: Vec<usize> = rng::sample_without_replacement(n, m, &mut rng);
    rows.sort_unstable();
    let rows: Vec<u32> = rows.into_iter().map(|r| r as u32).collect();
    Ok(MeasurementMatrix::from_parts(MatrixKind::SubDct, m, n, seed, Storage::SubDct { rows }))
}

/// An s-sparse signal with +/-1 entries on a uniform random support.
#[derive(Debug, Clone)]
pub struct SparseSignal {
    pub n: usize,
    /// Sorted, distinct support indices, |support| = s.
    pub support: Vec<usize>,
    /// Entry values on the support, each exactly +1 or -1.
    pub values: Vec<f64>,
}

impl SparseSignal {
    pub fn s(&self) -> usize {
        self.support.len()
    }

    pub fn to_dense(&self) -> Array1<f64> {
        let mut x = Array1::zeros(self.n);
        for (&i, &v) in self.support.iter().zip(&self.values) {
            x[i] = v;
        }
        x
    }
}

/// Draws an s-sparse +/-1 signal of dimension n.
pub fn gen_signal(n: usize, s: usize, seed: u64) -> Result<SparseSignal> {
    if s < 1 || s > n {
        return Err(Error::invalid(format!("need 1 <= s <= n, got s={s}, n={n}")));
    }
    let mut rng = rng::stream(seed);
    let mut support = rng::sample_without_replacement(n, s, &mut rng);
    support.sort_unstable();
    let values: Vec<f64> =
        (0..s).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
    Ok(SparseSignal { n, support, values })
}

/// Builds the measurement matrix for one ensemble kind at the given shape.
/// `SparseCol` uses the experiment-wide column sparsity p = 7.
pub fn gen_ensemble(kind: MatrixKind, m: usize, n: usize, seed: u64) -> Result<MeasurementMatrix> {
    /// Nonzeros per column of the sparse ensemble.
    pub const SPARSE_COL_P: usize = 7;
    match kind {
        MatrixKind::Gaussian => gen_gaussian(m, n, seed),
        MatrixKind::SparseCol => gen_sparse_col(m, n, SPARSE_COL_P.min(m), seed),
        MatrixKind::SubDct => gen_subdct(m, n, seed),
        other => Err(Error::invalid(format!(
            "{other:?} is not generated from (m, n, seed) alone"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn plane_params_match_exact_arithmetic() {
        let p = PlanePoint { n: 4096, delta: 0.5, rho: 0.25 };
        assert_eq!(p.params().unwrap(), (2048, 512));
        let p = PlanePoint { n: 4096, delta: 1.0, rho: 1.0 };
        assert_eq!(p.params().unwrap(), (4096, 4096));
        let p = PlanePoint { n: 100, delta: 0.013, rho: 0.5 };
        assert_eq!(p.params().unwrap(), (1, 1));
    }

    #[test]
    fn plane_params_reject_bad_inputs() {
        assert!(PlanePoint { n: 100, delta: 1.5, rho: 0.5 }.params().is_err());
        assert!(PlanePoint { n: 100, delta: 0.5, rho: 0.0 }.params().is_err());
        assert!(PlanePoint { n: 1000, delta: 0.0004, rho: 0.5 }.params().is_err());
    }

    #[test]
    fn gaussian_statistics_match_declared_distribution() {
        let (m, n) = (2048, 4096);
        let a = gen_gaussian(m, n, 7).unwrap();
        let d = a.dense_data().unwrap();
        let count = (m * n) as f64;
        let mean = d.sum() / count;
        let sigma = 1.0 / (m as f64).sqrt();
        assert!(
            mean.abs() < 4.0 * sigma / count.sqrt(),
            "sample mean {mean} too far from 0"
        );
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        assert!((var - 1.0 / m as f64).abs() < 0.05 / m as f64, "variance {var}");
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a = gen_gaussian(32, 64, 5).unwrap();
        let b = gen_gaussian(32, 64, 5).unwrap();
        assert_eq!(a.dense_data().unwrap(), b.dense_data().unwrap());
        let c = gen_gaussian(32, 64, 6).unwrap();
        assert_ne!(a.dense_data().unwrap(), c.dense_data().unwrap());
    }

    #[test]
    fn gaussian_degenerate_size() {
        let a = gen_gaussian(1, 1, 0).unwrap();
        assert!(a.dense_data().unwrap()[(0, 0)].is_finite());
    }

    #[test]
    fn gaussian_column_norms_near_unit() {
        let a = gen_gaussian(256, 128, 9).unwrap();
        let d = a.to_dense();
        let mean_norm: f64 = (0..128)
            .map(|j| d.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / 128.0;
        assert!((mean_norm - 1.0).abs() < 0.05, "mean column norm {mean_norm}");
    }

    #[test]
    fn sparse_col_structure() {
        let a = gen_sparse_col(100, 200, 7, 3).unwrap();
        let d = a.to_dense();
        let mag = 1.0 / 7.0f64.sqrt();
        for j in 0..200 {
            let col = d.column(j);
            let nnz = col.iter().filter(|v| **v != 0.0).count();
            assert_eq!(nnz, 7, "column {j}");
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12, "column {j} norm {norm}");
            for v in col.iter().filter(|v| **v != 0.0) {
                assert!((v.abs() - mag).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sparse_col_full_column_when_p_equals_m() {
        let a = gen_sparse_col(5, 1, 5, 0).unwrap();
        let d = a.to_dense();
        let mag = 1.0 / 5.0f64.sqrt();
        for i in 0..5 {
            assert!((d[(i, 0)].abs() - mag).abs() < 1e-15);
        }
    }

    #[test]
    fn sparse_col_rejects_p_above_m() {
        assert!(gen_sparse_col(5, 3, 6, 0).is_err());
    }

    #[test]
    fn subdct_full_square_is_orthonormal() {
        let n = 64;
        let a = gen_subdct(n, n, 42).unwrap();
        let d = a.to_dense();
        let aat = d.dot(&d.t());
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((aat[(i, j)] - expect).abs() < 1e-10, "({i},{j})");
            }
        }
        let ata = d.t().dot(&d);
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ata[(i, j)] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn subdct_row_subset_keeps_row_orthonormality() {
        let a = gen_subdct(512, 4096, 1).unwrap();
        let d = a.to_dense();
        let aat = d.dot(&d.t());
        for i in 0..512 {
            for j in 0..512 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((aat[(i, j)] - expect).abs() < 1e-10, "({i},{j}) = {}", aat[(i, j)]);
            }
        }
    }

    #[test]
    fn subdct_row_zero_is_constant() {
        // Force row 0 into the subset by taking all rows of a small matrix.
        let n = 31;
        let a = gen_subdct(n, n, 0).unwrap();
        let d = a.to_dense();
        let expect = 1.0 / (n as f64).sqrt();
        for j in 0..n {
            assert!((d[(0, j)] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn subdct_apply_matches_dense() {
        let a = gen_subdct(20, 50, 5).unwrap();
        let d = a.to_dense();
        let x = Array1::from_shape_fn(50, |i| ((i * 13 + 1) as f64 * 0.37).sin());
        let fast = a.apply(x.view());
        let slow = d.dot(&x);
        for (u, v) in fast.iter().zip(slow.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
        let r = Array1::from_shape_fn(20, |i| (i as f64 * 0.11).cos());
        let fast_t = a.adjoint_apply(r.view());
        let slow_t = d.t().dot(&r);
        for (u, v) in fast_t.iter().zip(slow_t.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn signal_has_exact_support_and_magnitudes() {
        let x = gen_signal(4096, 512, 9).unwrap();
        assert_eq!(x.s(), 512);
        let dense = x.to_dense();
        let nnz = dense.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nnz, 512);
        assert!(dense.iter().all(|v| *v == 0.0 || v.abs() == 1.0));
        let norm_sq: f64 = dense.iter().map(|v| v * v).sum();
        assert_eq!(norm_sq, 512.0);
    }

    #[test]
    fn signal_full_support() {
        let x = gen_signal(3, 3, 0).unwrap();
        assert!(x.to_dense().iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn signal_rejects_oversized_support() {
        assert!(gen_signal(3, 4, 0).is_err());
    }

    #[test]
    fn gather_columns_matches_dense() {
        for a in [
            gen_gaussian(12, 20, 4).unwrap(),
            gen_sparse_col(12, 20, 3, 4).unwrap(),
            gen_subdct(12, 20, 4).unwrap(),
        ] {
            let d = a.to_dense();
            let cols = vec![0, 5, 19, 7];
            let block = a.gather_columns(&cols);
            for i in 0..12 {
                for (jj, &j) in cols.iter().enumerate() {
                    assert!((block[i * cols.len() + jj] - d[(i, j)]).abs() < 1e-12);
                }
            }
        }
    }
}
