//! Shared sparse-recovery primitives: hard thresholding, support projection,
//! restricted least squares, residual norms.

use ndarray::{Array1, ArrayView1};

use crate::blas;
use crate::ensembles::MeasurementMatrix;
use crate::error::{Error, Result};

/// A sorted set of distinct indices into a vector of length n.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexSet {
    indices: Vec<usize>,
}

impl IndexSet {
    /// Builds from arbitrary order; sorts and rejects duplicates.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("index set contains duplicates"));
        }
        Ok(IndexSet { indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Sorted union of two sets.
    pub fn union(&self, other: &IndexSet) -> IndexSet {
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (a, b) = (&self.indices, &other.indices);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        IndexSet { indices: out }
    }
}

/// Indices of the s largest-magnitude entries of `v`, ties broken by lowest
/// index. NaNs sort above every finite magnitude so a blown-up iterate still
/// yields a deterministic set.
pub fn supp_s(v: ArrayView1<f64>, s: usize) -> Result<IndexSet> {
    let n = v.len();
    if s < 1 || s > n {
        return Err(Error::invalid(format!("supp_s needs 1 <= s <= {n}, got {s}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Descending magnitude, ascending index on ties.
    let key = |i: usize| (v[i].abs(), i);
    order.select_nth_unstable_by(s - 1, |&a, &b| {
        let (ma, ia) = key(a);
        let (mb, ib) = key(b);
        mb.total_cmp(&ma).then(ia.cmp(&ib))
    });
    order.truncate(s);
    order.sort_unstable();
    Ok(IndexSet { indices: order })
}

/// Keeps `v` on T and zeroes it elsewhere.
pub fn project(v: ArrayView1<f64>, t: &IndexSet) -> Array1<f64> {
    let mut out = Array1::zeros(v.len());
    for &i in t.as_slice() {
        out[i] = v[i];
    }
    out
}

/// A restricted least-squares solution.
pub struct LsqSolution {
    /// Full-length solution, zero off the support.
    pub x: Array1<f64>,
    /// Set when the column block was (near-)rank-deficient and the damped
    /// fallback produced the solution.
    pub rank_deficient: bool,
}

/// Relative diagonal threshold below which the QR path is declared
/// rank-deficient and redone with damping.
const RANK_TOL: f64 = 1e-10;

/// Solves min_z ||A_T z - y|| over the columns of A indexed by T and scatters
/// the solution back to full length.
///
/// Well-conditioned blocks (the generic case) go through one QR factorization
/// of the extracted m x |T| block. Rank-deficient or underdetermined blocks
/// (|T| > m) fall back to normal equations damped by 1e-12 * ||A_T||_F^2,
/// flagged in the result.
pub fn lsq_on_support(
    a: &MeasurementMatrix,
    t: &IndexSet,
    y: ArrayView1<f64>,
) -> Result<LsqSolution> {
    let m = a.m();
    let k = t.len();
    if k == 0 {
        return Err(Error::invalid("lsq_on_support needs a nonempty support"));
    }
    if y.len() != m {
        return Err(Error::ShapeMismatch(format!("y has length {}, matrix has m={m}", y.len())));
    }
    let yv = y.as_slice().unwrap();
    let block = a.gather_columns(t.as_slice());

    let (z, rank_deficient) = if k <= m {
        let mut scratch = block.clone();
        let out = blas::lstsq_qr(&mut scratch, m, k, yv)?;
        if out.diag_ratio > RANK_TOL {
            (out.solution, false)
        } else {
            (damped_normal_solve(&block, m, k, yv)?, true)
        }
    } else {
        // Wide block: minimum-norm-style solution through the damped dual
        // Gram system (A_T A_T^T + lambda I) u = y, z = A_T^T u.
        let frob_sq: f64 = block.iter().map(|v| v * v).sum();
        let lambda = 1e-12 * frob_sq;
        let mut g = vec![0.0; m * m];
        blas::outer_gram(&block, m, k, &mut g);
        for i in 0..m {
            g[i * m + i] += lambda;
        }
        let mut u = yv.to_vec();
        blas::cholesky_solve(&mut g, m, &mut u)?;
        let mut z = vec![0.0; k];
        blas::gemv_t(&block, m, k, &u, &mut z);
        (z, true)
    };

    let mut x = Array1::zeros(a.n());
    for (&i, &v) in t.as_slice().iter().zip(&z) {
        x[i] = v;
    }
    Ok(LsqSolution { x, rank_deficient })
}

fn damped_normal_solve(block: &[f64], m: usize, k: usize, y: &[f64]) -> Result<Vec<f64>> {
    let frob_sq: f64 = block.iter().map(|v| v * v).sum();
    let lambda = 1e-12 * frob_sq;
    let mut g = vec![0.0; k * k];
    blas::gram(block, m, k, &mut g);
    for j in 0..k {
        g[j * k + j] += lambda;
    }
    let mut rhs = vec![0.0; k];
    blas::gemv_t(block, m, k, y, &mut rhs);
    blas::cholesky_solve(&mut g, k, &mut rhs)?;
    Ok(rhs)
}

/// Euclidean norm of y - A x.
pub fn residual_norm(a: &MeasurementMatrix, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let ax = a.apply(x);
    y.iter().zip(ax.iter()).map(|(yi, ai)| (yi - ai) * (yi - ai)).sum::<f64>().sqrt()
}
