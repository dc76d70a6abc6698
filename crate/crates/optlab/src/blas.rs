//! Thin safe wrappers over the system BLAS/LAPACK (OpenBLAS).
//!
//! Dense data in this crate is row-major (`ndarray` default). The wrappers
//! below take row-major slices and translate to the column-major LAPACK
//! convention internally, so callers never deal with layout.

use crate::error::{Error, Result};
use std::os::raw::{c_char, c_int};

extern "C" {
    fn openblas_set_num_threads(n: c_int);
    fn cblas_dgemv(
        order: c_int,
        trans: c_int,
        m: c_int,
        n: c_int,
        alpha: f64,
        a: *const f64,
        lda: c_int,
        x: *const f64,
        incx: c_int,
        beta: f64,
        y: *mut f64,
        incy: c_int,
    );
    fn cblas_dgemm(
        order: c_int,
        trans_a: c_int,
        trans_b: c_int,
        m: c_int,
        n: c_int,
        k: c_int,
        alpha: f64,
        a: *const f64,
        lda: c_int,
        b: *const f64,
        ldb: c_int,
        beta: f64,
        c: *mut f64,
        ldc: c_int,
    );
    fn cblas_dsyrk(
        order: c_int,
        uplo: c_int,
        trans: c_int,
        n: c_int,
        k: c_int,
        alpha: f64,
        a: *const f64,
        lda: c_int,
        beta: f64,
        c: *mut f64,
        ldc: c_int,
    );
    fn dgels_(
        trans: *const c_char,
        m: *const c_int,
        n: *const c_int,
        nrhs: *const c_int,
        a: *mut f64,
        lda: *const c_int,
        b: *mut f64,
        ldb: *const c_int,
        work: *mut f64,
        lwork: *const c_int,
        info: *mut c_int,
    );
    fn dpotrf_(
        uplo: *const c_char,
        n: *const c_int,
        a: *mut f64,
        lda: *const c_int,
        info: *mut c_int,
    );
    fn dpotrs_(
        uplo: *const c_char,
        n: *const c_int,
        nrhs: *const c_int,
        a: *const f64,
        lda: *const c_int,
        b: *mut f64,
        ldb: *const c_int,
        info: *mut c_int,
    );
    fn dgeqrf_(
        m: *const c_int,
        n: *const c_int,
        a: *mut f64,
        lda: *const c_int,
        tau: *mut f64,
        work: *mut f64,
        lwork: *const c_int,
        info: *mut c_int,
    );
    fn dorgqr_(
        m: *const c_int,
        n: *const c_int,
        k: *const c_int,
        a: *mut f64,
        lda: *const c_int,
        tau: *const f64,
        work: *mut f64,
        lwork: *const c_int,
        info: *mut c_int,
    );
}

const ROW_MAJOR: c_int = 101;
const NO_TRANS: c_int = 111;
const TRANS: c_int = 112;

/// Caps the BLAS thread pool. The experiment drivers parallelize over
/// independent problems, so each BLAS call should stay single-threaded.
pub fn set_blas_threads(n: usize) {
    unsafe { openblas_set_num_threads(n.max(1) as c_int) }
}

/// y = A x for row-major `a` of shape (m, n).
pub fn gemv(a: &[f64], m: usize, n: usize, x: &[f64], y: &mut [f64]) {
    assert_eq!(a.len(), m * n);
    assert_eq!(x.len(), n);
    assert_eq!(y.len(), m);
    unsafe {
        cblas_dgemv(
            ROW_MAJOR,
            NO_TRANS,
            m as c_int,
            n as c_int,
            1.0,
            a.as_ptr(),
            n as c_int,
            x.as_ptr(),
            1,
            0.0,
            y.as_mut_ptr(),
            1,
        );
    }
}

/// y = A^T x for row-major `a` of shape (m, n).
pub fn gemv_t(a: &[f64], m: usize, n: usize, x: &[f64], y: &mut [f64]) {
    assert_eq!(a.len(), m * n);
    assert_eq!(x.len(), m);
    assert_eq!(y.len(), n);
    unsafe {
        cblas_dgemv(
            ROW_MAJOR,
            TRANS,
            m as c_int,
            n as c_int,
            1.0,
            a.as_ptr(),
            n as c_int,
            x.as_ptr(),
            1,
            0.0,
            y.as_mut_ptr(),
            1,
        );
    }
}

/// C = A B for row-major operands; `a` is (m, k), `b` is (k, n), `c` is (m, n).
pub fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    unsafe {
        cblas_dgemm(
            ROW_MAJOR,
            NO_TRANS,
            NO_TRANS,
            m as c_int,
            n as c_int,
            k as c_int,
            1.0,
            a.as_ptr(),
            k as c_int,
            b.as_ptr(),
            n as c_int,
            0.0,
            c.as_mut_ptr(),
            n as c_int,
        );
    }
}

const UPPER: c_int = 121;

fn mirror_upper_to_lower(g: &mut [f64], n: usize) {
    for i in 1..n {
        for j in 0..i {
            g[i * n + j] = g[j * n + i];
        }
    }
}

/// G = A^T A for row-major `a` of shape (m, k); `g` is (k, k).
pub fn gram(a: &[f64], m: usize, k: usize, g: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(g.len(), k * k);
    unsafe {
        cblas_dsyrk(
            ROW_MAJOR,
            UPPER,
            TRANS,
            k as c_int,
            m as c_int,
            1.0,
            a.as_ptr(),
            k as c_int,
            0.0,
            g.as_mut_ptr(),
            k as c_int,
        );
    }
    mirror_upper_to_lower(g, k);
}

/// G = A A^T for row-major `a` of shape (m, k); `g` is (m, m).
pub fn outer_gram(a: &[f64], m: usize, k: usize, g: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(g.len(), m * m);
    unsafe {
        cblas_dsyrk(
            ROW_MAJOR,
            UPPER,
            NO_TRANS,
            m as c_int,
            k as c_int,
            1.0,
            a.as_ptr(),
            k as c_int,
            0.0,
            g.as_mut_ptr(),
            m as c_int,
        );
    }
    mirror_upper_to_lower(g, m);
}

/// Outcome of a QR-based least-squares solve.
pub struct LstsqOutcome {
    /// Solution of length k.
    pub solution: Vec<f64>,
    /// min |diag| / max |diag| of the triangular factor; a tiny value means
    /// the block was (near-)rank-deficient and the solution is unreliable.
    pub diag_ratio: f64,
}

/// Solves min_z || B z - y ||_2 for a row-major block `b` of shape (m, k)
/// with m >= k, via LAPACK `dgels`. `b` is consumed as scratch.
///
/// A row-major (m, k) buffer is a column-major (k, m) matrix, so the call
/// uses `dgels` with `trans='T'`, which factors the block once (LQ) and never
/// forms Q explicitly.
pub fn lstsq_qr(b: &mut [f64], m: usize, k: usize, y: &[f64]) -> Result<LstsqOutcome> {
    assert!(m >= k && k > 0);
    assert_eq!(b.len(), m * k);
    assert_eq!(y.len(), m);
    let mut rhs = y.to_vec();
    let (ml, nl, nrhs) = (k as c_int, m as c_int, 1 as c_int);
    let lda = k as c_int;
    let ldb = m as c_int;
    let mut info: c_int = 0;

    // Workspace query, then solve.
    let mut wk_query = [0.0f64];
    let neg_one: c_int = -1;
    unsafe {
        dgels_(
            &(b'T' as c_char),
            &ml,
            &nl,
            &nrhs,
            b.as_mut_ptr(),
            &lda,
            rhs.as_mut_ptr(),
            &ldb,
            wk_query.as_mut_ptr(),
            &neg_one,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dgels(query)", info });
    }
    let lwork = wk_query[0] as usize;
    let mut work = vec![0.0f64; lwork.max(1)];
    unsafe {
        dgels_(
            &(b'T' as c_char),
            &ml,
            &nl,
            &nrhs,
            b.as_mut_ptr(),
            &lda,
            rhs.as_mut_ptr(),
            &ldb,
            work.as_mut_ptr(),
            &(lwork as c_int),
            &mut info,
        );
    }
    if info < 0 {
        return Err(Error::Lapack { routine: "dgels", info });
    }

    // Diagonal of the triangular factor now sits on the block's diagonal.
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for j in 0..k {
        let d = b[j * k + j].abs();
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    let diag_ratio = if info > 0 {
        0.0 // exact rank deficiency reported by LAPACK
    } else if dmax > 0.0 {
        dmin / dmax
    } else {
        0.0
    };
    rhs.truncate(k);
    Ok(LstsqOutcome { solution: rhs, diag_ratio })
}

/// Solves the symmetric positive-definite system G z = rhs in place via
/// Cholesky; `g` is (n, n) and is consumed as scratch.
pub fn cholesky_solve(g: &mut [f64], n: usize, rhs: &mut [f64]) -> Result<()> {
    assert_eq!(g.len(), n * n);
    assert_eq!(rhs.len(), n);
    let nn = n as c_int;
    let one: c_int = 1;
    let mut info: c_int = 0;
    unsafe {
        dpotrf_(&(b'L' as c_char), &nn, g.as_mut_ptr(), &nn, &mut info);
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dpotrf", info });
    }
    unsafe {
        dpotrs_(
            &(b'L' as c_char),
            &nn,
            &one,
            g.as_ptr(),
            &nn,
            rhs.as_mut_ptr(),
            &nn,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dpotrs", info });
    }
    Ok(())
}

/// Computes the thin-QR orthonormal factor Q (row-major, shape (m, n), m >= n)
/// of a row-major matrix `a`.
pub fn thin_qr_q(a: &[f64], m: usize, n: usize) -> Result<Vec<f64>> {
    assert!(m >= n);
    assert_eq!(a.len(), m * n);
    // Transpose into column-major for LAPACK.
    let mut cm = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            cm[j * m + i] = a[i * n + j];
        }
    }
    let (ml, nl) = (m as c_int, n as c_int);
    let mut tau = vec![0.0f64; n];
    let mut info: c_int = 0;
    let neg_one: c_int = -1;
    let mut wk_query = [0.0f64];
    unsafe {
        dgeqrf_(
            &ml,
            &nl,
            cm.as_mut_ptr(),
            &ml,
            tau.as_mut_ptr(),
            wk_query.as_mut_ptr(),
            &neg_one,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dgeqrf(query)", info });
    }
    let lwork = (wk_query[0] as usize).max(1);
    let mut work = vec![0.0f64; lwork];
    unsafe {
        dgeqrf_(
            &ml,
            &nl,
            cm.as_mut_ptr(),
            &ml,
            tau.as_mut_ptr(),
            work.as_mut_ptr(),
            &(lwork as c_int),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dgeqrf", info });
    }
    unsafe {
        dorgqr_(
            &ml,
            &nl,
            &nl,
            cm.as_mut_ptr(),
            &ml,
            tau.as_ptr(),
            work.as_mut_ptr(),
            &(lwork as c_int),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dorgqr", info });
    }
    // Back to row-major.
    let mut q = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            q[i * n + j] = cm[j * m + i];
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemv_matches_manual() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let x = [1.0, 0.5, -1.0];
        let mut y = [0.0; 2];
        gemv(&a, 2, 3, &x, &mut y);
        assert_eq!(y, [-1.0, 0.5]);
        let xt = [2.0, -1.0];
        let mut z = [0.0; 3];
        gemv_t(&a, 2, 3, &xt, &mut z);
        assert_eq!(z, [-2.0, -1.0, 0.0]);
    }

    #[test]
    fn lstsq_identity_block() {
        // B = I_3 restricted to 2 columns, y = (5, 6, 7).
        let mut b = vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]; // rows of 3x2
        let out = lstsq_qr(&mut b, 3, 2, &[5.0, 6.0, 7.0]).unwrap();
        assert!((out.solution[0] - 5.0).abs() < 1e-12);
        assert!((out.solution[1] - 7.0).abs() < 1e-12);
        assert!(out.diag_ratio > 0.5);
    }

    #[test]
    fn lstsq_overdetermined_orthogonality() {
        // Small fixed overdetermined system; residual must be orthogonal to
        // the block columns.
        let m = 6;
        let k = 3;
        let mut b: Vec<f64> = (0..m * k)
            .map(|i| ((i * 37 + 11) % 17) as f64 / 17.0 - 0.4)
            .collect();
        let block = b.clone();
        let y: Vec<f64> = (0..m).map(|i| (i as f64 * 0.3).sin()).collect();
        let out = lstsq_qr(&mut b, m, k, &y).unwrap();
        let mut ax = vec![0.0; m];
        gemv(&block, m, k, &out.solution, &mut ax);
        let r: Vec<f64> = y.iter().zip(&ax).map(|(a, b)| a - b).collect();
        let mut btr = vec![0.0; k];
        gemv_t(&block, m, k, &r, &mut btr);
        for v in btr {
            assert!(v.abs() < 1e-12, "residual not orthogonal: {v}");
        }
    }

    #[test]
    fn cholesky_solves_spd() {
        // G = [[4, 1], [1, 3]], rhs = (1, 2) -> z = (1/11, 7/11).
        let mut g = vec![4.0, 1.0, 1.0, 3.0];
        let mut rhs = vec![1.0, 2.0];
        cholesky_solve(&mut g, 2, &mut rhs).unwrap();
        assert!((rhs[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((rhs[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn thin_qr_is_orthonormal_and_spans() {
        let m = 8;
        let n = 3;
        // Columns mix three incommensurate frequencies: full rank.
        let a: Vec<f64> = (0..m * n)
            .map(|i| {
                let (row, col) = (i / n, i % n);
                ((row * (col + 1)) as f64 * 0.7 + col as f64).sin() + 0.1 * row as f64
            })
            .collect();
        let q = thin_qr_q(&a, m, n).unwrap();
        // Q^T Q = I
        for j1 in 0..n {
            for j2 in 0..n {
                let dot: f64 = (0..m).map(|i| q[i * n + j1] * q[i * n + j2]).sum();
                let expect = if j1 == j2 { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
        // Columns of A are reproduced by Q Q^T A.
        let mut qta = vec![0.0; n * n];
        gemm(
            &{
                // Q^T is (n, m): transpose q
                let mut qt = vec![0.0; n * m];
                for i in 0..m {
                    for j in 0..n {
                        qt[j * m + i] = q[i * n + j];
                    }
                }
                qt
            },
            &a,
            &mut qta,
            n,
            m,
            n,
        );
        let mut qqta = vec![0.0; m * n];
        gemm(&q, &qta, &mut qqta, m, n, n);
        let worst = a.iter().zip(&qqta).map(|(u, v)| (u - v).abs()).fold(0.0f64, f64::max);
        assert!(worst < 1e-10, "reconstruction error {worst}; a={a:?} qqta={qqta:?}");
    }
}
