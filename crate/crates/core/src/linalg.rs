//! Thin dense linear algebra layer over the system BLAS/LAPACK.
//!
//! Symmetric matrices are stored column-major with the lower triangle
//! significant. All routines run single-threaded: the harness times whole
//! training runs, and OpenBLAS's thread pool is both slower and
//! nondeterministic to schedule inside this kind of measured loop.
//!
//! `factorize_lower` is a blocked right-looking Cholesky driver on top of
//! `dtrsm`/`dsyrk` with small `dpotrf` diagonal blocks; the vendored
//! OpenBLAS `dpotrf` runs far below its own BLAS-3 speed here, and the
//! blocked driver recovers it.

use std::sync::Once;

use crate::error::{Error, Result};

extern "C" {
    fn openblas_set_num_threads(n: i32);

    fn dpotrf_(uplo: *const u8, n: *const i32, a: *mut f64, lda: *const i32, info: *mut i32);
    fn dpotri_(uplo: *const u8, n: *const i32, a: *mut f64, lda: *const i32, info: *mut i32);
    fn dpotrs_(
        uplo: *const u8,
        n: *const i32,
        nrhs: *const i32,
        a: *const f64,
        lda: *const i32,
        b: *mut f64,
        ldb: *const i32,
        info: *mut i32,
    );
    fn dtrsm_(
        side: *const u8,
        uplo: *const u8,
        transa: *const u8,
        diag: *const u8,
        m: *const i32,
        n: *const i32,
        alpha: *const f64,
        a: *const f64,
        lda: *const i32,
        b: *mut f64,
        ldb: *const i32,
    );
    fn dsyrk_(
        uplo: *const u8,
        trans: *const u8,
        n: *const i32,
        k: *const i32,
        alpha: *const f64,
        a: *const f64,
        lda: *const i32,
        beta: *const f64,
        c: *mut f64,
        ldc: *const i32,
    );
    fn dgemv_(
        trans: *const u8,
        m: *const i32,
        n: *const i32,
        alpha: *const f64,
        a: *const f64,
        lda: *const i32,
        x: *const f64,
        incx: *const i32,
        beta: *const f64,
        y: *mut f64,
        incy: *const i32,
    );
}

static BLAS_INIT: Once = Once::new();

/// Pin the BLAS thread count. Called lazily by every entry point.
fn init_blas() {
    BLAS_INIT.call_once(|| unsafe {
        openblas_set_num_threads(1);
    });
}

/// Block size for the Cholesky driver. 128 keeps the diagonal `dpotrf`
/// panels in cache while the trailing update runs at `dsyrk` speed.
const CHOL_BLOCK: usize = 128;

/// Column-major square matrix, lower triangle significant where symmetric.
#[derive(Debug, Clone)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Entry (i, j) of the significant (lower) triangle, i >= j.
    #[inline]
    pub fn lower(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i >= j);
        self.data[j * self.n + i]
    }

    #[inline]
    pub fn set_lower(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i >= j);
        self.data[j * self.n + i] = v;
    }

    pub fn diag(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.data[i * self.n + i])
    }

    /// Mirror the lower triangle into the upper one.
    pub fn symmetrize(&mut self) {
        let n = self.n;
        for j in 0..n {
            for i in (j + 1)..n {
                self.data[i * n + j] = self.data[j * n + i];
            }
        }
    }
}

/// In-place lower Cholesky factorization. On failure the buffer contents are
/// unspecified; the error carries the 1-based pivot LAPACK reported.
pub fn factorize_lower(a: &mut SymMatrix) -> std::result::Result<(), usize> {
    init_blas();
    let n = a.n;
    if n == 0 {
        return Ok(());
    }
    let lda = n as i32;
    let one = 1.0f64;
    let mone = -1.0f64;
    let ap = a.data.as_mut_ptr();
    let mut k = 0usize;
    while k < n {
        let b = CHOL_BLOCK.min(n - k);
        let bi = b as i32;
        let mut info = 0i32;
        unsafe {
            dpotrf_(b"L".as_ptr(), &bi, ap.add(k * n + k), &lda, &mut info);
        }
        if info != 0 {
            return Err(k + info as usize);
        }
        let rest = n - k - b;
        if rest > 0 {
            let ri = rest as i32;
            unsafe {
                // A21 <- A21 * L11^-T
                dtrsm_(
                    b"R".as_ptr(),
                    b"L".as_ptr(),
                    b"T".as_ptr(),
                    b"N".as_ptr(),
                    &ri,
                    &bi,
                    &one,
                    ap.add(k * n + k),
                    &lda,
                    ap.add(k * n + k + b),
                    &lda,
                );
                // A22 <- A22 - A21 * A21^T
                dsyrk_(
                    b"L".as_ptr(),
                    b"N".as_ptr(),
                    &ri,
                    &bi,
                    &mone,
                    ap.add(k * n + k + b),
                    &lda,
                    &one,
                    ap.add((k + b) * n + k + b),
                    &lda,
                );
            }
        }
        k += b;
    }
    Ok(())
}

/// log|A| from a lower Cholesky factor: 2 * sum(log(diag(L))).
pub fn log_det_from_factor(l: &SymMatrix) -> f64 {
    2.0 * l.diag().map(f64::ln).sum::<f64>()
}

/// Solve A x = b given the lower factor of A, overwriting `b` with x.
pub fn solve_with_factor(l: &SymMatrix, b: &mut [f64]) -> Result<()> {
    init_blas();
    let n = l.n;
    if b.len() != n {
        return Err(Error::invalid(format!(
            "solve dimension mismatch: factor is {n}x{n}, rhs has {}",
            b.len()
        )));
    }
    if n == 0 {
        return Ok(());
    }
    let ni = n as i32;
    let nrhs = 1i32;
    let mut info = 0i32;
    unsafe {
        dpotrs_(
            b"L".as_ptr(),
            &ni,
            &nrhs,
            l.data.as_ptr(),
            &ni,
            b.as_mut_ptr(),
            &ni,
            &mut info,
        );
    }
    debug_assert_eq!(info, 0);
    Ok(())
}

/// Replace a lower Cholesky factor with the full inverse of the original
/// matrix (lower triangle significant).
pub fn invert_from_factor(l: &mut SymMatrix) {
    init_blas();
    let n = l.n;
    if n == 0 {
        return;
    }
    let ni = n as i32;
    let mut info = 0i32;
    unsafe {
        dpotri_(b"L".as_ptr(), &ni, l.data.as_mut_ptr(), &ni, &mut info);
    }
    debug_assert_eq!(info, 0);
}

/// B <- L^-1 B for a lower-triangular factor L and a column-major n x m
/// right-hand side.
pub fn tri_solve_lower(l: &SymMatrix, b: &mut [f64], m: usize) {
    init_blas();
    let n = l.n;
    debug_assert_eq!(b.len(), n * m);
    if n == 0 || m == 0 {
        return;
    }
    let ni = n as i32;
    let mi = m as i32;
    let one = 1.0f64;
    unsafe {
        dtrsm_(
            b"L".as_ptr(),
            b"L".as_ptr(),
            b"N".as_ptr(),
            b"N".as_ptr(),
            &ni,
            &mi,
            &one,
            l.data.as_ptr(),
            &ni,
            b.as_mut_ptr(),
            &ni,
        );
    }
}

/// y <- A^T x for a column-major n x m matrix A and length-n vector x,
/// writing the length-m result into `y`.
pub fn gemv_transpose(a: &[f64], n: usize, m: usize, x: &[f64], y: &mut [f64]) {
    init_blas();
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(x.len(), n);
    debug_assert_eq!(y.len(), m);
    if n == 0 || m == 0 {
        return;
    }
    let ni = n as i32;
    let mi = m as i32;
    let one = 1.0f64;
    let zero = 0.0f64;
    let inc = 1i32;
    unsafe {
        dgemv_(
            b"T".as_ptr(),
            &ni,
            &mi,
            &one,
            a.as_ptr(),
            &ni,
            x.as_ptr(),
            &inc,
            &zero,
            y.as_mut_ptr(),
            &inc,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd(n: usize, scale: f64) -> SymMatrix {
        let mut a = SymMatrix::zeros(n);
        for j in 0..n {
            for i in j..n {
                let d = (i as f64 - j as f64) / scale;
                a.set_lower(i, j, (-0.5 * d * d).exp());
            }
            let v = a.lower(j, j) + 1e-3;
            a.set_lower(j, j, v);
        }
        a
    }

    /// Unblocked reference Cholesky, kept independent of LAPACK.
    fn naive_cholesky(a: &SymMatrix) -> Option<Vec<Vec<f64>>> {
        let n = a.n();
        let mut l = vec![vec![0.0f64; n]; n];
        for j in 0..n {
            let mut d = a.lower(j, j);
            for k in 0..j {
                d -= l[j][k] * l[j][k];
            }
            if d <= 0.0 {
                return None;
            }
            l[j][j] = d.sqrt();
            for i in (j + 1)..n {
                let mut s = a.lower(i, j);
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                l[i][j] = s / l[j][j];
            }
        }
        Some(l)
    }

    #[test]
    fn blocked_factor_matches_naive() {
        for &n in &[1usize, 5, 64, 130, 257] {
            let a = spd(n, 7.0);
            let expect = naive_cholesky(&a).expect("spd");
            let mut got = a.clone();
            factorize_lower(&mut got).expect("factorize");
            for j in 0..n {
                for i in j..n {
                    assert_relative_eq!(got.lower(i, j), expect[i][j], max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn factorize_rejects_indefinite() {
        let mut a = SymMatrix::zeros(3);
        a.set_lower(0, 0, 1.0);
        a.set_lower(1, 1, -2.0);
        a.set_lower(2, 2, 1.0);
        assert!(factorize_lower(&mut a).is_err());
    }

    fn spd_shifted(n: usize, scale: f64, shift: f64) -> SymMatrix {
        let mut a = spd(n, scale);
        for j in 0..n {
            let v = a.lower(j, j) + shift;
            a.set_lower(j, j, v);
        }
        a
    }

    #[test]
    fn solve_and_invert_roundtrip() {
        let n = 40;
        let a = spd_shifted(n, 4.0, 0.1);
        let mut l = a.clone();
        factorize_lower(&mut l).unwrap();

        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut x = b.clone();
        solve_with_factor(&l, &mut x).unwrap();

        // A x should reproduce b.
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                let v = if i >= j { a.lower(i, j) } else { a.lower(j, i) };
                s += v * x[j];
            }
            assert_relative_eq!(s, b[i], max_relative = 1e-8, epsilon = 1e-10);
        }

        // Inverse times b should equal x.
        let mut inv = l.clone();
        invert_from_factor(&mut inv);
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                let v = if i >= j { inv.lower(i, j) } else { inv.lower(j, i) };
                s += v * b[j];
            }
            assert_relative_eq!(s, x[i], max_relative = 1e-8, epsilon = 1e-10);
        }
    }

    #[test]
    fn log_det_matches_naive() {
        let n = 12;
        let a = spd(n, 2.0);
        let mut l = a.clone();
        factorize_lower(&mut l).unwrap();
        let got = log_det_from_factor(&l);

        let naive = naive_cholesky(&a).unwrap();
        let expect = 2.0 * (0..n).map(|i| naive[i][i].ln()).sum::<f64>();
        assert_relative_eq!(got, expect, max_relative = 1e-12);
    }

    #[test]
    fn tri_solve_matches_forward_substitution() {
        let n = 30;
        let m = 7;
        let a = spd(n, 3.0);
        let mut l = a.clone();
        factorize_lower(&mut l).unwrap();

        let b: Vec<f64> = (0..n * m).map(|i| ((i % 13) as f64 - 6.0) * 0.1).collect();
        let mut got = b.clone();
        tri_solve_lower(&l, &mut got, m);

        for col in 0..m {
            let rhs = &b[col * n..(col + 1) * n];
            let mut x = vec![0.0f64; n];
            for i in 0..n {
                let mut s = rhs[i];
                for j in 0..i {
                    s -= l.lower(i, j) * x[j];
                }
                x[i] = s / l.lower(i, i);
            }
            for i in 0..n {
                assert_relative_eq!(got[col * n + i], x[i], max_relative = 1e-9, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gemv_transpose_matches_naive() {
        let n = 9;
        let m = 4;
        let a: Vec<f64> = (0..n * m).map(|i| (i as f64 * 0.21).cos()).collect();
        let x: Vec<f64> = (0..n).map(|i| i as f64 + 0.5).collect();
        let mut y = vec![0.0f64; m];
        gemv_transpose(&a, n, m, &x, &mut y);
        for col in 0..m {
            let expect: f64 = (0..n).map(|i| a[col * n + i] * x[i]).sum();
            assert_relative_eq!(y[col], expect, max_relative = 1e-12);
        }
    }
}
