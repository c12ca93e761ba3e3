//! Dense symmetric linear algebra used by the regression core.
//!
//! Everything here operates on row-major [`ndarray::Array2<f64>`] and is
//! written as contiguous-slice dot products so the hot loops vectorize. The
//! routines are deliberately sequential: results are bit-reproducible for a
//! given input on a given build.

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error(
        "cholesky factorization failed after {attempts} attempts \
         (last jitter {last_jitter:.3e}); matrix is not positive definite"
    )]
    NotPositiveDefinite { attempts: usize, last_jitter: f64 },
}

/// Lower Cholesky factor together with the diagonal jitter that was needed
/// to obtain it. `l * l^T == a + jitter * I` up to rounding.
#[derive(Debug, Clone)]
pub struct CholFactor {
    pub l: Array2<f64>,
    pub jitter: f64,
}

/// Dot product with four accumulators; breaks the FP dependency chain so the
/// compiler can vectorize. Summation order is fixed, so results are
/// reproducible run to run.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let (mut s0, mut s1, mut s2, mut s3) = (0.0_f64, 0.0, 0.0, 0.0);
    let mut k = 0;
    while k + 4 <= n {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
        k += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while k < n {
        s += a[k] * b[k];
        k += 1;
    }
    s
}

/// Row `i` of a standard-layout matrix as a plain slice.
#[inline]
fn row(m: &Array2<f64>, i: usize) -> &[f64] {
    let n = m.ncols();
    let data = m.as_slice().expect("matrix must be standard layout");
    &data[i * n..(i + 1) * n]
}

/// Plain lower Cholesky factorization. Returns `None` if a pivot is not
/// strictly positive (or not finite), i.e. the matrix is not numerically
/// positive definite.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let s = {
                let ri = &row(&l, i)[..j];
                let rj = &row(&l, j)[..j];
                a[[i, j]] - dot(ri, rj)
            };
            if i == j {
                if !(s.is_finite() && s > 0.0) {
                    return None;
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Cholesky with escalating diagonal jitter.
///
/// The factorization is first attempted without jitter; on failure the
/// diagonal is inflated by `jitter_unit`, then by ten times more per retry,
/// for at most `max_escalations` retries.
pub fn cholesky_with_jitter(
    a: &Array2<f64>,
    jitter_unit: f64,
    max_escalations: usize,
) -> Result<CholFactor, LinalgError> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(LinalgError::NotSquare {
            rows: n,
            cols: a.ncols(),
        });
    }
    if let Some(l) = cholesky(a) {
        return Ok(CholFactor { l, jitter: 0.0 });
    }
    let mut jitter = jitter_unit;
    let mut attempts = 1;
    for _ in 0..max_escalations {
        let mut aj = a.clone();
        for i in 0..n {
            aj[[i, i]] += jitter;
        }
        attempts += 1;
        if let Some(l) = cholesky(&aj) {
            return Ok(CholFactor { l, jitter });
        }
        jitter *= 10.0;
    }
    Err(LinalgError::NotPositiveDefinite {
        attempts,
        last_jitter: jitter / 10.0,
    })
}

/// Solves `L x = b` by forward substitution (`L` lower triangular).
pub fn solve_lower(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    let mut x = vec![0.0; n];
    for i in 0..n {
        let ri = row(l, i);
        let s = b[i] - dot(&ri[..i], &x[..i]);
        x[i] = s / ri[i];
    }
    x
}

/// Solves `L^T x = b` by back substitution (`L` lower triangular).
pub fn solve_lower_transpose(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        // Column i of L below the diagonal == row i of L^T right of it.
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves `(L L^T) x = b` given the lower factor.
pub fn solve_spd(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let z = solve_lower(l, b);
    solve_lower_transpose(l, &z)
}

/// `log det(L L^T) = 2 sum_i log l_ii`.
pub fn log_det_from_chol(l: &Array2<f64>) -> f64 {
    let n = l.nrows();
    let mut s = 0.0;
    for i in 0..n {
        s += l[[i, i]].ln();
    }
    2.0 * s
}

/// Full inverse of `L L^T` from its lower factor.
///
/// Computes `W = L^{-1}` column by column (each column stored contiguously),
/// then the symmetric product `W^T W` over suffix ranges. Cost is O(n^3 / 3)
/// for each phase.
pub fn spd_inverse_from_chol(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    // wt[i] holds column i of W = L^{-1}; entries before i are zero.
    let mut wt = vec![0.0_f64; n * n];
    for i in 0..n {
        let col = &mut wt[i * n..(i + 1) * n];
        col[i] = 1.0 / l[[i, i]];
        for k in i + 1..n {
            let rk = row(l, k);
            let s = dot(&rk[i..k], &col[i..k]);
            col[k] = -s / rk[k];
        }
    }
    let mut inv = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let ci = &wt[i * n..(i + 1) * n];
        for j in 0..=i {
            let cj = &wt[j * n..(j + 1) * n];
            // Columns i and j of W are zero above indices i and j.
            let v = dot(&ci[i..], &cj[i..]);
            inv[[i, j]] = v;
            inv[[j, i]] = v;
        }
    }
    inv
}
