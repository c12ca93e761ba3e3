//! Shared helpers for the integration suites: a deliberately naive
//! reference regressor built on a dense Gauss-Jordan inverse, used to
//! cross-check the production Cholesky path, plus small random-problem
//! generators.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use epam_core::gpr::Hyperparams;

/// Anisotropic squared-exponential covariance between two points, written
/// independently of the library implementation.
pub fn reference_kernel(h: &Hyperparams, a: &[f64], b: &[f64]) -> f64 {
    let mut q = 0.0;
    for ((&ai, &bi), &s) in a.iter().zip(b).zip(&h.ard_scales) {
        let r = (ai - bi) / s;
        q += r * r;
    }
    h.signal_var * (-0.5 * q).exp()
}

/// Dense matrix inverse by Gauss-Jordan elimination with partial pivoting.
/// Cubic and cache-hostile on purpose: it shares no code or algorithm with
/// the factorization under test.
pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut work: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            assert_eq!(row.len(), n, "matrix must be square");
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                work[i][col]
                    .abs()
                    .partial_cmp(&work[j][col].abs())
                    .expect("finite pivots")
            })
            .expect("non-empty column");
        assert!(work[pivot][col].abs() > 0.0, "singular matrix");
        work.swap(col, pivot);
        let p = work[col][col];
        for v in work[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = work[row][col];
            if f == 0.0 {
                continue;
            }
            for k in 0..2 * n {
                let sub = f * work[col][k];
                work[row][k] -= sub;
            }
        }
    }
    work.iter().map(|r| r[n..].to_vec()).collect()
}

/// Posterior mean and variance at `q` from the explicit inverse of the
/// noisy Gram matrix: `mean = k*^T K^-1 y`,
/// `var = max(k(q,q) - k*^T K^-1 k*, 0) + noise_var`.
pub fn reference_posterior(h: &Hyperparams, x: &Array2<f64>, y: &[f64], q: &[f64]) -> (f64, f64) {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).to_vec()).collect();
    let mut gram: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| reference_kernel(h, &rows[i], &rows[j]))
                .collect()
        })
        .collect();
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += h.noise_var;
    }
    let kinv = invert(&gram);
    let kstar: Vec<f64> = rows.iter().map(|r| reference_kernel(h, q, r)).collect();
    let kinv_y: Vec<f64> = kinv
        .iter()
        .map(|row| row.iter().zip(y).map(|(a, b)| a * b).sum())
        .collect();
    let mean: f64 = kstar.iter().zip(&kinv_y).map(|(a, b)| a * b).sum();
    let kinv_kstar: Vec<f64> = kinv
        .iter()
        .map(|row| row.iter().zip(&kstar).map(|(a, b)| a * b).sum())
        .collect();
    let quad: f64 = kstar.iter().zip(&kinv_kstar).map(|(a, b)| a * b).sum();
    let var = (reference_kernel(h, q, q) - quad).max(0.0) + h.noise_var;
    (mean, var)
}

/// A random dense regression problem: inputs uniform on `[-2, 2]^d`,
/// standard-normal targets, and log-uniform hyperparameters kept well away
/// from ill-conditioning.
pub fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Array2<f64>, Vec<f64>, Hyperparams) {
    let mut x = Array2::<f64>::zeros((n, d));
    for v in x.iter_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    let y: Vec<f64> = (0..n)
        .map(|_| {
            // Box-Muller keeps the helper free of distribution crates.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            (-2.0 * u1.ln()).sqrt() * u2.cos()
        })
        .collect();
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> f64 {
        (rng.gen_range(lo.ln()..hi.ln())).exp()
    };
    let h = Hyperparams {
        signal_var: log_uniform(rng, 0.5, 2.0),
        ard_scales: (0..d).map(|_| log_uniform(rng, 0.5, 3.0)).collect(),
        noise_var: log_uniform(rng, 1e-3, 0.3),
    };
    (x, y, h)
}
