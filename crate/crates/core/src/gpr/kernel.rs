//! Kernel evaluation and the log marginal likelihood with its gradient.

use ndarray::Array2;

use super::GprError;
use crate::linalg;

/// Kernel hyperparameters. `ard_scales` are the per-dimension length scales
/// `s_m` (the kernel divides squared distances by `s_m^2`); `signal_var` and
/// `noise_var` are variances.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub signal_var: f64,
    pub ard_scales: Vec<f64>,
    pub noise_var: f64,
}

impl Hyperparams {
    pub fn dim(&self) -> usize {
        self.ard_scales.len()
    }

    pub fn validate(&self) -> Result<(), GprError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.signal_var) || !ok(self.noise_var) || !self.ard_scales.iter().all(|s| ok(*s)) {
            return Err(GprError::BadHyperparams(format!("{self:?}")));
        }
        Ok(())
    }

    /// Log-space coordinates used by the optimizer:
    /// `[ln sf2, ln s_1 .. ln s_d, ln sn2]`.
    pub fn to_log(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim() + 2);
        v.push(self.signal_var.ln());
        v.extend(self.ard_scales.iter().map(|s| s.ln()));
        v.push(self.noise_var.ln());
        v
    }

    pub fn from_log(theta: &[f64]) -> Self {
        debug_assert!(theta.len() >= 3);
        let d = theta.len() - 2;
        Hyperparams {
            signal_var: theta[0].exp(),
            ard_scales: theta[1..=d].iter().map(|t| t.exp()).collect(),
            noise_var: theta[d + 1].exp(),
        }
    }
}

/// Scaled squared distance `sum_m ((a_m - b_m) / s_m)^2`.
#[inline]
fn scaled_sq_dist(a: &[f64], b: &[f64], inv_scales: &[f64]) -> f64 {
    let mut s = 0.0;
    for m in 0..a.len() {
        let d = (a[m] - b[m]) * inv_scales[m];
        s += d * d;
    }
    s
}

/// Kernel value for a single pair of points.
pub fn kernel_eval(h: &Hyperparams, a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), h.dim());
    debug_assert_eq!(b.len(), h.dim());
    let inv: Vec<f64> = h.ard_scales.iter().map(|s| 1.0 / s).collect();
    h.signal_var * (-0.5 * scaled_sq_dist(a, b, &inv)).exp()
}

fn row(m: &Array2<f64>, i: usize) -> &[f64] {
    let d = m.ncols();
    let data = m.as_slice().expect("standard layout");
    &data[i * d..(i + 1) * d]
}

/// Gram matrix of `x` (no noise term). Symmetric, diagonal exactly
/// `signal_var`.
pub fn kernel_matrix(h: &Hyperparams, x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let inv: Vec<f64> = h.ard_scales.iter().map(|s| 1.0 / s).collect();
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = h.signal_var;
        let xi = row(x, i);
        for j in 0..i {
            let v = h.signal_var * (-0.5 * scaled_sq_dist(xi, row(x, j), &inv)).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Jitter start for factorizing `K + sn2 I`, relative to the signal variance.
pub(crate) const JITTER_UNIT_REL: f64 = 1e-10;
/// Maximum number of tenfold jitter escalations before giving up.
pub(crate) const JITTER_MAX_ESCALATIONS: usize = 6;

pub(crate) fn factorize_gram(
    h: &Hyperparams,
    x: &Array2<f64>,
) -> Result<(Array2<f64>, linalg::CholFactor), GprError> {
    let n = x.nrows();
    let k = kernel_matrix(h, x);
    let mut ky = k.clone();
    for i in 0..n {
        ky[[i, i]] += h.noise_var;
    }
    let chol = linalg::cholesky_with_jitter(
        &ky,
        JITTER_UNIT_REL * h.signal_var,
        JITTER_MAX_ESCALATIONS,
    )?;
    Ok((k, chol))
}

/// Log marginal likelihood of `y` under the GP prior at `h`, together with
/// its gradient in the log coordinates of [`Hyperparams::to_log`].
///
/// Value: `-1/2 y^T a - 1/2 log det(K + sn2 I) - n/2 log 2pi` with
/// `a = (K + sn2 I)^{-1} y`, computed through a (jittered, if necessary)
/// Cholesky factor. Gradient per coordinate `t`:
/// `1/2 tr((a a^T - (K + sn2 I)^{-1}) dK/dt)`.
pub fn log_marginal_likelihood(
    h: &Hyperparams,
    x: &Array2<f64>,
    y: &[f64],
) -> Result<(f64, Vec<f64>), GprError> {
    h.validate()?;
    let n = x.nrows();
    let d = x.ncols();
    if h.dim() != d {
        return Err(GprError::DimMismatch(format!(
            "{} ARD scales for {} columns",
            h.dim(),
            d
        )));
    }
    if y.len() != n {
        return Err(GprError::DimMismatch(format!(
            "{} targets for {} rows",
            y.len(),
            n
        )));
    }
    if n == 0 {
        return Err(GprError::EmptyTrainingSet);
    }

    let (k, chol) = factorize_gram(h, x)?;
    let alpha = linalg::solve_spd(&chol.l, y);
    let quad: f64 = y.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
    let logdet = linalg::log_det_from_chol(&chol.l);
    let value = -0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // Gradient: with A = alpha alpha^T - Ky^{-1} and M = A .* K,
    //   d/d(ln sf2)  = 1/2 sum_ij M_ij
    //   d/d(ln s_m)  = 1/2 sum_ij M_ij (x_im - x_jm)^2 / s_m^2
    //   d/d(ln sn2)  = 1/2 sn2 tr(A)
    let kinv = linalg::spd_inverse_from_chol(&chol.l);
    let inv_sq: Vec<f64> = h.ard_scales.iter().map(|s| 1.0 / (s * s)).collect();
    let mut g_sf = 0.0;
    let mut tr_a = 0.0;
    let mut g_scales = vec![0.0_f64; d];
    for i in 0..n {
        let xi = row(x, i);
        let ki = {
            let data = k.as_slice().expect("standard layout");
            &data[i * n..(i + 1) * n]
        };
        let kinv_i = {
            let data = kinv.as_slice().expect("standard layout");
            &data[i * n..(i + 1) * n]
        };
        let a_ii = alpha[i] * alpha[i] - kinv_i[i];
        tr_a += a_ii;
        g_sf += a_ii * ki[i];
        // Off-diagonal pairs counted once, doubled by symmetry.
        for j in 0..i {
            let m_ij = 2.0 * (alpha[i] * alpha[j] - kinv_i[j]) * ki[j];
            g_sf += m_ij;
            let xj = row(x, j);
            for m in 0..d {
                let diff = xi[m] - xj[m];
                g_scales[m] += m_ij * diff * diff * inv_sq[m];
            }
        }
    }
    let mut grad = Vec::with_capacity(d + 2);
    grad.push(0.5 * g_sf);
    grad.extend(g_scales.iter().map(|g| 0.5 * g));
    grad.push(0.5 * h.noise_var * tr_a);
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_hyper(d: usize) -> Hyperparams {
        Hyperparams {
            signal_var: 1.0,
            ard_scales: vec![1.0; d],
            noise_var: 0.1,
        }
    }

    #[test]
    fn kernel_at_zero_distance_is_signal_variance() {
        let h = Hyperparams {
            signal_var: 2.5,
            ard_scales: vec![0.7, 1.3],
            noise_var: 0.1,
        };
        let x = [0.4, -1.2];
        assert_eq!(kernel_eval(&h, &x, &x), 2.5);
    }

    #[test]
    fn kernel_matches_closed_forms() {
        // Unit parameters, squared distance 2 => exp(-1).
        let h = unit_hyper(2);
        let v = kernel_eval(&h, &[1.0, 0.0], &[0.0, 1.0]);
        assert_abs_diff_eq!(v, (-1.0_f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.36787944117144233, epsilon = 1e-15);

        // sf2 = 2, diff (1, 0), scales (2, 1) => 2 exp(-1/8).
        let h = Hyperparams {
            signal_var: 2.0,
            ard_scales: vec![2.0, 1.0],
            noise_var: 0.1,
        };
        let v = kernel_eval(&h, &[1.0, 5.0], &[0.0, 5.0]);
        assert_abs_diff_eq!(v, 2.0 * (-0.125_f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 1.764993805169191, epsilon = 1e-12);
    }

    #[test]
    fn gram_matrix_matches_entrywise_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = Array2::<f64>::zeros((6, 3));
        for v in x.iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let h = Hyperparams {
            signal_var: 1.7,
            ard_scales: vec![0.6, 1.1, 2.3],
            noise_var: 0.05,
        };
        let k = kernel_matrix(&h, &x);
        for i in 0..6 {
            for j in 0..6 {
                let want = kernel_eval(&h, row(&x, i), row(&x, j));
                assert_abs_diff_eq!(k[[i, j]], want, epsilon = 1e-14);
                assert_eq!(k[[i, j]], k[[j, i]]);
            }
        }
        for i in 0..6 {
            assert_eq!(k[[i, i]], 1.7);
        }
    }

    #[test]
    fn kernel_is_translation_invariant() {
        let h = Hyperparams {
            signal_var: 1.3,
            ard_scales: vec![0.9, 1.4],
            noise_var: 0.1,
        };
        let (a, b) = ([0.3, -0.7], [1.1, 0.2]);
        let shift = [5.0, -3.0];
        let a2 = [a[0] + shift[0], a[1] + shift[1]];
        let b2 = [b[0] + shift[0], b[1] + shift[1]];
        assert_abs_diff_eq!(
            kernel_eval(&h, &a, &b),
            kernel_eval(&h, &a2, &b2),
            epsilon = 1e-15
        );
    }

    #[test]
    fn lml_matches_scalar_closed_forms() {
        // n = 1, K + sn2 I = [1]:
        //   y = 0 => -1/2 ln 2pi = -0.91894
        //   y = 1 => -1/2 - 1/2 ln 2pi = -1.41894
        let h = Hyperparams {
            signal_var: 0.5,
            ard_scales: vec![1.0],
            noise_var: 0.5,
        };
        let x = array![[0.0]];
        let (v0, _) = log_marginal_likelihood(&h, &x, &[0.0]).unwrap();
        assert_abs_diff_eq!(v0, -0.9189385332046727, epsilon = 1e-12);
        let (v1, _) = log_marginal_likelihood(&h, &x, &[1.0]).unwrap();
        assert_abs_diff_eq!(v1, -1.4189385332046727, epsilon = 1e-12);
    }

    #[test]
    fn lml_matches_two_point_identity_case() {
        // Two points far apart with sf2 + sn2 = 1: Gram ~ I, y = 0
        // => -n/2 ln 2pi = -1.83788.
        let h = Hyperparams {
            signal_var: 0.5,
            ard_scales: vec![0.01],
            noise_var: 0.5,
        };
        let x = array![[0.0], [100.0]];
        let (v, _) = log_marginal_likelihood(&h, &x, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v, -1.8378770664093453, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let d = 3;
        let mut x = Array2::<f64>::zeros((n, d));
        for v in x.iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let h = Hyperparams {
            signal_var: 1.4,
            ard_scales: vec![0.8, 1.2, 2.0],
            noise_var: 0.2,
        };
        let theta = h.to_log();
        let (_, grad) = log_marginal_likelihood(&h, &x, &y).unwrap();
        let step = 1e-5;
        for t in 0..theta.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[t] += step;
            tm[t] -= step;
            let (vp, _) =
                log_marginal_likelihood(&Hyperparams::from_log(&tp), &x, &y).unwrap();
            let (vm, _) =
                log_marginal_likelihood(&Hyperparams::from_log(&tm), &x, &y).unwrap();
            let fd = (vp - vm) / (2.0 * step);
            let denom = fd.abs().max(grad[t].abs()).max(1e-6);
            assert!(
                ((grad[t] - fd) / denom).abs() < 1e-5,
                "coordinate {t}: analytic {} vs fd {}",
                grad[t],
                fd
            );
        }
    }

    #[test]
    fn log_round_trip_preserves_hyperparams() {
        let h = Hyperparams {
            signal_var: 2.2,
            ard_scales: vec![0.4, 3.0, 1.1],
            noise_var: 0.07,
        };
        let back = Hyperparams::from_log(&h.to_log());
        assert_abs_diff_eq!(back.signal_var, h.signal_var, epsilon = 1e-15);
        assert_abs_diff_eq!(back.noise_var, h.noise_var, epsilon = 1e-15);
        for (a, b) in back.ard_scales.iter().zip(h.ard_scales.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn invalid_hyperparams_are_rejected() {
        let bad = Hyperparams {
            signal_var: -1.0,
            ard_scales: vec![1.0],
            noise_var: 0.1,
        };
        assert!(bad.validate().is_err());
        let bad = Hyperparams {
            signal_var: 1.0,
            ard_scales: vec![0.0],
            noise_var: 0.1,
        };
        assert!(bad.validate().is_err());
    }
}
