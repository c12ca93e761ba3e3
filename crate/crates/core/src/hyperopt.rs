//! Quasi-Newton ascent for smooth, unconstrained objectives.
//!
//! This is a BFGS maximizer with a backtracking (Armijo) line search. It is
//! used to tune kernel hyperparameters in log space, but it knows nothing
//! about kernels: objectives are plain callbacks returning a value and its
//! gradient, or `None` where they are undefined.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("objective is undefined or non-finite at the initial point")]
    UndefinedAtInit,
    #[error("no initial points supplied")]
    NoInits,
    #[error("every restart failed at its initial point")]
    AllRestartsFailed,
}

/// Settings for a single ascent run and for the restart wrapper.
#[derive(Debug, Clone)]
pub struct OptimConfig {
    /// Iteration cap per restart.
    pub max_iters: usize,
    /// Convergence threshold on the max-norm of the gradient.
    pub grad_tol: f64,
    /// Number of restarts used by [`multi_restart`] helpers.
    pub restarts: usize,
    /// Seed for restart perturbations (and anything else the caller derives).
    pub seed: u64,
    /// Step shrink factor of the backtracking line search.
    pub ls_contraction: f64,
    /// Sufficient-increase constant (Armijo) of the line search.
    pub ls_sufficient: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            max_iters: 200,
            grad_tol: 1e-6,
            restarts: 3,
            seed: 7,
            ls_contraction: 0.5,
            ls_sufficient: 1e-4,
        }
    }
}

/// Outcome of one ascent (or of the best restart).
#[derive(Debug, Clone)]
pub struct OptimResult {
    pub best_params: Vec<f64>,
    pub best_value: f64,
    /// Objective values of the accepted iterates, starting with the initial
    /// point. Non-decreasing; the last entry equals `best_value`.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// False when the run stopped on the iteration cap or a failed line
    /// search rather than on `grad_tol`.
    pub converged: bool,
}

/// A maximization target: value and gradient at `theta`, or `None` where the
/// objective is undefined (the optimizer treats such points as uphill walls).
///
/// `value` exists so implementations can skip gradient work during line
/// search probes; the default just delegates to `eval`.
pub trait Objective {
    fn eval(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)>;

    fn value(&self, theta: &[f64]) -> Option<f64> {
        self.eval(theta).map(|(v, _)| v)
    }
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    fn eval(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        self(theta)
    }
}

fn finite(v: f64) -> bool {
    v.is_finite()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Maximizes `objective` from `init` with BFGS.
///
/// The inverse-Hessian estimate is kept for the negated problem and updated
/// only when the curvature condition holds; the first update is rescaled by
/// `s.y / y.y` which makes the run insensitive to constant rescaling of the
/// objective. A failed line search returns the best iterate so far with
/// `converged == false`.
pub fn maximize<O: Objective>(
    objective: &O,
    init: &[f64],
    config: &OptimConfig,
) -> Result<OptimResult, OptimError> {
    let d = init.len();
    let (mut f, mut g) = match objective.eval(init) {
        Some((v, grad)) if finite(v) && grad.len() == d && all_finite(&grad) => (v, grad),
        _ => return Err(OptimError::UndefinedAtInit),
    };
    let mut x = init.to_vec();
    let mut trace = vec![f];

    // Inverse Hessian approximation of -objective, row-major d*d.
    let mut h = identity(d);
    let mut scaled_h = false;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iters {
        if max_norm(&g) < config.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Ascent direction H * g; fall back to steepest ascent whenever the
        // estimate has lost positive definiteness along g.
        let mut dir = mat_vec(&h, &g, d);
        let mut slope = dot(&dir, &g);
        if !(slope > 0.0) || !all_finite(&dir) {
            h = identity(d);
            scaled_h = false;
            dir = g.clone();
            slope = dot(&g, &g);
            if slope == 0.0 {
                converged = true;
                break;
            }
        }

        // Backtracking line search on f(x + t*dir).
        let mut t = 1.0;
        let mut accepted: Option<(Vec<f64>, f64)> = None;
        while t > 1e-18 {
            let cand: Vec<f64> = x.iter().zip(dir.iter()).map(|(xi, di)| xi + t * di).collect();
            if let Some(fc) = objective.value(&cand) {
                if finite(fc) && fc >= f + config.ls_sufficient * t * slope {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            t *= config.ls_contraction;
        }
        let (x_new, f_new) = match accepted {
            Some(a) => a,
            None => break, // line search failed; keep the best iterate
        };
        let (_, g_new) = match objective.eval(&x_new) {
            Some((v, grad)) if finite(v) && grad.len() == d && all_finite(&grad) => (v, grad),
            _ => break,
        };

        // BFGS update in the minimization convention: y = -(g_new - g).
        let s: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(g_new.iter()).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy > 1e-12 * s.iter().map(|v| v * v).sum::<f64>().sqrt() * yy.sqrt() {
            if !scaled_h {
                let scale = sy / yy;
                for v in h.iter_mut() {
                    *v *= scale;
                }
                scaled_h = true;
            }
            bfgs_update(&mut h, &s, &y, d);
        }

        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
    }
    if !converged && max_norm(&g) < config.grad_tol {
        converged = true;
    }

    Ok(OptimResult {
        best_params: x,
        best_value: f,
        trace,
        iterations,
        converged,
    })
}

/// Runs [`maximize`] from every point in `inits` and keeps the best result
/// (ties broken by the earlier init). Restarts that fail at their initial
/// point are skipped; if all fail the error says so.
pub fn multi_restart<O: Objective>(
    objective: &O,
    inits: &[Vec<f64>],
    config: &OptimConfig,
) -> Result<OptimResult, OptimError> {
    if inits.is_empty() {
        return Err(OptimError::NoInits);
    }
    let mut best: Option<OptimResult> = None;
    for init in inits {
        let run = match maximize(objective, init, config) {
            Ok(r) => r,
            Err(OptimError::UndefinedAtInit) => continue,
            Err(e) => return Err(e),
        };
        let better = match &best {
            None => true,
            Some(b) => run.best_value > b.best_value,
        };
        if better {
            best = Some(run);
        }
    }
    best.ok_or(OptimError::AllRestartsFailed)
}

/// Standard restart initializations: the heuristic point itself plus
/// `restarts - 1` seeded Gaussian perturbations of scale 0.5 around it.
pub fn restart_inits(base: &[f64], restarts: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut inits = Vec::with_capacity(restarts.max(1));
    inits.push(base.to_vec());
    if restarts <= 1 {
        return inits;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    for _ in 1..restarts {
        let p: Vec<f64> = base.iter().map(|v| v + noise.sample(&mut rng)).collect();
        inits.push(p);
    }
    inits
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn mat_vec(m: &[f64], v: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..d {
        out[i] = dot(&m[i * d..(i + 1) * d], v);
    }
    out
}

/// H <- (I - r s y^T) H (I - r y s^T) + r s s^T with r = 1 / s.y.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], d: usize) {
    let rho = 1.0 / dot(s, y);
    let hy = mat_vec(h, y, d);
    let yhy = dot(y, &hy);
    // H' = H - r (s (Hy)^T + (Hy) s^T) + r^2 (y.Hy) s s^T + r s s^T
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    struct Closure<F>(F);
    impl<F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>> Objective for Closure<F> {
        fn eval(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
            (self.0)(theta)
        }
    }

    fn concave_quadratic(center: f64) -> impl Fn(&[f64]) -> Option<(f64, Vec<f64>)> {
        move |t: &[f64]| {
            let d = t[0] - center;
            Some((-d * d, vec![-2.0 * d]))
        }
    }

    #[test]
    fn converges_on_concave_quadratic() {
        let obj = Closure(concave_quadratic(3.0));
        let r = maximize(&obj, &[0.0], &OptimConfig::default()).unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.best_params[0], 3.0, epsilon = 1e-6);
        assert!(r.best_value > -1e-10);
    }

    #[test]
    fn trace_is_non_decreasing_and_ends_at_best() {
        // Correlated 2-d concave quadratic.
        let obj = Closure(|t: &[f64]| {
            let (x, y) = (t[0], t[1]);
            let f = -(2.0 * x * x + y * y + x * y - 4.0 * x - 2.0 * y);
            let g = vec![-(4.0 * x + y - 4.0), -(2.0 * y + x - 2.0)];
            Some((f, g))
        });
        let r = maximize(&obj, &[5.0, -7.0], &OptimConfig::default()).unwrap();
        assert!(r.converged);
        for w in r.trace.windows(2) {
            assert!(w[1] >= w[0], "trace must be non-decreasing: {:?}", r.trace);
        }
        assert_eq!(*r.trace.last().unwrap(), r.best_value);
    }

    #[test]
    fn rescaled_objective_finds_same_argmax() {
        for scale in [0.5, 2.0, 10.0] {
            let obj = Closure(move |t: &[f64]| {
                let d0 = t[0] - 1.5;
                let d1 = t[1] + 0.5;
                let f = scale * (-(d0 * d0) - 3.0 * d1 * d1);
                Some((f, vec![scale * -2.0 * d0, scale * -6.0 * d1]))
            });
            let r = maximize(&obj, &[4.0, 4.0], &OptimConfig::default()).unwrap();
            assert_abs_diff_eq!(r.best_params[0], 1.5, epsilon = 1e-5);
            assert_abs_diff_eq!(r.best_params[1], -0.5, epsilon = 1e-5);
        }
    }

    #[test]
    fn undefined_at_init_is_an_error() {
        let obj = Closure(|_: &[f64]| None);
        match maximize(&obj, &[0.0], &OptimConfig::default()) {
            Err(OptimError::UndefinedAtInit) => {}
            other => panic!("expected UndefinedAtInit, got {other:?}"),
        }
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        // Anisotropic bowl whose peak lies off the initial ascent ray, so a
        // single line search cannot zero the gradient.
        let obj = Closure(|t: &[f64]| {
            let d0 = t[0] - 1.5;
            let d1 = t[1] + 0.5;
            Some((-(d0 * d0) - 3.0 * d1 * d1, vec![-2.0 * d0, -6.0 * d1]))
        });
        let cfg = OptimConfig {
            max_iters: 1,
            ..OptimConfig::default()
        };
        let r = maximize(&obj, &[0.0, 0.0], &cfg).unwrap();
        assert!(!r.converged);
        assert!(r.best_value >= r.trace[0]);
    }

    #[test]
    fn multi_restart_picks_the_higher_basin() {
        // Smooth two-basin objective: softmax of -(t-1)^2 and -(t+1)^2 - 0.5.
        // The right basin peaks near 0, the left one near -0.5.
        let beta = 6.0;
        let obj = Closure(move |t: &[f64]| {
            let a = -(t[0] - 1.0) * (t[0] - 1.0);
            let b = -(t[0] + 1.0) * (t[0] + 1.0) - 0.5;
            let m = a.max(b);
            let (ea, eb) = (((a - m) * beta).exp(), ((b - m) * beta).exp());
            let f = m + (ea + eb).ln() / beta;
            let (da, db) = (-2.0 * (t[0] - 1.0), -2.0 * (t[0] + 1.0));
            let g = (ea * da + eb * db) / (ea + eb);
            Some((f, vec![g]))
        });
        let inits = vec![vec![-1.2], vec![0.8]];
        let r = multi_restart(&obj, &inits, &OptimConfig::default()).unwrap();
        assert!(
            (r.best_params[0] - 1.0).abs() < 0.2,
            "expected the basin near 1.0, got {}",
            r.best_params[0]
        );
        assert!(r.best_value > -0.2);
    }

    #[test]
    fn multi_restart_skips_bad_inits_and_fails_when_all_bad() {
        let obj = Closure(|t: &[f64]| {
            if t[0].abs() > 10.0 {
                None
            } else {
                let d = t[0] - 2.0;
                Some((-d * d, vec![-2.0 * d]))
            }
        });
        let inits = vec![vec![50.0], vec![0.0]];
        let r = multi_restart(&obj, &inits, &OptimConfig::default()).unwrap();
        assert_abs_diff_eq!(r.best_params[0], 2.0, epsilon = 1e-6);

        let all_bad = vec![vec![50.0], vec![-60.0]];
        match multi_restart(&obj, &all_bad, &OptimConfig::default()) {
            Err(OptimError::AllRestartsFailed) => {}
            other => panic!("expected AllRestartsFailed, got {other:?}"),
        }
    }

    #[test]
    fn restart_inits_are_deterministic_and_anchored() {
        let a = restart_inits(&[1.0, 2.0], 3, 42);
        let b = restart_inits(&[1.0, 2.0], 3, 42);
        assert_eq!(a, b);
        assert_eq!(a[0], vec![1.0, 2.0]);
        assert_eq!(a.len(), 3);
        assert_ne!(a[1], a[0]);
    }
}
