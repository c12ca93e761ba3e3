//! Model fitting and prediction.

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernel::{self, Hyperparams};
use super::GprError;
use crate::dataset::{ColumnEncoder, CycleFeatures, EncodedDesign, EncodingMeta};
use crate::hyperopt::{self, Objective, OptimConfig};
use crate::linalg;

/// Fit settings: the optimizer budget plus the exact-inference size cap.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub optim: OptimConfig,
    /// Above this many rows a seeded uniform subset of this size is used;
    /// exact inference is cubic in n and has to stay bounded.
    pub max_exact: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            optim: OptimConfig::default(),
            max_exact: 4000,
        }
    }
}

/// A trained regressor: hyperparameters, training subset, cached posterior
/// pieces, and the encoding needed to map records into model space.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub hyperparams: Hyperparams,
    /// Training inputs in encoded space, n x d.
    pub x_train: Array2<f64>,
    /// Standardized training targets.
    pub y_train: Vec<f64>,
    /// `(K + sn2 I + jitter I)^{-1} y`.
    pub alpha: Vec<f64>,
    /// Lower Cholesky factor of `K + sn2 I + jitter I`.
    pub chol: Array2<f64>,
    /// Diagonal jitter that was needed for the factorization (usually 0).
    pub jitter: f64,
    /// Log marginal likelihood at the stored hyperparameters.
    pub lml: f64,
    /// False when the hyperparameter search stopped on its iteration cap.
    pub converged: bool,
    pub encoding: EncodingMeta,
}

/// Posterior prediction in target units (joules).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean_j: f64,
    pub variance_j2: f64,
    /// True when the query carried a categorical level the encoding had
    /// never seen; the prediction falls back to the uninformed block.
    pub unseen_level: bool,
}

impl Prediction {
    pub fn std_j(&self) -> f64 {
        self.variance_j2.sqrt()
    }
}

/// Objective wrapper: log marginal likelihood as a function of the log
/// hyperparameter vector. Out-of-range or non-factorizable points report
/// `None` so the optimizer backs off.
struct LmlObjective<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
}

/// Log-coordinate box; exp overflows and kernel degeneracies live outside.
const LOG_BOUND: f64 = 30.0;

impl Objective for LmlObjective<'_> {
    fn eval(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        if theta.iter().any(|t| !t.is_finite() || t.abs() > LOG_BOUND) {
            return None;
        }
        let h = Hyperparams::from_log(theta);
        match kernel::log_marginal_likelihood(&h, self.x, self.y) {
            Ok((v, g)) if v.is_finite() => Some((v, g)),
            _ => None,
        }
    }

    fn value(&self, theta: &[f64]) -> Option<f64> {
        if theta.iter().any(|t| !t.is_finite() || t.abs() > LOG_BOUND) {
            return None;
        }
        let h = Hyperparams::from_log(theta);
        if h.validate().is_err() {
            return None;
        }
        let (_, chol) = kernel::factorize_gram(&h, self.x).ok()?;
        let alpha = linalg::solve_spd(&chol.l, self.y);
        let quad: f64 = self.y.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
        let n = self.x.nrows() as f64;
        let v = -0.5 * quad
            - 0.5 * linalg::log_det_from_chol(&chol.l)
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        v.is_finite().then_some(v)
    }
}

/// Initial length scale for one-hot indicator columns: a level mismatch
/// flips two indicators, so the squared distance between levels starts at
/// `2 / ONE_HOT_INIT_SCALE^2 = 1`, one observation unit, matching the unit
/// scale of standardized numeric columns. The per-column standard deviation
/// used for numeric columns would start indicators at 0.3-0.5, where
/// differing levels are already decorrelated; the likelihood is nearly flat
/// in these scales once levels separate, so a search started there never
/// recovers and the model generalizes poorly to levels unseen in training.
const ONE_HOT_INIT_SCALE: f64 = std::f64::consts::SQRT_2;

/// Heuristic starting point: unit signal variance, noise variance 0.1,
/// per-column standard deviations of the training inputs as numeric length
/// scales, and `ONE_HOT_INIT_SCALE` for indicator columns. Degenerate
/// (constant) columns fall back to a unit scale; their distance contribution
/// is zero either way.
fn heuristic_init(x: &Array2<f64>, encoding: &EncodingMeta) -> Hyperparams {
    let n = x.nrows() as f64;
    let d = x.ncols();
    let mut one_hot = vec![false; d];
    if encoding.width() == d {
        let mut at = 0;
        for c in &encoding.columns {
            match c {
                ColumnEncoder::Numeric { .. } => at += 1,
                ColumnEncoder::DroppedConstant { .. } => {}
                ColumnEncoder::Categorical { levels, .. } => {
                    for _ in levels {
                        one_hot[at] = true;
                        at += 1;
                    }
                }
            }
        }
    }
    let mut scales = Vec::with_capacity(d);
    for m in 0..d {
        if one_hot[m] {
            scales.push(ONE_HOT_INIT_SCALE);
            continue;
        }
        let col = x.column(m);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        scales.push(if std > 1e-9 { std } else { 1.0 });
    }
    Hyperparams {
        signal_var: 1.0,
        ard_scales: scales,
        noise_var: 0.1,
    }
}

/// Builds the posterior cache for fixed hyperparameters (no search).
pub(crate) fn model_from_hyperparams(
    x: Array2<f64>,
    y: Vec<f64>,
    h: Hyperparams,
    converged: bool,
    encoding: EncodingMeta,
) -> Result<TrainedModel, GprError> {
    h.validate()?;
    if x.nrows() != y.len() {
        return Err(GprError::DimMismatch(format!(
            "{} rows vs {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(GprError::EmptyTrainingSet);
    }
    if h.dim() != x.ncols() {
        return Err(GprError::DimMismatch(format!(
            "{} ARD scales for {} columns",
            h.dim(),
            x.ncols()
        )));
    }
    let (value, _) = kernel::log_marginal_likelihood(&h, &x, &y)?;
    let (_, chol) = kernel::factorize_gram(&h, &x)?;
    let alpha = linalg::solve_spd(&chol.l, &y);
    Ok(TrainedModel {
        hyperparams: h,
        x_train: x,
        y_train: y,
        alpha,
        chol: chol.l,
        jitter: chol.jitter,
        lml: value,
        converged,
        encoding,
    })
}

/// Convenience constructor used by simulation studies and tests.
pub fn model_with_fixed_hyperparams(
    x: Array2<f64>,
    y: Vec<f64>,
    h: Hyperparams,
) -> Result<TrainedModel, GprError> {
    let d = x.ncols();
    model_from_hyperparams(x, y, h, true, EncodingMeta::identity(d))
}

/// Fits hyperparameters on a raw matrix and standardized targets.
///
/// `encoding` is carried into the returned model so record-level prediction
/// keeps working; pass [`EncodingMeta::identity`] when working in raw model
/// space.
pub fn fit_matrix(
    x: Array2<f64>,
    y: Vec<f64>,
    config: &FitConfig,
    encoding: EncodingMeta,
) -> Result<TrainedModel, GprError> {
    if x.nrows() == 0 {
        return Err(GprError::EmptyTrainingSet);
    }
    if x.nrows() != y.len() {
        return Err(GprError::DimMismatch(format!(
            "{} rows vs {} targets",
            x.nrows(),
            y.len()
        )));
    }
    let n = x.nrows();
    let spread = {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
    };
    if spread == 0.0 {
        return Err(GprError::DegenerateTargets);
    }

    // Subset-of-data cap: exact GP cost is cubic, so large training sets are
    // thinned to a seeded uniform subset.
    let (x, y) = if n > config.max_exact {
        let mut rng = ChaCha8Rng::seed_from_u64(config.optim.seed);
        let idx = rand::seq::index::sample(&mut rng, n, config.max_exact);
        let mut idx: Vec<usize> = idx.into_iter().collect();
        idx.sort_unstable();
        let mut xs = Array2::<f64>::zeros((idx.len(), x.ncols()));
        let mut ys = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            xs.row_mut(r).assign(&x.row(i));
            ys.push(y[i]);
        }
        (xs, ys)
    } else {
        (x, y)
    };

    let objective = LmlObjective { x: &x, y: &y };
    let init = heuristic_init(&x, &encoding).to_log();
    let inits = hyperopt::restart_inits(&init, config.optim.restarts, config.optim.seed);
    let result = hyperopt::multi_restart(&objective, &inits, &config.optim)?;
    let h = Hyperparams::from_log(&result.best_params);
    model_from_hyperparams(x, y, h, result.converged, encoding)
}

/// Fits on the selected rows of an encoded design.
pub fn fit(
    design: &EncodedDesign,
    rows: &[usize],
    config: &FitConfig,
) -> Result<TrainedModel, GprError> {
    if rows.is_empty() {
        return Err(GprError::EmptyTrainingSet);
    }
    let d = design.matrix.ncols();
    let mut x = Array2::<f64>::zeros((rows.len(), d));
    let mut y = Vec::with_capacity(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        if i >= design.matrix.nrows() {
            return Err(GprError::DimMismatch(format!(
                "row index {i} out of range for {} rows",
                design.matrix.nrows()
            )));
        }
        x.row_mut(r).assign(&design.matrix.row(i));
        y.push(design.targets_std[i]);
    }
    fit_matrix(x, y, config, design.meta.clone())
}

impl TrainedModel {
    /// Posterior mean and variance at an encoded (standardized-space) point.
    ///
    /// The variance is the full predictive variance: prior signal variance
    /// minus the explained part, plus the observation noise. Tiny negative
    /// explained residues from rounding are clamped at zero.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let n = self.x_train.nrows();
        let h = &self.hyperparams;
        let mut kstar = Vec::with_capacity(n);
        let data = self.x_train.as_slice().expect("standard layout");
        let d = self.x_train.ncols();
        for i in 0..n {
            kstar.push(kernel::kernel_eval(h, x, &data[i * d..(i + 1) * d]));
        }
        let mean: f64 = kstar
            .iter()
            .zip(self.alpha.iter())
            .map(|(a, b)| a * b)
            .sum();
        let v = linalg::solve_lower(&self.chol, &kstar);
        let explained: f64 = v.iter().map(|t| t * t).sum();
        let var = (h.signal_var - explained).max(0.0) + h.noise_var;
        (mean, var)
    }

    /// Predicts one record, de-standardizing into joules.
    pub fn predict_record(&self, features: &CycleFeatures) -> Result<Prediction, GprError> {
        let (x, unseen_level) = self.encoding.apply(features)?;
        let (mean_std, var_std) = self.posterior(&x);
        Ok(Prediction {
            mean_j: self.encoding.target_from_std(mean_std),
            variance_j2: var_std * self.encoding.target_std * self.encoding.target_std,
            unseen_level,
        })
    }

    /// Predicts many records. Identical arithmetic to calling
    /// [`TrainedModel::predict_record`] per row.
    pub fn predict_batch(&self, features: &[CycleFeatures]) -> Result<Vec<Prediction>, GprError> {
        features.iter().map(|f| self.predict_record(f)).collect()
    }
}
