//! Evaluation metrics for energy predictions: root mean squared error,
//! percentage RMSE (relative to the mean target), Gaussian prediction-interval
//! coverage, and a per-group report keyed by SoC, model, and source.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dataset::CycleRecord;
use crate::gpr::{GprError, TrainedModel};

/// Headline metrics of the original hardware measurement campaign whose raw
/// dataset is not published; they serve as reference points for reports, not
/// as reproducible targets.
pub const REFERENCE_RMSE_J: f64 = 0.075;
pub const REFERENCE_PCT_RMSE: f64 = 3.06;
pub const REFERENCE_LML: f64 = -144.9;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {preds} predictions vs {targets} targets")]
    LengthMismatch { preds: usize, targets: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("percentage RMSE needs a positive mean target, got {0}")]
    NonPositiveMean(f64),
    #[error("variances must be finite and non-negative, got {0}")]
    BadVariance(f64),
    #[error("coverage level must lie strictly between 0 and 1, got {0}")]
    BadLevel(f64),
    #[error("targets must be finite and positive, got {0}")]
    BadTarget(f64),
    #[error(transparent)]
    Prediction(#[from] GprError),
}

/// Root mean squared error between predictions and targets.
pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64, EvalError> {
    if preds.len() != targets.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let sq_sum: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok((sq_sum / preds.len() as f64).sqrt())
}

/// RMSE as a percentage of the mean target: `100 * rmse / mean(targets)`.
pub fn pct_rmse(rmse_j: f64, targets: &[f64]) -> Result<f64, EvalError> {
    if targets.is_empty() {
        return Err(EvalError::Empty);
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    if !(mean > 0.0) {
        return Err(EvalError::NonPositiveMean(mean));
    }
    Ok(100.0 * rmse_j / mean)
}

/// Two-sided standard-normal quantile for a central interval at `level`,
/// e.g. 1.959964 at 0.95.
pub fn z_value(level: f64) -> Result<f64, EvalError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::BadLevel(level));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 * (1.0 + level)))
}

/// Fraction of targets inside the central Gaussian interval
/// `mean +/- z(level) * sqrt(variance)`.
pub fn coverage(preds: &[(f64, f64)], targets: &[f64], level: f64) -> Result<f64, EvalError> {
    if preds.len() != targets.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let z = z_value(level)?;
    let mut hits = 0usize;
    for ((mean, var), y) in preds.iter().zip(targets) {
        if !var.is_finite() || *var < 0.0 {
            return Err(EvalError::BadVariance(*var));
        }
        if (y - mean).abs() <= z * var.sqrt() {
            hits += 1;
        }
    }
    Ok(hits as f64 / preds.len() as f64)
}

/// Metrics over one (soc, dnn_model, source) slice of the test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub soc: String,
    pub dnn_model: String,
    pub source: String,
    pub n: usize,
    pub rmse_j: f64,
    pub pct_rmse: f64,
    pub mean_target_j: f64,
    /// Fraction of the group's queries carrying a categorical level the
    /// model never saw in training.
    pub unseen_fraction: f64,
}

/// Aggregate evaluation of a trained model on labeled records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub rmse_j: f64,
    pub pct_rmse: f64,
    pub coverage95: f64,
    pub mean_target_j: f64,
    /// Training log marginal likelihood of the evaluated model.
    pub lml: f64,
    pub unseen_fraction: f64,
    pub groups: Vec<GroupReport>,
}

impl EvalReport {
    /// Flat `key = value` rendering with one trailing line per group.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "n = {}", self.n);
        let _ = writeln!(out, "rmse_j = {:.6}", self.rmse_j);
        let _ = writeln!(out, "pct_rmse = {:.4}", self.pct_rmse);
        let _ = writeln!(out, "coverage95 = {:.4}", self.coverage95);
        let _ = writeln!(out, "mean_target_j = {:.6}", self.mean_target_j);
        let _ = writeln!(out, "lml = {:.4}", self.lml);
        let _ = writeln!(out, "unseen_fraction = {:.4}", self.unseen_fraction);
        for g in &self.groups {
            let _ = writeln!(
                out,
                "group soc={} dnn_model={} source={} n={} rmse_j={:.6} pct_rmse={:.4} mean_target_j={:.6} unseen_fraction={:.4}",
                g.soc, g.dnn_model, g.source, g.n, g.rmse_j, g.pct_rmse, g.mean_target_j, g.unseen_fraction
            );
        }
        out
    }
}

/// Predicts every record and aggregates the metrics, overall and per
/// (soc, dnn_model, source) group. Targets must be finite and positive.
pub fn evaluate(model: &TrainedModel, records: &[CycleRecord]) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut means = Vec::with_capacity(records.len());
    let mut pairs = Vec::with_capacity(records.len());
    let mut unseen = Vec::with_capacity(records.len());
    let mut targets = Vec::with_capacity(records.len());
    for r in records {
        if !r.energy_j.is_finite() || r.energy_j <= 0.0 {
            return Err(EvalError::BadTarget(r.energy_j));
        }
        let p = model.predict_record(&r.features)?;
        means.push(p.mean_j);
        pairs.push((p.mean_j, p.variance_j2));
        unseen.push(p.unseen_level);
        targets.push(r.energy_j);
    }
    let n = records.len();
    let rmse_j = rmse(&means, &targets)?;
    let overall_pct = pct_rmse(rmse_j, &targets)?;
    let coverage95 = coverage(&pairs, &targets, 0.95)?;
    let mean_target_j = targets.iter().sum::<f64>() / n as f64;
    let unseen_fraction = unseen.iter().filter(|u| **u).count() as f64 / n as f64;

    let mut by_key: BTreeMap<(String, String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_key
            .entry((
                r.features.soc.clone(),
                r.features.dnn_model.clone(),
                r.features.source.clone(),
            ))
            .or_default()
            .push(i);
    }
    let mut groups = Vec::with_capacity(by_key.len());
    for ((soc, dnn_model, source), idx) in by_key {
        let g_means: Vec<f64> = idx.iter().map(|&i| means[i]).collect();
        let g_targets: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
        let g_rmse = rmse(&g_means, &g_targets)?;
        groups.push(GroupReport {
            soc,
            dnn_model,
            source,
            n: idx.len(),
            rmse_j: g_rmse,
            pct_rmse: pct_rmse(g_rmse, &g_targets)?,
            mean_target_j: g_targets.iter().sum::<f64>() / idx.len() as f64,
            unseen_fraction: idx.iter().filter(|&&i| unseen[i]).count() as f64
                / idx.len() as f64,
        });
    }

    Ok(EvalReport {
        n,
        rmse_j,
        pct_rmse: overall_pct,
        coverage95,
        mean_target_j,
        lml: model.lml,
        unseen_fraction,
        groups,
    })
}
