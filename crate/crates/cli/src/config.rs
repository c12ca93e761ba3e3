//! The optional TOML run configuration shared by the subcommands.
//!
//! Three sections, all optional: `[fit]` for training budgets, `[ingest]`
//! for capture processing, and `[synth]` for generator trend overrides.
//! Unknown keys are rejected; missing keys fall back to defaults, and every
//! command echoes the effective values it ran with.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use epam_core::gpr::FitConfig;
use epam_core::hyperopt::OptimConfig;
use epam_core::synthetic::TrendConfig;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default)]
    pub synth: SynthSection,
}

impl RunConfig {
    /// Loads the file when a path is given, otherwise returns pure defaults.
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }
}

/// `[fit]`: optimizer budget and the exact-inference size cap.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub max_exact: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        let optim = OptimConfig::default();
        let fit = FitConfig::default();
        FitSection {
            max_iters: optim.max_iters,
            grad_tol: optim.grad_tol,
            restarts: optim.restarts,
            seed: optim.seed,
            max_exact: fit.max_exact,
        }
    }
}

impl FitSection {
    pub fn to_fit_config(&self) -> FitConfig {
        FitConfig {
            optim: OptimConfig {
                max_iters: self.max_iters,
                grad_tol: self.grad_tol,
                restarts: self.restarts,
                seed: self.seed,
                ..OptimConfig::default()
            },
            max_exact: self.max_exact,
        }
    }

    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "fit.max_iters = {}", self.max_iters);
        let _ = writeln!(s, "fit.grad_tol = {}", self.grad_tol);
        let _ = writeln!(s, "fit.restarts = {}", self.restarts);
        let _ = writeln!(s, "fit.seed = {}", self.seed);
        let _ = writeln!(s, "fit.max_exact = {}", self.max_exact);
        s
    }
}

/// `[ingest]`: quiet window and marker recognition. Command-line flags take
/// precedence over these values.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    /// `[start_s, end_s]` of the application-quiet span used for the base
    /// power estimate. No default: it describes the capture at hand.
    pub quiet_window: Option<[f64; 2]>,
    /// Power above base that counts as the alignment marker.
    pub marker_threshold_mw: f64,
    /// Minimum time the marker must stay above the cut.
    pub marker_min_ms: f64,
    /// `power-mw` or `current-voltage`.
    pub power_form: Option<String>,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            quiet_window: None,
            marker_threshold_mw: 100.0,
            marker_min_ms: 50.0,
            power_form: None,
        }
    }
}

/// `[synth]`: per-field overrides of the generator's trend factors.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub quant_energy_factor: Option<f64>,
    pub quant_latency_factor: Option<f64>,
    pub gpu_energy_factor: Option<f64>,
    pub gpu_latency_factor: Option<f64>,
    pub cpu4_latency_factor: Option<f64>,
    pub cpu4_float_energy_factor: Option<f64>,
    pub cpu4_quant_energy_factor: Option<f64>,
    pub nnapi_accel_energy_factor: Option<f64>,
    pub nnapi_accel_latency_factor: Option<f64>,
    pub nnapi_plain_energy_factor: Option<f64>,
    pub nnapi_plain_latency_factor: Option<f64>,
    pub nnapi_penalty_energy_factor: Option<f64>,
    pub nnapi_penalty_latency_factor: Option<f64>,
    pub nnapi_speech_energy_factor: Option<f64>,
    pub nnapi_speech_latency_factor: Option<f64>,
    pub layer_exponent: Option<f64>,
    pub memory_intercept_mb: Option<f64>,
    pub memory_slope_mb_per_mb: Option<f64>,
    pub noise_cv: Option<f64>,
}

impl SynthSection {
    /// Applies the overrides to the default trends and validates the result.
    pub fn to_trends(&self) -> Result<TrendConfig, CliError> {
        let mut t = TrendConfig::default();
        macro_rules! take {
            ($($field:ident),* $(,)?) => {
                $(if let Some(v) = self.$field { t.$field = v; })*
            };
        }
        take!(
            quant_energy_factor,
            quant_latency_factor,
            gpu_energy_factor,
            gpu_latency_factor,
            cpu4_latency_factor,
            cpu4_float_energy_factor,
            cpu4_quant_energy_factor,
            nnapi_accel_energy_factor,
            nnapi_accel_latency_factor,
            nnapi_plain_energy_factor,
            nnapi_plain_latency_factor,
            nnapi_penalty_energy_factor,
            nnapi_penalty_latency_factor,
            nnapi_speech_energy_factor,
            nnapi_speech_latency_factor,
            layer_exponent,
            memory_intercept_mb,
            memory_slope_mb_per_mb,
            noise_cv,
        );
        t.validate().map_err(CliError::usage_from)?;
        Ok(t)
    }

    pub fn echo(trends: &TrendConfig) -> String {
        let mut s = String::new();
        let t = trends;
        let _ = writeln!(s, "synth.quant_energy_factor = {}", t.quant_energy_factor);
        let _ = writeln!(s, "synth.quant_latency_factor = {}", t.quant_latency_factor);
        let _ = writeln!(s, "synth.gpu_energy_factor = {}", t.gpu_energy_factor);
        let _ = writeln!(s, "synth.gpu_latency_factor = {}", t.gpu_latency_factor);
        let _ = writeln!(s, "synth.cpu4_latency_factor = {}", t.cpu4_latency_factor);
        let _ = writeln!(s, "synth.cpu4_float_energy_factor = {}", t.cpu4_float_energy_factor);
        let _ = writeln!(s, "synth.cpu4_quant_energy_factor = {}", t.cpu4_quant_energy_factor);
        let _ = writeln!(s, "synth.nnapi_accel_energy_factor = {}", t.nnapi_accel_energy_factor);
        let _ = writeln!(s, "synth.nnapi_accel_latency_factor = {}", t.nnapi_accel_latency_factor);
        let _ = writeln!(s, "synth.nnapi_plain_energy_factor = {}", t.nnapi_plain_energy_factor);
        let _ = writeln!(s, "synth.nnapi_plain_latency_factor = {}", t.nnapi_plain_latency_factor);
        let _ = writeln!(s, "synth.nnapi_penalty_energy_factor = {}", t.nnapi_penalty_energy_factor);
        let _ = writeln!(s, "synth.nnapi_penalty_latency_factor = {}", t.nnapi_penalty_latency_factor);
        let _ = writeln!(s, "synth.nnapi_speech_energy_factor = {}", t.nnapi_speech_energy_factor);
        let _ = writeln!(s, "synth.nnapi_speech_latency_factor = {}", t.nnapi_speech_latency_factor);
        let _ = writeln!(s, "synth.layer_exponent = {}", t.layer_exponent);
        let _ = writeln!(s, "synth.memory_intercept_mb = {}", t.memory_intercept_mb);
        let _ = writeln!(s, "synth.memory_slope_mb_per_mb = {}", t.memory_slope_mb_per_mb);
        let _ = writeln!(s, "synth.noise_cv = {}", t.noise_cv);
        s
    }
}
