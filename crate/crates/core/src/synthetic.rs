//! Seeded generators for desk-scale experiments: a built-in device and DNN
//! model catalog, cycle-record sampling shaped by measured efficiency trends,
//! draws from the regression prior, and power-trace emission with analytic
//! ground-truth energy.
//!
//! Record energies follow a multiplicative factor model
//! `base * layer_modulation * device_scale * source_factor * quant_factor`
//! with mean-one lognormal noise, so every trend factor is a definition the
//! generator reproduces exactly at zero noise.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataset::{CycleFeatures, CycleRecord};
use crate::gpr::{GprError, Hyperparams};
use crate::trace::CycleEnergy;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("empty {0} catalog")]
    EmptyCatalog(&'static str),
    #[error("cannot sample zero records")]
    ZeroRecords,
    #[error("invalid trend configuration: {0}")]
    BadTrend(String),
    #[error("invalid trace plan: {0}")]
    BadPlan(String),
}

/// One handset profile from the built-in catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub name: String,
    pub soc: String,
    /// Maximum CPU clock.
    pub cpu_freq_ghz: f64,
    pub cores: u32,
    pub ram_gb: f64,
    /// Quiescent power with no application active.
    pub base_power_mw: f64,
    /// Multiplicative energy/latency scale relative to the fastest device.
    pub energy_scale: f64,
    /// Whether the SoC's dedicated accelerator makes nnapi delegation pay off.
    pub nnapi_accelerator: bool,
}

/// One DNN model profile from the built-in catalog. Quantized variants share
/// the float variant's base energy and latency; the quantization factors of
/// [`TrendConfig`] are applied on top.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelProfile {
    pub name: String,
    /// "vision", "nlp", or "speech".
    pub app_type: String,
    pub layers: u32,
    pub model_size_mb: f64,
    pub quantized: bool,
    pub gpu_capable: bool,
    /// Models whose nnapi delegation falls back badly and costs energy.
    pub nnapi_penalized: bool,
    /// Energy of one cycle on the reference device, single-thread CPU, for a
    /// model with the reference layer count of its application type.
    pub base_energy_j: f64,
    pub base_processing_ms: f64,
    pub base_inference_ms: f64,
}

/// The four-handset catalog. Device-1 is the calibration anchor
/// (`energy_scale` 1.0).
pub fn default_devices() -> Vec<DeviceProfile> {
    let mk = |name: &str,
              soc: &str,
              cpu_freq_ghz: f64,
              ram_gb: f64,
              base_power_mw: f64,
              energy_scale: f64,
              nnapi_accelerator: bool| DeviceProfile {
        name: name.to_string(),
        soc: soc.to_string(),
        cpu_freq_ghz,
        cores: 8,
        ram_gb,
        base_power_mw,
        energy_scale,
        nnapi_accelerator,
    };
    vec![
        mk("device-1", "Kirin 9000", 3.13, 8.0, 180.0, 1.00, true),
        mk("device-2", "Snapdragon 865", 2.84, 8.0, 200.0, 1.04, true),
        mk("device-3", "Helio P70", 2.0, 4.0, 160.0, 1.26, false),
        mk("device-4", "Snapdragon 665", 2.0, 4.0, 170.0, 1.26, false),
    ]
}

/// The seven-model catalog: five vision classifiers (two quantized), one NLP
/// question-answering model, and one speech recognizer.
pub fn default_models() -> Vec<ModelProfile> {
    #[allow(clippy::too_many_arguments)]
    fn mk(
        name: &str,
        app_type: &str,
        layers: u32,
        model_size_mb: f64,
        quantized: bool,
        gpu_capable: bool,
        nnapi_penalized: bool,
        base_energy_j: f64,
        base_processing_ms: f64,
        base_inference_ms: f64,
    ) -> ModelProfile {
        ModelProfile {
            name: name.to_string(),
            app_type: app_type.to_string(),
            layers,
            model_size_mb,
            quantized,
            gpu_capable,
            nnapi_penalized,
            base_energy_j,
            base_processing_ms,
            base_inference_ms,
        }
    }
    vec![
        mk("MobileNetV1 Float", "vision", 31, 16.9, false, true, false, 2.2, 24.0, 40.0),
        mk("MobileNetV1 Quantized", "vision", 31, 4.3, true, false, false, 2.2, 24.0, 40.0),
        mk("EfficientNet-lite Float", "vision", 62, 18.6, false, true, false, 2.35, 24.0, 60.0),
        mk("EfficientNet-lite Quantized", "vision", 65, 5.4, true, false, true, 2.35, 24.0, 60.0),
        mk("NASNet Mobile", "vision", 663, 21.4, false, true, true, 2.4, 24.0, 210.0),
        mk("Mobile BERT QA", "nlp", 2541, 100.7, false, false, false, 5.7, 180.0, 330.0),
        mk("TensorFlow ASR", "speech", 8, 3.8, false, false, false, 0.16185, 30.0, 85.0),
    ]
}

/// Multiplicative trend factors of the generator. Each factor is relative to
/// single-thread CPU on the same device and model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendConfig {
    /// Quantized vs float energy (same model family).
    pub quant_energy_factor: f64,
    /// Quantized vs float inference latency.
    pub quant_latency_factor: f64,
    pub gpu_energy_factor: f64,
    pub gpu_latency_factor: f64,
    pub cpu4_latency_factor: f64,
    /// Four-thread CPU energy for float models.
    pub cpu4_float_energy_factor: f64,
    /// Four-thread CPU energy for quantized models (slightly above one:
    /// coordination overhead eats the latency gain).
    pub cpu4_quant_energy_factor: f64,
    /// nnapi on devices with a strong accelerator.
    pub nnapi_accel_energy_factor: f64,
    pub nnapi_accel_latency_factor: f64,
    /// nnapi on devices without one.
    pub nnapi_plain_energy_factor: f64,
    pub nnapi_plain_latency_factor: f64,
    /// nnapi for models whose delegation falls back badly (factor above one).
    pub nnapi_penalty_energy_factor: f64,
    pub nnapi_penalty_latency_factor: f64,
    /// nnapi for speech models, where delegation pays off most.
    pub nnapi_speech_energy_factor: f64,
    pub nnapi_speech_latency_factor: f64,
    /// Exponent of the layer-count modulation (layers / reference)^exponent.
    pub layer_exponent: f64,
    /// Inference memory grows near-linearly with model size.
    pub memory_intercept_mb: f64,
    pub memory_slope_mb_per_mb: f64,
    /// Coefficient of variation of the mean-one lognormal noise on energy,
    /// latency, and memory.
    pub noise_cv: f64,
}

impl Default for TrendConfig {
    fn default() -> Self {
        TrendConfig {
            quant_energy_factor: 0.75,
            quant_latency_factor: 0.87,
            gpu_energy_factor: 0.73,
            gpu_latency_factor: 0.92,
            cpu4_latency_factor: 0.96,
            cpu4_float_energy_factor: 0.97,
            cpu4_quant_energy_factor: 1.03,
            nnapi_accel_energy_factor: 0.80,
            nnapi_accel_latency_factor: 0.85,
            nnapi_plain_energy_factor: 0.95,
            nnapi_plain_latency_factor: 0.97,
            nnapi_penalty_energy_factor: 1.40,
            nnapi_penalty_latency_factor: 1.50,
            nnapi_speech_energy_factor: 0.70,
            nnapi_speech_latency_factor: 0.60,
            layer_exponent: 0.15,
            memory_intercept_mb: 60.0,
            memory_slope_mb_per_mb: 2.2,
            noise_cv: 0.05,
        }
    }
}

impl TrendConfig {
    /// Every factor must lie in (0, 2); noise_cv must be finite and >= 0.
    pub fn validate(&self) -> Result<(), SynthError> {
        let factors = [
            ("quant_energy_factor", self.quant_energy_factor),
            ("quant_latency_factor", self.quant_latency_factor),
            ("gpu_energy_factor", self.gpu_energy_factor),
            ("gpu_latency_factor", self.gpu_latency_factor),
            ("cpu4_latency_factor", self.cpu4_latency_factor),
            ("cpu4_float_energy_factor", self.cpu4_float_energy_factor),
            ("cpu4_quant_energy_factor", self.cpu4_quant_energy_factor),
            ("nnapi_accel_energy_factor", self.nnapi_accel_energy_factor),
            ("nnapi_accel_latency_factor", self.nnapi_accel_latency_factor),
            ("nnapi_plain_energy_factor", self.nnapi_plain_energy_factor),
            ("nnapi_plain_latency_factor", self.nnapi_plain_latency_factor),
            ("nnapi_penalty_energy_factor", self.nnapi_penalty_energy_factor),
            ("nnapi_penalty_latency_factor", self.nnapi_penalty_latency_factor),
            ("nnapi_speech_energy_factor", self.nnapi_speech_energy_factor),
            ("nnapi_speech_latency_factor", self.nnapi_speech_latency_factor),
        ];
        for (name, v) in factors {
            if !v.is_finite() || v <= 0.0 || v >= 2.0 {
                return Err(SynthError::BadTrend(format!(
                    "{name} must lie in (0, 2), got {v}"
                )));
            }
        }
        if !self.layer_exponent.is_finite() || !(0.0..=1.0).contains(&self.layer_exponent) {
            return Err(SynthError::BadTrend(format!(
                "layer_exponent must lie in [0, 1], got {}",
                self.layer_exponent
            )));
        }
        if !self.memory_intercept_mb.is_finite()
            || self.memory_intercept_mb < 0.0
            || !self.memory_slope_mb_per_mb.is_finite()
            || self.memory_slope_mb_per_mb < 0.0
        {
            return Err(SynthError::BadTrend(
                "memory intercept and slope must be finite and non-negative".to_string(),
            ));
        }
        if !self.noise_cv.is_finite() || self.noise_cv < 0.0 {
            return Err(SynthError::BadTrend(format!(
                "noise_cv must be finite and non-negative, got {}",
                self.noise_cv
            )));
        }
        Ok(())
    }
}

/// Reference layer count per application type; a model with the reference
/// count has layer modulation exactly 1.
fn app_layer_ref(app_type: &str) -> Option<f64> {
    match app_type {
        "vision" => Some(31.0),
        "nlp" => Some(2541.0),
        "speech" => Some(8.0),
        _ => None,
    }
}

fn layer_modulation(model: &ModelProfile, trends: &TrendConfig) -> f64 {
    match app_layer_ref(&model.app_type) {
        Some(reference) => (model.layers as f64 / reference).powf(trends.layer_exponent),
        None => 1.0,
    }
}

fn source_energy_factor(
    device: &DeviceProfile,
    model: &ModelProfile,
    source: &str,
    threads: u32,
    t: &TrendConfig,
) -> f64 {
    match source {
        "cpu" if threads >= 4 => {
            if model.quantized {
                t.cpu4_quant_energy_factor
            } else {
                t.cpu4_float_energy_factor
            }
        }
        "gpu" => t.gpu_energy_factor,
        "nnapi" => {
            if model.app_type == "speech" {
                t.nnapi_speech_energy_factor
            } else if model.nnapi_penalized {
                t.nnapi_penalty_energy_factor
            } else if device.nnapi_accelerator {
                t.nnapi_accel_energy_factor
            } else {
                t.nnapi_plain_energy_factor
            }
        }
        _ => 1.0,
    }
}

fn source_latency_factor(
    device: &DeviceProfile,
    model: &ModelProfile,
    source: &str,
    threads: u32,
    t: &TrendConfig,
) -> f64 {
    match source {
        "cpu" if threads >= 4 => t.cpu4_latency_factor,
        "gpu" => t.gpu_latency_factor,
        "nnapi" => {
            if model.app_type == "speech" {
                t.nnapi_speech_latency_factor
            } else if model.nnapi_penalized {
                t.nnapi_penalty_latency_factor
            } else if device.nnapi_accelerator {
                t.nnapi_accel_latency_factor
            } else {
                t.nnapi_plain_latency_factor
            }
        }
        _ => 1.0,
    }
}

/// Noise-free cycle energy in joules for a device/model/source combination.
pub fn noiseless_energy_j(
    device: &DeviceProfile,
    model: &ModelProfile,
    source: &str,
    threads: u32,
    trends: &TrendConfig,
) -> f64 {
    let quant = if model.quantized {
        trends.quant_energy_factor
    } else {
        1.0
    };
    model.base_energy_j
        * layer_modulation(model, trends)
        * device.energy_scale
        * source_energy_factor(device, model, source, threads, trends)
        * quant
}

/// Noise-free data-processing latency (CPU-bound, source-independent).
pub fn noiseless_processing_ms(
    device: &DeviceProfile,
    model: &ModelProfile,
    _trends: &TrendConfig,
) -> f64 {
    model.base_processing_ms * device.energy_scale
}

/// Noise-free inference latency for a device/model/source combination.
pub fn noiseless_inference_ms(
    device: &DeviceProfile,
    model: &ModelProfile,
    source: &str,
    threads: u32,
    trends: &TrendConfig,
) -> f64 {
    let quant = if model.quantized {
        trends.quant_latency_factor
    } else {
        1.0
    };
    model.base_inference_ms
        * layer_modulation(model, trends)
        * device.energy_scale
        * source_latency_factor(device, model, source, threads, trends)
        * quant
}

/// Noise-free inference memory, near-linear in model size.
pub fn noiseless_memory_mb(model: &ModelProfile, trends: &TrendConfig) -> f64 {
    trends.memory_intercept_mb + trends.memory_slope_mb_per_mb * model.model_size_mb
}

/// Processing sources a model can run on: single- and four-thread CPU, GPU
/// when supported, and nnapi.
pub fn allowed_sources(model: &ModelProfile) -> Vec<(&'static str, u32)> {
    let mut v = vec![("cpu", 1), ("cpu", 4)];
    if model.gpu_capable {
        v.push(("gpu", 1));
    }
    v.push(("nnapi", 1));
    v
}

/// A sampled cycle record together with its hidden noise-free energy.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecord {
    pub record: CycleRecord,
    pub noiseless_energy_j: f64,
}

/// Fraction of a cycle's energy spent in the data-processing segment; the
/// rest goes to inference. Shared by the trace planner and the noise model.
pub const PROCESSING_ENERGY_SHARE: f64 = 0.3;
/// Fraction of a cycle's energy spent in the inference segment.
pub const INFERENCE_ENERGY_SHARE: f64 = 0.7;

/// Per-record noise factors for energy, processing latency, inference
/// latency, and memory. Each factor is a mean-one lognormal with coefficient
/// of variation `cv`. Energy is power integrated over time, so a cycle that
/// runs long costs proportionally more: the latency factors share a
/// log-Gaussian component with the energy factor, weighted by each segment's
/// energy share. Memory jitter is independent.
fn noise_factors(rng: &mut ChaCha8Rng, cv: f64) -> (f64, f64, f64, f64) {
    let sigma = (1.0 + cv * cv).ln().sqrt();
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let eps: f64 = normal.sample(rng);
    let eta_p: f64 = normal.sample(rng);
    let eta_i: f64 = normal.sample(rng);
    let eta_m: f64 = normal.sample(rng);
    let factor = |z: f64| (sigma * z - 0.5 * sigma * sigma).exp();
    let mix = |rho: f64, eta: f64| rho * eps + (1.0 - rho * rho).sqrt() * eta;
    (
        factor(eps),
        factor(mix(PROCESSING_ENERGY_SHARE, eta_p)),
        factor(mix(INFERENCE_ENERGY_SHARE, eta_i)),
        factor(eta_m),
    )
}

/// Draws `n` cycle records. Per record the draw order is fixed: device,
/// model, processing source, then (when `noise_cv > 0`) the four noise
/// draws behind [`noise_factors`]. Identical seeds yield identical records.
pub fn sample_records(
    n: usize,
    devices: &[DeviceProfile],
    models: &[ModelProfile],
    trends: &TrendConfig,
    seed: u64,
) -> Result<Vec<SyntheticRecord>, SynthError> {
    if n == 0 {
        return Err(SynthError::ZeroRecords);
    }
    if devices.is_empty() {
        return Err(SynthError::EmptyCatalog("device"));
    }
    if models.is_empty() {
        return Err(SynthError::EmptyCatalog("model"));
    }
    trends.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let device = &devices[rng.gen_range(0..devices.len())];
        let model = &models[rng.gen_range(0..models.len())];
        let options = allowed_sources(model);
        let (source, threads) = options[rng.gen_range(0..options.len())];

        let energy0 = noiseless_energy_j(device, model, source, threads, trends);
        let processing0 = noiseless_processing_ms(device, model, trends);
        let inference0 = noiseless_inference_ms(device, model, source, threads, trends);
        let memory0 = noiseless_memory_mb(model, trends);
        let (fe, fp, fi, fm) = if trends.noise_cv > 0.0 {
            noise_factors(&mut rng, trends.noise_cv)
        } else {
            (1.0, 1.0, 1.0, 1.0)
        };

        out.push(SyntheticRecord {
            record: CycleRecord {
                features: CycleFeatures {
                    soc: device.soc.clone(),
                    cpu_freq_ghz: device.cpu_freq_ghz,
                    cores: device.cores,
                    ram_gb: device.ram_gb,
                    source: source.to_string(),
                    threads,
                    app_type: model.app_type.clone(),
                    dnn_model: model.name.clone(),
                    dnn_layers: model.layers,
                    memory_mb: memory0 * fm,
                    processing_ms: processing0 * fp,
                    inference_ms: inference0 * fi,
                },
                energy_j: energy0 * fe,
            },
            noiseless_energy_j: energy0,
        });
    }
    Ok(out)
}

/// Draws targets from the regression prior at given inputs: `y = L z` with
/// `L` the Cholesky factor of `K(x) + noise_var I` (auto-jittered) and `z`
/// standard normal.
pub fn sample_gp_prior_at(
    x: &Array2<f64>,
    h: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, GprError> {
    let n = x.nrows();
    let (_, factor) = crate::gpr::factorize_gram(h, x)?;
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let z: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let l = &factor.l;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..=i {
            acc += l[[i, j]] * z[j];
        }
        y[i] = acc;
    }
    Ok(y)
}

/// Draws `n` inputs uniformly from `[-2, 2]^d` and targets from the prior at
/// those inputs. Inputs are drawn first (row-major), then the normal vector.
pub fn sample_gp_prior(
    n: usize,
    d: usize,
    h: &Hyperparams,
    seed: u64,
) -> Result<(Array2<f64>, Vec<f64>), GprError> {
    h.validate()?;
    if h.ard_scales.len() != d {
        return Err(GprError::DimMismatch(format!(
            "{} ARD scales for {d} input dimensions",
            h.ard_scales.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::<f64>::zeros((n, d));
    for v in x.iter_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    let y = sample_gp_prior_at(&x, h, &mut rng)?;
    Ok((x, y))
}

/// One labeled power burst inside a cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPlan {
    pub label: String,
    pub duration_s: f64,
    /// Power above base while the segment runs.
    pub extra_power_mw: f64,
}

/// One application cycle: an idle gap, then its segments back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclePlan {
    pub cycle_id: u64,
    /// Idle time before the cycle's first segment.
    pub lead_gap_s: f64,
    pub segments: Vec<SegmentPlan>,
}

/// Full recipe for an emitted capture: quiet lead-in, marker pulse, cycles,
/// and tail, with sampling, noise, and clock-offset parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePlan {
    pub sample_interval_s: f64,
    /// Quiet head of the trace (base power only), long enough to estimate
    /// base power from.
    pub lead_in_s: f64,
    pub marker_extra_mw: f64,
    pub marker_duration_s: f64,
    pub tail_s: f64,
    /// Standard deviation of per-sample Gaussian noise; zero for exact traces.
    pub noise_sd_mw: f64,
    /// Device-to-monitor offset injected into the latency log:
    /// `device_time + offset = monitor_time`.
    pub clock_offset_s: f64,
    pub cycles: Vec<CyclePlan>,
}

/// Label used for the alignment pulse in emitted latency logs.
pub const MARKER_LABEL: &str = "marker";

impl TracePlan {
    /// Builds a plan whose cycles mirror a catalog model on a device:
    /// an initiation burst, a data-processing segment, and an inference
    /// segment whose combined net energy matches the generator's noise-free
    /// single-thread CPU energy (30% processing, 70% inference).
    pub fn for_model(
        model: &ModelProfile,
        device: &DeviceProfile,
        trends: &TrendConfig,
        cycles: usize,
    ) -> TracePlan {
        let h = 0.0002;
        let grid = |d: f64| ((d / h).round().max(1.0)) * h;
        let processing_s = grid(noiseless_processing_ms(device, model, trends) / 1000.0);
        let inference_s = grid(noiseless_inference_ms(device, model, "cpu", 1, trends) / 1000.0);
        let initiation_s = grid(0.040 * device.energy_scale);
        let energy_j = noiseless_energy_j(device, model, "cpu", 1, trends);
        let processing_mw = 1000.0 * (PROCESSING_ENERGY_SHARE * energy_j) / processing_s;
        let inference_mw = 1000.0 * (INFERENCE_ENERGY_SHARE * energy_j) / inference_s;
        let cycle_plans = (1..=cycles.max(1) as u64)
            .map(|cycle_id| CyclePlan {
                cycle_id,
                lead_gap_s: 0.1,
                segments: vec![
                    SegmentPlan {
                        label: "initiation".to_string(),
                        duration_s: initiation_s,
                        extra_power_mw: 150.0,
                    },
                    SegmentPlan {
                        label: "processing".to_string(),
                        duration_s: processing_s,
                        extra_power_mw: processing_mw,
                    },
                    SegmentPlan {
                        label: "inference".to_string(),
                        duration_s: inference_s,
                        extra_power_mw: inference_mw,
                    },
                ],
            })
            .collect();
        TracePlan {
            sample_interval_s: h,
            lead_in_s: 0.5,
            marker_extra_mw: 400.0,
            marker_duration_s: 0.1,
            tail_s: 0.1,
            noise_sd_mw: 5.0,
            clock_offset_s: 0.0,
            cycles: cycle_plans,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::BadPlan(msg));
        if !self.sample_interval_s.is_finite() || !(1e-6..=1.0).contains(&self.sample_interval_s) {
            return bad(format!(
                "sample_interval_s must lie in [1e-6, 1], got {}",
                self.sample_interval_s
            ));
        }
        for (name, v) in [
            ("lead_in_s", self.lead_in_s),
            ("marker_duration_s", self.marker_duration_s),
            ("tail_s", self.tail_s),
            ("marker_extra_mw", self.marker_extra_mw),
            ("noise_sd_mw", self.noise_sd_mw),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !self.clock_offset_s.is_finite() || self.clock_offset_s.abs() > 1e6 {
            return bad(format!(
                "clock_offset_s must be finite and within 1e6 s, got {}",
                self.clock_offset_s
            ));
        }
        if self.cycles.is_empty() {
            return bad("plan has no cycles".to_string());
        }
        let marker = self.marker_extra_mw > 0.0 && self.marker_duration_s > 0.0;
        for cycle in &self.cycles {
            if marker && cycle.cycle_id == 0 {
                return bad("cycle id 0 is reserved for the marker pulse".to_string());
            }
            if !cycle.lead_gap_s.is_finite() || cycle.lead_gap_s < 0.0 {
                return bad(format!(
                    "cycle {} lead_gap_s must be finite and non-negative",
                    cycle.cycle_id
                ));
            }
            for seg in &cycle.segments {
                if seg.label.is_empty() {
                    return bad(format!("cycle {} has an unlabeled segment", cycle.cycle_id));
                }
                if seg.label == MARKER_LABEL {
                    return bad(format!(
                        "cycle {} uses the reserved segment label '{MARKER_LABEL}'",
                        cycle.cycle_id
                    ));
                }
                if !seg.duration_s.is_finite() || seg.duration_s <= 0.0 {
                    return bad(format!(
                        "cycle {} segment '{}' duration must be positive",
                        cycle.cycle_id, seg.label
                    ));
                }
                if !seg.extra_power_mw.is_finite() || seg.extra_power_mw < 0.0 {
                    return bad(format!(
                        "cycle {} segment '{}' power must be finite and non-negative",
                        cycle.cycle_id, seg.label
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Everything the emitter produces: the two CSV byte streams, per-cycle
/// ground truth, and the injected alignment parameters.
#[derive(Debug, Clone)]
pub struct TraceArtifacts {
    pub power_csv: String,
    pub latency_csv: String,
    /// Analytic net energy per planned cycle (the marker pseudo-cycle is not
    /// included).
    pub truth: Vec<CycleEnergy>,
    pub offset_s: f64,
    pub base_power_mw: f64,
}

struct Piece {
    start_idx: usize,
    len: usize,
    extra_mw: f64,
    tag: Option<(u64, String)>,
}

/// Emits a sampled power capture and matching device-clock latency log for a
/// plan, plus analytic ground truth.
///
/// The noise-free profile is piecewise linear with breakpoints on samples:
/// each level change ramps over exactly one sample interval, placed in the
/// idle gap where one exists and at the head of the later segment where two
/// segments touch. Trapezoidal integration of the emitted samples therefore
/// reproduces the analytic ground truth exactly (up to rounding) at zero
/// noise.
pub fn emit_power_trace(
    plan: &TracePlan,
    device: &DeviceProfile,
    seed: u64,
) -> Result<TraceArtifacts, SynthError> {
    plan.validate()?;
    if !(device.base_power_mw.is_finite() && device.base_power_mw > 0.0) {
        return Err(SynthError::BadPlan(format!(
            "device base power must be positive, got {}",
            device.base_power_mw
        )));
    }
    let h = plan.sample_interval_s;
    let to_len = |d: f64| (d / h).round() as usize;

    let mut pieces: Vec<Piece> = Vec::new();
    let mut cursor = to_len(plan.lead_in_s);
    let marker = plan.marker_extra_mw > 0.0 && plan.marker_duration_s > 0.0;
    if marker {
        let len = to_len(plan.marker_duration_s).max(1);
        pieces.push(Piece {
            start_idx: cursor,
            len,
            extra_mw: plan.marker_extra_mw,
            tag: Some((0, MARKER_LABEL.to_string())),
        });
        cursor += len;
    }
    let mut cycle_piece_ranges: Vec<(u64, std::ops::Range<usize>)> = Vec::new();
    for cycle in &plan.cycles {
        cursor += to_len(cycle.lead_gap_s);
        let first_piece = pieces.len();
        for seg in &cycle.segments {
            let len = to_len(seg.duration_s).max(1);
            pieces.push(Piece {
                start_idx: cursor,
                len,
                extra_mw: seg.extra_power_mw,
                tag: Some((cycle.cycle_id, seg.label.clone())),
            });
            cursor += len;
        }
        cycle_piece_ranges.push((cycle.cycle_id, first_piece..pieces.len()));
    }
    let total = cursor + to_len(plan.tail_s);
    let n_samples = total + 1;
    if n_samples > 20_000_000 {
        return Err(SynthError::BadPlan(format!(
            "plan spans {n_samples} samples; cap is 20000000"
        )));
    }

    // Sample levels: a piece owns its inclusive end sample; where the next
    // piece starts exactly there, the earlier level survives at the shared
    // sample and the junction ramp falls inside the later piece. Elsewhere
    // ramps sit in the surrounding idle gap, so isolated pieces integrate to
    // exactly level * duration.
    let mut extras = vec![0.0f64; n_samples];
    let mut junction_prev: Vec<Option<f64>> = vec![None; pieces.len()];
    let mut prev_end: Option<(usize, f64)> = None;
    for (k, piece) in pieces.iter().enumerate() {
        let begin = match prev_end {
            Some((end_idx, prev_extra)) if end_idx == piece.start_idx => {
                junction_prev[k] = Some(prev_extra);
                piece.start_idx + 1
            }
            _ => piece.start_idx,
        };
        for slot in extras
            .iter_mut()
            .take(piece.start_idx + piece.len + 1)
            .skip(begin)
        {
            *slot = piece.extra_mw;
        }
        prev_end = Some((piece.start_idx + piece.len, piece.extra_mw));
    }

    use std::fmt::Write as _;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = if plan.noise_sd_mw > 0.0 {
        Some(Normal::new(0.0, plan.noise_sd_mw).expect("valid normal"))
    } else {
        None
    };
    let mut power_csv = String::with_capacity(n_samples * 22 + 16);
    power_csv.push_str("t_s,power_mW\n");
    for (i, extra) in extras.iter().enumerate() {
        let t = i as f64 * h;
        let mut p = device.base_power_mw + extra;
        if let Some(dist) = &noise {
            p = (p + dist.sample(&mut rng)).max(0.0);
        }
        let _ = writeln!(power_csv, "{t:.6},{p:.6}");
    }

    let mut latency_csv = String::from("cycle_id,segment,start_s,end_s,clock\n");
    for piece in &pieces {
        let (cycle_id, label) = piece.tag.as_ref().expect("all pieces are tagged");
        let a = piece.start_idx as f64 * h - plan.clock_offset_s;
        let b = (piece.start_idx + piece.len) as f64 * h - plan.clock_offset_s;
        let _ = writeln!(latency_csv, "{cycle_id},{label},{a:.6},{b:.6},device");
    }

    let mut truth = Vec::with_capacity(plan.cycles.len());
    for (cycle_id, range) in cycle_piece_ranges {
        let mut per_segment_j = std::collections::BTreeMap::new();
        for k in range {
            let piece = &pieces[k];
            let (_, label) = piece.tag.as_ref().expect("tagged");
            let dur = piece.len as f64 * h;
            // Integral of the piecewise-linear profile minus base over the
            // piece: the only deviation from level * duration is the junction
            // ramp at the head when the previous piece touches this one.
            let head_ramp_mj = match junction_prev[k] {
                Some(prev_extra) => (piece.extra_mw - prev_extra) * h / 2.0,
                None => 0.0,
            };
            let net_mj = piece.extra_mw * dur - head_ramp_mj;
            *per_segment_j.entry(label.clone()).or_insert(0.0) += net_mj / 1000.0;
        }
        let total_j = per_segment_j.values().sum();
        truth.push(CycleEnergy {
            cycle_id,
            per_segment_j,
            total_j,
            base_power_mw: device.base_power_mw,
            clamped_segments: 0,
        });
    }

    Ok(TraceArtifacts {
        power_csv,
        latency_csv,
        truth,
        offset_s: plan.clock_offset_s,
        base_power_mw: device.base_power_mw,
    })
}
