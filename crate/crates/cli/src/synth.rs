//! `synth records` and `synth trace`: seeded synthetic data generation.

use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use epam_core::dataset::{write_records, CycleRecord};
use epam_core::synthetic::{
    default_devices, default_models, emit_power_trace, sample_records, CyclePlan, DeviceProfile,
    SegmentPlan, TracePlan, TrendConfig,
};

use crate::commands::{create_output_file, write_cycle_energies};
use crate::config::{RunConfig, SynthSection};
use crate::{CliError, SynthRecordsArgs, SynthTraceArgs};

pub fn records(args: SynthRecordsArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let trends = cfg.synth.to_trends()?;
    print!("{}", SynthSection::echo(&trends));
    println!("synth.n = {}", args.n);
    println!("synth.seed = {}", args.seed);

    let rows: Vec<CycleRecord> =
        sample_records(args.n, &default_devices(), &default_models(), &trends, args.seed)?
            .into_iter()
            .map(|r| r.record)
            .collect();
    let mut out = create_output_file(&args.out)?;
    write_records(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}

/// TOML trace plan. Two forms: a catalog shorthand (`model` plus `cycles`)
/// that mirrors a model's noise-free cycle on a device, or explicit
/// `[[cycle]]` tables with `[[cycle.segment]]` entries. Scalar keys override
/// the defaults of either form.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    /// Catalog device name (`device-1`) or SoC string.
    device: String,
    /// Catalog model name; switches on the shorthand form.
    model: Option<String>,
    /// Number of catalog-shaped cycles (shorthand form only).
    cycles: Option<usize>,
    sample_interval_s: Option<f64>,
    lead_in_s: Option<f64>,
    marker_extra_mw: Option<f64>,
    marker_duration_s: Option<f64>,
    tail_s: Option<f64>,
    noise_sd_mw: Option<f64>,
    clock_offset_s: Option<f64>,
    #[serde(default, rename = "cycle")]
    explicit: Vec<CycleTable>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CycleTable {
    /// Idle time before the cycle's first segment.
    lead_gap_s: f64,
    #[serde(rename = "segment")]
    segments: Vec<SegmentTable>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentTable {
    label: String,
    duration_s: f64,
    extra_power_mw: f64,
}

fn find_device(key: &str) -> Result<DeviceProfile, CliError> {
    default_devices()
        .into_iter()
        .find(|d| d.name == key || d.soc == key)
        .ok_or_else(|| {
            let known: Vec<String> = default_devices()
                .iter()
                .map(|d| format!("{} ({})", d.name, d.soc))
                .collect();
            CliError::usage(format!(
                "unknown device `{key}`; catalog: {}",
                known.join(", ")
            ))
        })
}

fn build_plan(file: &PlanFile, device: &DeviceProfile) -> Result<TracePlan, CliError> {
    let mut plan = match (&file.model, file.explicit.is_empty()) {
        (Some(model_name), true) => {
            let models = default_models();
            let model = models.iter().find(|m| m.name == *model_name).ok_or_else(|| {
                let known: Vec<&str> = models.iter().map(|m| m.name.as_str()).collect();
                CliError::usage(format!(
                    "unknown model `{model_name}`; catalog: {}",
                    known.join(", ")
                ))
            })?;
            TracePlan::for_model(model, device, &TrendConfig::default(), file.cycles.unwrap_or(1))
        }
        (None, false) => {
            if file.cycles.is_some() {
                return Err(CliError::usage(
                    "`cycles` counts catalog-shaped cycles; explicit [[cycle]] tables define their own",
                ));
            }
            TracePlan {
                sample_interval_s: 0.0002,
                lead_in_s: 0.5,
                marker_extra_mw: 400.0,
                marker_duration_s: 0.1,
                tail_s: 0.1,
                noise_sd_mw: 0.0,
                clock_offset_s: 0.0,
                cycles: file
                    .explicit
                    .iter()
                    .enumerate()
                    .map(|(i, c)| CyclePlan {
                        cycle_id: i as u64 + 1,
                        lead_gap_s: c.lead_gap_s,
                        segments: c
                            .segments
                            .iter()
                            .map(|s| SegmentPlan {
                                label: s.label.clone(),
                                duration_s: s.duration_s,
                                extra_power_mw: s.extra_power_mw,
                            })
                            .collect(),
                    })
                    .collect(),
            }
        }
        (Some(_), false) => {
            return Err(CliError::usage(
                "a plan is either a catalog shorthand (`model`) or explicit [[cycle]] tables, not both",
            ))
        }
        (None, true) => {
            return Err(CliError::usage(
                "plan needs either `model` or at least one [[cycle]] table",
            ))
        }
    };
    macro_rules! take {
        ($($field:ident),* $(,)?) => {
            $(if let Some(v) = file.$field { plan.$field = v; })*
        };
    }
    take!(
        sample_interval_s,
        lead_in_s,
        marker_extra_mw,
        marker_duration_s,
        tail_s,
        noise_sd_mw,
        clock_offset_s,
    );
    Ok(plan)
}

pub fn trace(args: SynthTraceArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.plan)
        .map_err(|e| CliError::usage(format!("cannot read plan {}: {e}", args.plan.display())))?;
    let file: PlanFile = toml::from_str(&text)
        .map_err(|e| CliError::usage(format!("plan {}: {e}", args.plan.display())))?;
    let device = find_device(&file.device)?;
    let plan = build_plan(&file, &device)?;
    let art = emit_power_trace(&plan, &device, args.seed)?;

    let write = |suffix: &str, body: &dyn Fn(&mut dyn Write) -> Result<(), CliError>| {
        let path = format!("{}.{suffix}.csv", args.out_prefix);
        let mut out = create_output_file(Path::new(&path))?;
        body(&mut out)?;
        out.flush()?;
        println!("trace.{suffix} = {path}");
        Ok::<(), CliError>(())
    };
    write("power", &|w| Ok(w.write_all(art.power_csv.as_bytes())?))?;
    write("latency", &|w| Ok(w.write_all(art.latency_csv.as_bytes())?))?;
    write("truth", &|mut w| write_cycle_energies(&mut w, &art.truth))?;

    println!("trace.device = {}", device.name);
    println!("trace.base_power_mw = {}", art.base_power_mw);
    println!("trace.offset_s = {}", art.offset_s);
    println!("trace.cycles = {}", art.truth.len());
    println!("trace.seed = {}", args.seed);
    Ok(())
}
