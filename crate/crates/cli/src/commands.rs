//! Implementations of the pipeline subcommands (everything except `synth`).

use std::borrow::Cow;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use epam_core::dataset::{
    encode, load_queries, load_records, split as split_records, CycleRecord, FeatureSchema,
    QueryReader, SplitSpec,
};
use epam_core::eval::evaluate;
use epam_core::gpr::{fit, load_model, save_model, TrainedModel};
use epam_core::synthetic::default_devices;
use epam_core::trace::{
    align_clocks, cycle_energies, estimate_base_power, parse_latency_csv, parse_power_csv,
    ClockDomain, CycleEnergy, CycleLog, MarkerSpec, PowerForm,
};

use crate::config::RunConfig;
use crate::{CliError, EvalArgs, IngestArgs, PredictArgs, SplitArgs, TrainArgs};

/// Cycle-energy CSV header shared by `ingest` output and `synth trace`
/// ground truth.
pub const CYCLES_HEADER: &str = "cycle_id,segment,energy_j";

/// Per-cycle sum row label in cycle-energy CSVs; reserved.
pub const TOTAL_LABEL: &str = "total";

fn open_input(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::usage(format!("cannot open {}: {e}", path.display())))
}

pub fn create_output_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", path.display())))
}

/// Minimal CSV field quoting for labels that carry delimiters.
fn csv_field(s: &str) -> Cow<'_, str> {
    if s.contains([',', '"', '\n', '\r']) {
        Cow::Owned(format!("\"{}\"", s.replace('"', "\"\"")))
    } else {
        Cow::Borrowed(s)
    }
}

/// Writes per-cycle energies: one row per segment (alphabetical), then the
/// reserved `total` row.
pub fn write_cycle_energies(out: &mut impl Write, cycles: &[CycleEnergy]) -> Result<(), CliError> {
    writeln!(out, "{CYCLES_HEADER}")?;
    for c in cycles {
        for (label, j) in &c.per_segment_j {
            writeln!(out, "{},{},{}", c.cycle_id, csv_field(label), j)?;
        }
        writeln!(out, "{},{TOTAL_LABEL},{}", c.cycle_id, c.total_j)?;
    }
    Ok(())
}

pub fn ingest(args: IngestArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;

    let form: PowerForm = match args.power_form {
        Some(f) => f.into(),
        None => match cfg.ingest.power_form.as_deref() {
            None | Some("power-mw") => PowerForm::PowerMw,
            Some("current-voltage") => PowerForm::CurrentVoltage,
            Some(other) => {
                return Err(CliError::usage(format!(
                    "ingest.power_form must be `power-mw` or `current-voltage`, got `{other}`"
                )))
            }
        },
    };
    let quiet = args
        .quiet_window
        .or(cfg.ingest.quiet_window)
        .ok_or_else(|| {
            CliError::usage("a quiet window is required: pass --quiet-window a,b or set ingest.quiet_window")
        })?;
    let threshold_mw = args.marker_threshold.unwrap_or(cfg.ingest.marker_threshold_mw);
    let min_ms = args.marker_min_ms.unwrap_or(cfg.ingest.marker_min_ms);
    if !(threshold_mw.is_finite() && threshold_mw > 0.0) || !(min_ms.is_finite() && min_ms > 0.0) {
        return Err(CliError::usage(format!(
            "marker threshold and minimum duration must be positive, got {threshold_mw} mW / {min_ms} ms"
        )));
    }

    let trace = parse_power_csv(open_input(&args.power)?, form)?;
    let logs = parse_latency_csv(open_input(&args.latency)?)?;
    let base = estimate_base_power(&trace, (quiet[0], quiet[1]))?;
    let spec = MarkerSpec {
        base_power_mw: base,
        threshold_above_base_mw: threshold_mw,
        min_duration_s: min_ms / 1000.0,
        ..MarkerSpec::new(base)
    };

    let has_marker = logs
        .iter()
        .flat_map(|l| l.marks.iter())
        .any(|m| m.label == spec.label);
    let needs_alignment = logs.iter().any(|l| l.clock == ClockDomain::Device);
    let offset_s = if has_marker {
        align_clocks(&trace, &logs, &spec)?
    } else if needs_alignment {
        return Err(CliError::usage(format!(
            "latency log uses the device clock but has no `{}` segment to align with",
            spec.label
        )));
    } else {
        0.0
    };

    // The marker is plumbing, not application work: drop its marks (and any
    // cycle left empty) before integrating.
    let mut work_logs: Vec<CycleLog> = Vec::new();
    for log in logs {
        if log
            .marks
            .iter()
            .any(|m| m.label == TOTAL_LABEL)
        {
            return Err(CliError::usage(format!(
                "segment label `{TOTAL_LABEL}` is reserved for the per-cycle sum row"
            )));
        }
        let marks: Vec<_> = log
            .marks
            .into_iter()
            .filter(|m| m.label != spec.label)
            .collect();
        if !marks.is_empty() {
            work_logs.push(CycleLog { marks, ..log });
        }
    }
    if work_logs.is_empty() {
        return Err(CliError::usage("latency log has no application segments"));
    }
    let cycles = cycle_energies(&trace, &work_logs, base, offset_s)?;
    let clamped: usize = cycles.iter().map(|c| c.clamped_segments).sum();

    let mut out = create_output_file(&args.out)?;
    write_cycle_energies(&mut out, &cycles)?;
    out.flush()?;

    println!("ingest.power_form = {}", match form {
        PowerForm::PowerMw => "power-mw",
        PowerForm::CurrentVoltage => "current-voltage",
    });
    println!("ingest.quiet_window = {},{}", quiet[0], quiet[1]);
    println!("ingest.marker_threshold_mw = {threshold_mw}");
    println!("ingest.marker_min_ms = {min_ms}");
    println!("ingest.base_power_mw = {base}");
    println!("ingest.offset_s = {offset_s}");
    println!("ingest.cycles = {}", cycles.len());
    println!("ingest.clamped_segments = {clamped}");
    Ok(())
}

/// Maps a catalog device name (`device-3`) to its SoC string; anything else
/// is taken to be an SoC value as written in the data.
fn resolve_test_soc(key: &str) -> String {
    default_devices()
        .iter()
        .find(|d| d.name == key)
        .map(|d| d.soc.clone())
        .unwrap_or_else(|| key.to_string())
}

pub fn split(args: SplitArgs) -> Result<(), CliError> {
    let records = load_records(open_input(&args.input)?)?;
    let spec = match args.mode {
        crate::SplitMode::Random => {
            if args.test_device.is_some() {
                return Err(CliError::usage(
                    "--test-device only applies to --mode by-device",
                ));
            }
            SplitSpec::Random {
                fractions: args.fractions,
                seed: args.seed,
            }
        }
        crate::SplitMode::ByDevice => {
            let key = args.test_device.as_deref().ok_or_else(|| {
                CliError::usage("--mode by-device requires --test-device")
            })?;
            SplitSpec::ByDevice {
                test_soc: resolve_test_soc(key),
                fractions: args.fractions,
                seed: args.seed,
            }
        }
    };
    let parts = split_records(&records, &spec)?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", args.out_dir.display())))?;
    for (name, rows) in [
        ("train.csv", &parts.train),
        ("val.csv", &parts.val),
        ("test.csv", &parts.test),
    ] {
        let path = args.out_dir.join(name);
        let selected: Vec<CycleRecord> = rows.iter().map(|&i| records[i].clone()).collect();
        let mut out = create_output_file(&path)?;
        epam_core::dataset::write_records(&mut out, &selected)?;
        out.flush()?;
        println!("split.{} = {}", name.trim_end_matches(".csv"), selected.len());
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    print!("{}", cfg.fit.echo());
    let records = load_records(open_input(&args.data)?)?;
    let design = encode(&records, &FeatureSchema::default())?;
    let rows: Vec<usize> = (0..records.len()).collect();
    let model = fit(&design, &rows, &cfg.fit.to_fit_config())?;

    let mut out = create_output_file(&args.out)?;
    save_model(&mut out, &model)?;
    out.flush()?;

    println!("model.rows = {}", model.x_train.nrows());
    println!("model.columns = {}", model.x_train.ncols());
    println!("model.lml = {}", model.lml);
    println!("model.converged = {}", model.converged);
    Ok(())
}

fn load_model_file(path: &Path) -> Result<TrainedModel, CliError> {
    Ok(load_model(open_input(path)?)?)
}

const PREDICTIONS_HEADER: &str = "mean_j,std_j,unseen_level";

fn prediction_line(p: &epam_core::gpr::Prediction) -> String {
    format!("{},{},{}", p.mean_j, p.std_j(), p.unseen_level)
}

pub fn predict(args: PredictArgs) -> Result<(), CliError> {
    let model = load_model_file(&args.model)?;

    let stdio = Path::new("-");
    let input: Box<dyn Read> = if args.input == stdio {
        Box::new(std::io::stdin().lock())
    } else {
        Box::new(open_input(&args.input)?)
    };
    let mut out: Box<dyn Write> = if args.out == stdio {
        Box::new(std::io::stdout().lock())
    } else {
        Box::new(create_output_file(&args.out)?)
    };

    let rows = if args.stream {
        // One query row in, one prediction line out, flushed before the
        // next row is read.
        writeln!(out, "{PREDICTIONS_HEADER}")?;
        out.flush()?;
        let mut rows = 0usize;
        for features in QueryReader::new(BufReader::new(input))? {
            let p = model.predict_record(&features?)?;
            writeln!(out, "{}", prediction_line(&p))?;
            out.flush()?;
            rows += 1;
        }
        if rows == 0 {
            return Err(CliError::usage("query file has no rows"));
        }
        rows
    } else {
        let queries = load_queries(BufReader::new(input))?;
        let predictions = model.predict_batch(&queries)?;
        writeln!(out, "{PREDICTIONS_HEADER}")?;
        for p in &predictions {
            writeln!(out, "{}", prediction_line(p))?;
        }
        out.flush()?;
        predictions.len()
    };
    if args.out != stdio {
        println!("predict.rows = {rows}");
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let model = load_model_file(&args.model)?;
    let records = load_records(open_input(&args.test)?)?;
    let report = evaluate(&model, &records)?;
    let text = report.to_text();
    let mut out = create_output_file(&args.out)?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    print!("{text}");
    Ok(())
}
