//! `epam`: command-line front end for the energy-model toolkit.
//!
//! Subcommands wire the pipeline end to end: `ingest` turns power captures
//! into per-cycle energies, `dataset split` partitions record files,
//! `train` fits the regressor, `predict` scores query rows (optionally
//! streaming), `eval` reports accuracy and calibration, and `synth`
//! produces synthetic records and captures. Every command is deterministic
//! given its inputs and seeds.
//!
//! Exit codes: 0 on success, 2 for invalid input or configuration, 3 for
//! numerical failure during training or prediction. Failures print one
//! machine-readable line to stderr: `ERROR <code> <message>`.

mod commands;
mod config;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use epam_core::dataset::DatasetError;
use epam_core::eval::EvalError;
use epam_core::gpr::{GprError, ModelIoError};
use epam_core::synthetic::SynthError;
use epam_core::trace::{PowerForm, TraceError};

/// Error carrying the exit-code contract: 2 for bad input or configuration,
/// 3 for numerical failure inside fitting or prediction.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> CliError {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn usage_from(err: impl std::fmt::Display) -> CliError {
        CliError::usage(err.to_string())
    }

    pub fn numeric(message: impl Into<String>) -> CliError {
        CliError {
            code: 3,
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        self.code
    }

    pub fn message(&self) -> &str {
        &self.message
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> CliError {
        CliError::usage_from(e)
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> CliError {
        CliError::usage_from(e)
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> CliError {
        CliError::usage_from(e)
    }
}

impl From<ModelIoError> for CliError {
    fn from(e: ModelIoError) -> CliError {
        CliError::usage_from(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::usage_from(e)
    }
}

impl From<GprError> for CliError {
    fn from(e: GprError) -> CliError {
        match &e {
            GprError::Factorization(_) | GprError::Optim(_) => CliError::numeric(e.to_string()),
            _ => CliError::usage_from(e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> CliError {
        match e {
            EvalError::Prediction(inner) => inner.into(),
            other => CliError::usage_from(other),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "epam",
    version,
    about = "Measure and predict the per-cycle energy of mobile AI applications",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a power capture into per-cycle, per-segment energies.
    Ingest(IngestArgs),
    /// Dataset file utilities.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Fit the energy regressor on a dataset CSV.
    Train(TrainArgs),
    /// Predict energy (mean and standard deviation) for query rows.
    Predict(PredictArgs),
    /// Evaluate a trained model against a labeled test CSV.
    Eval(EvalArgs),
    /// Synthetic data generation.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PowerFormArg {
    /// Power capture with header `t_s,power_mW`.
    PowerMw,
    /// Capture with header `t_s,current_mA,voltage_V`; power is the product.
    CurrentVoltage,
}

impl From<PowerFormArg> for PowerForm {
    fn from(v: PowerFormArg) -> PowerForm {
        match v {
            PowerFormArg::PowerMw => PowerForm::PowerMw,
            PowerFormArg::CurrentVoltage => PowerForm::CurrentVoltage,
        }
    }
}

#[derive(Args)]
pub struct IngestArgs {
    /// Power capture CSV.
    #[arg(long)]
    power: PathBuf,
    /// Column layout of the power capture (config key `ingest.power_form`).
    #[arg(long, value_enum)]
    power_form: Option<PowerFormArg>,
    /// Latency log CSV (`cycle_id,segment,start_s,end_s,clock`).
    #[arg(long)]
    latency: PathBuf,
    /// Quiet span `start_s,end_s` used for the base-power estimate.
    #[arg(long, value_parser = parse_window)]
    quiet_window: Option<[f64; 2]>,
    /// Marker detection threshold in mW above base power [default: 100].
    #[arg(long)]
    marker_threshold: Option<f64>,
    /// Minimum marker pulse duration in milliseconds [default: 50].
    #[arg(long)]
    marker_min_ms: Option<f64>,
    /// Optional TOML run configuration (section `[ingest]`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV of per-cycle energies (`cycle_id,segment,energy_j`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Split a dataset CSV into train.csv, val.csv, and test.csv.
    Split(SplitArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitMode {
    /// Seeded shuffle cut at the given fractions.
    Random,
    /// Hold every row of one device out as the test set.
    ByDevice,
}

#[derive(Args)]
pub struct SplitArgs {
    /// Input dataset CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Split strategy.
    #[arg(long, value_enum)]
    mode: SplitMode,
    /// Train,validation,test fractions; must be positive and sum to 1.
    #[arg(long, value_parser = parse_fractions, default_value = "0.743,0.170,0.087")]
    fractions: [f64; 3],
    /// Shuffle seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Held-out device for `--mode by-device`: a catalog device name
    /// (e.g. `device-3`) or an SoC string as it appears in the data.
    #[arg(long)]
    test_device: Option<String>,
    /// Directory receiving train.csv, val.csv, and test.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Optional TOML run configuration (section `[fit]`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Query CSV (dataset layout; the energy column is optional). `-` reads
    /// standard input.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output CSV with header `mean_j,std_j,unseen_level`. `-` writes
    /// standard output.
    #[arg(long)]
    out: PathBuf,
    /// Read one query row at a time and emit its prediction line before
    /// reading the next row.
    #[arg(long)]
    stream: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Labeled test dataset CSV.
    #[arg(long)]
    test: PathBuf,
    /// Output report path (flat `key = value` lines plus one line per
    /// device/model/source group).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Sample cycle records from the built-in device and model catalog.
    Records(SynthRecordsArgs),
    /// Emit a power capture and latency log for a trace plan.
    Trace(SynthTraceArgs),
}

#[derive(Args)]
pub struct SynthRecordsArgs {
    /// Number of records.
    #[arg(long)]
    n: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Optional TOML run configuration (section `[synth]`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct SynthTraceArgs {
    /// TOML trace plan; the README documents the schema.
    #[arg(long)]
    plan: PathBuf,
    /// Noise seed for the emitted samples.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Prefix for the emitted files: `<prefix>.power.csv`,
    /// `<prefix>.latency.csv`, and `<prefix>.truth.csv`.
    #[arg(long)]
    out_prefix: String,
}

fn parse_window(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected two comma-separated numbers, e.g. 0.0,0.4".to_string());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| format!("bad number `{}`", parts[0]))?;
    let b: f64 = parts[1].trim().parse().map_err(|_| format!("bad number `{}`", parts[1]))?;
    Ok([a, b])
}

fn parse_fractions(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated fractions, e.g. 0.743,0.170,0.087".to_string());
    }
    let mut out = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p.trim().parse().map_err(|_| format!("bad number `{p}`"))?;
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(args) => commands::ingest(args),
        Command::Dataset(DatasetCommand::Split(args)) => commands::split(args),
        Command::Train(args) => commands::train(args),
        Command::Predict(args) => commands::predict(args),
        Command::Eval(args) => commands::eval(args),
        Command::Synth(SynthCommand::Records(args)) => synth::records(args),
        Command::Synth(SynthCommand::Trace(args)) => synth::trace(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR {} {}", e.code(), e.message());
            ExitCode::from(e.code())
        }
    }
}
