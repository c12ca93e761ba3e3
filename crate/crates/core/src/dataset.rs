//! Cycle records, feature encoding and dataset splits.
//!
//! A record describes one application cycle: the device it ran on, the model
//! and processing source, the observed latencies, and the measured energy.
//! Records travel as CSV with a fixed header (see [`DATASET_HEADER`]).
//! Encoding standardizes numeric columns to zero mean and unit variance
//! (population variance) and one-hot expands categorical columns, one column
//! per level with levels sorted by name.

use std::collections::BTreeSet;
use std::io;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Column order every dataset CSV must carry, target last.
pub const DATASET_HEADER: [&str; 13] = [
    "soc",
    "cpu_freq_ghz",
    "cores",
    "ram_gb",
    "source",
    "threads",
    "app_type",
    "dnn_model",
    "dnn_layers",
    "memory_mb",
    "processing_ms",
    "inference_ms",
    "energy_j",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("row {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("dataset is empty")]
    Empty,
    #[error("target column is constant; nothing to regress on")]
    ConstantTarget,
    #[error("fractions must be positive and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("split leaves the `{0}` partition empty")]
    EmptyPartition(&'static str),
    #[error("by-device split needs at least 2 distinct devices, found {0}")]
    TooFewDevices(usize),
    #[error("no rows match test device `{0}`")]
    UnknownTestDevice(String),
    #[error("feature `{0}` is not part of the record layout")]
    UnknownFeature(String),
}

/// Everything known about a cycle except its energy.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleFeatures {
    pub soc: String,
    pub cpu_freq_ghz: f64,
    pub cores: u32,
    pub ram_gb: f64,
    pub source: String,
    pub threads: u32,
    pub app_type: String,
    pub dnn_model: String,
    pub dnn_layers: u32,
    pub memory_mb: f64,
    pub processing_ms: f64,
    pub inference_ms: f64,
}

/// A cycle observation: features plus the measured energy in joules.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub features: CycleFeatures,
    pub energy_j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// Ordered list of features to encode. The default matches
/// [`DATASET_HEADER`] (energy excluded): 8 numeric and 4 categorical
/// features.
#[derive(Debug, Clone)]
pub struct FeatureSchema {
    pub features: Vec<(String, FeatureKind)>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        use FeatureKind::*;
        let features = [
            ("soc", Categorical),
            ("cpu_freq_ghz", Numeric),
            ("cores", Numeric),
            ("ram_gb", Numeric),
            ("source", Categorical),
            ("threads", Numeric),
            ("app_type", Categorical),
            ("dnn_model", Categorical),
            ("dnn_layers", Numeric),
            ("memory_mb", Numeric),
            ("processing_ms", Numeric),
            ("inference_ms", Numeric),
        ]
        .into_iter()
        .map(|(n, k)| (n.to_string(), k))
        .collect();
        FeatureSchema { features }
    }
}

fn numeric_value(f: &CycleFeatures, name: &str) -> Result<f64, DatasetError> {
    Ok(match name {
        "cpu_freq_ghz" => f.cpu_freq_ghz,
        "cores" => f.cores as f64,
        "ram_gb" => f.ram_gb,
        "threads" => f.threads as f64,
        "dnn_layers" => f.dnn_layers as f64,
        "memory_mb" => f.memory_mb,
        "processing_ms" => f.processing_ms,
        "inference_ms" => f.inference_ms,
        other => return Err(DatasetError::UnknownFeature(other.to_string())),
    })
}

fn categorical_value<'a>(f: &'a CycleFeatures, name: &str) -> Result<&'a str, DatasetError> {
    Ok(match name {
        "soc" => &f.soc,
        "source" => &f.source,
        "app_type" => &f.app_type,
        "dnn_model" => &f.dnn_model,
        other => return Err(DatasetError::UnknownFeature(other.to_string())),
    })
}

/// How one schema feature maps to design-matrix columns.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnEncoder {
    /// Standardized numeric column: `(value - mean) / std`.
    Numeric { name: String, mean: f64, std: f64 },
    /// Numeric column that was constant in the training data; it carries no
    /// information and is dropped from the design matrix.
    DroppedConstant { name: String },
    /// One column per level, levels sorted by name. An unseen level encodes
    /// as an all-zero block and raises the caller-visible flag.
    Categorical { name: String, levels: Vec<String> },
}

/// The reusable part of an encoding: column transforms plus target scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMeta {
    pub columns: Vec<ColumnEncoder>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl EncodingMeta {
    /// Number of design-matrix columns.
    pub fn width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnEncoder::Numeric { .. } => 1,
                ColumnEncoder::DroppedConstant { .. } => 0,
                ColumnEncoder::Categorical { levels, .. } => levels.len(),
            })
            .sum()
    }

    /// Design-matrix column names, e.g. `soc=Kirin 9000` or `threads`.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        for c in &self.columns {
            match c {
                ColumnEncoder::Numeric { name, .. } => names.push(name.clone()),
                ColumnEncoder::DroppedConstant { .. } => {}
                ColumnEncoder::Categorical { name, levels } => {
                    for l in levels {
                        names.push(format!("{name}={l}"));
                    }
                }
            }
        }
        names
    }

    /// Encodes one record with the stored transforms. The boolean is true
    /// when any categorical level was not seen at encoding time.
    pub fn apply(&self, f: &CycleFeatures) -> Result<(Vec<f64>, bool), DatasetError> {
        let mut x = Vec::with_capacity(self.width());
        let mut unseen = false;
        for c in &self.columns {
            match c {
                ColumnEncoder::Numeric { name, mean, std } => {
                    x.push((numeric_value(f, name)? - mean) / std);
                }
                ColumnEncoder::DroppedConstant { .. } => {}
                ColumnEncoder::Categorical { name, levels } => {
                    let v = categorical_value(f, name)?;
                    let hit = levels.iter().position(|l| l == v);
                    if hit.is_none() {
                        unseen = true;
                    }
                    for (i, _) in levels.iter().enumerate() {
                        x.push(if hit == Some(i) { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        Ok((x, unseen))
    }

    /// De-standardizes a target-space mean.
    pub fn target_from_std(&self, y_std: f64) -> f64 {
        y_std * self.target_std + self.target_mean
    }

    /// Standardizes a raw target.
    pub fn target_to_std(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    /// Pass-through meta for callers that already work in model space:
    /// columns `x0..x{d-1}` with identity scaling, identity target.
    pub fn identity(d: usize) -> Self {
        EncodingMeta {
            columns: (0..d)
                .map(|i| ColumnEncoder::Numeric {
                    name: format!("x{i}"),
                    mean: 0.0,
                    std: 1.0,
                })
                .collect(),
            target_mean: 0.0,
            target_std: 1.0,
        }
    }
}

/// Encoded design: the matrix, the standardized targets, and the transform
/// metadata needed to encode future queries the same way.
#[derive(Debug, Clone)]
pub struct EncodedDesign {
    pub meta: EncodingMeta,
    /// `n x d`, rows in record order.
    pub matrix: Array2<f64>,
    /// Standardized targets, zero mean and unit population variance.
    pub targets_std: Vec<f64>,
}

fn population_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Builds the design matrix for `records` under `schema`.
///
/// Numeric columns with zero variance are dropped (recorded in the meta);
/// a constant target is an error because the standardized problem would be
/// degenerate.
pub fn encode(records: &[CycleRecord], schema: &FeatureSchema) -> Result<EncodedDesign, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut columns = Vec::with_capacity(schema.features.len());
    for (name, kind) in &schema.features {
        match kind {
            FeatureKind::Numeric => {
                let vals: Result<Vec<f64>, _> = records
                    .iter()
                    .map(|r| numeric_value(&r.features, name))
                    .collect();
                let (mean, std) = population_stats(&vals?);
                if std > 0.0 {
                    columns.push(ColumnEncoder::Numeric {
                        name: name.clone(),
                        mean,
                        std,
                    });
                } else {
                    columns.push(ColumnEncoder::DroppedConstant { name: name.clone() });
                }
            }
            FeatureKind::Categorical => {
                let mut levels = BTreeSet::new();
                for r in records {
                    levels.insert(categorical_value(&r.features, name)?.to_string());
                }
                columns.push(ColumnEncoder::Categorical {
                    name: name.clone(),
                    levels: levels.into_iter().collect(),
                });
            }
        }
    }
    let targets: Vec<f64> = records.iter().map(|r| r.energy_j).collect();
    let (target_mean, target_std) = population_stats(&targets);
    if target_std == 0.0 {
        return Err(DatasetError::ConstantTarget);
    }
    let meta = EncodingMeta {
        columns,
        target_mean,
        target_std,
    };

    let d = meta.width();
    let mut matrix = Array2::<f64>::zeros((records.len(), d));
    for (i, r) in records.iter().enumerate() {
        let (x, _) = meta.apply(&r.features)?;
        for (j, v) in x.into_iter().enumerate() {
            matrix[[i, j]] = v;
        }
    }
    let targets_std = targets.iter().map(|y| meta.target_to_std(*y)).collect();
    Ok(EncodedDesign {
        meta,
        matrix,
        targets_std,
    })
}

/// Requested split of a record set into train/validation/test.
#[derive(Debug, Clone)]
pub enum SplitSpec {
    /// Seeded permutation followed by a contiguous cut at the given
    /// train/validation/test fractions.
    Random { fractions: [f64; 3], seed: u64 },
    /// Every row whose `soc` equals `test_soc` goes to test; the rest is
    /// split train/validation with the first two fractions renormalized.
    ByDevice {
        test_soc: String,
        fractions: [f64; 3],
        seed: u64,
    },
}

/// Row indices of each partition. Order within a partition follows the
/// seeded permutation (or, for a by-device test set, the input order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn check_fractions(f: &[f64; 3]) -> Result<(), DatasetError> {
    let sum: f64 = f.iter().sum();
    if f.iter().any(|v| *v <= 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions(*f));
    }
    Ok(())
}

fn shuffled_indices(mut idx: Vec<usize>, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx
}

/// Splits `records` according to `spec`. Identical inputs give identical
/// splits; every partition must end up non-empty.
pub fn split(records: &[CycleRecord], spec: &SplitSpec) -> Result<Split, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    match spec {
        SplitSpec::Random { fractions, seed } => {
            check_fractions(fractions)?;
            let n = records.len();
            let perm = shuffled_indices((0..n).collect(), *seed);
            let n_train = (fractions[0] * n as f64).round() as usize;
            let n_val = (fractions[1] * n as f64).round() as usize;
            if n_train == 0 {
                return Err(DatasetError::EmptyPartition("train"));
            }
            if n_val == 0 {
                return Err(DatasetError::EmptyPartition("val"));
            }
            if n_train + n_val >= n {
                return Err(DatasetError::EmptyPartition("test"));
            }
            Ok(Split {
                train: perm[..n_train].to_vec(),
                val: perm[n_train..n_train + n_val].to_vec(),
                test: perm[n_train + n_val..].to_vec(),
            })
        }
        SplitSpec::ByDevice {
            test_soc,
            fractions,
            seed,
        } => {
            check_fractions(fractions)?;
            let distinct: BTreeSet<&str> =
                records.iter().map(|r| r.features.soc.as_str()).collect();
            if distinct.len() < 2 {
                return Err(DatasetError::TooFewDevices(distinct.len()));
            }
            let (test, rest): (Vec<usize>, Vec<usize>) =
                (0..records.len()).partition(|&i| records[i].features.soc == *test_soc);
            if test.is_empty() {
                return Err(DatasetError::UnknownTestDevice(test_soc.clone()));
            }
            if rest.is_empty() {
                return Err(DatasetError::EmptyPartition("train"));
            }
            let perm = shuffled_indices(rest, *seed);
            let train_frac = fractions[0] / (fractions[0] + fractions[1]);
            let n_train = (train_frac * perm.len() as f64).round() as usize;
            if n_train == 0 {
                return Err(DatasetError::EmptyPartition("train"));
            }
            if n_train >= perm.len() {
                return Err(DatasetError::EmptyPartition("val"));
            }
            Ok(Split {
                train: perm[..n_train].to_vec(),
                val: perm[n_train..].to_vec(),
                test,
            })
        }
    }
}

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    line: u64,
) -> Result<T, DatasetError> {
    let raw = rec.get(idx).unwrap_or("");
    raw.trim().parse::<T>().map_err(|_| DatasetError::Row {
        line,
        msg: format!("cannot parse `{raw}` for column `{}`", DATASET_HEADER[idx]),
    })
}

fn check_finite_non_negative(v: f64, col: &str, line: u64) -> Result<(), DatasetError> {
    if !v.is_finite() || v < 0.0 {
        return Err(DatasetError::Row {
            line,
            msg: format!("column `{col}` must be finite and non-negative, got {v}"),
        });
    }
    Ok(())
}

fn features_from_record(rec: &csv::StringRecord, line: u64) -> Result<CycleFeatures, DatasetError> {
    let f = CycleFeatures {
        soc: rec.get(0).unwrap_or("").trim().to_string(),
        cpu_freq_ghz: parse_field(rec, 1, line)?,
        cores: parse_field(rec, 2, line)?,
        ram_gb: parse_field(rec, 3, line)?,
        source: rec.get(4).unwrap_or("").trim().to_string(),
        threads: parse_field(rec, 5, line)?,
        app_type: rec.get(6).unwrap_or("").trim().to_string(),
        dnn_model: rec.get(7).unwrap_or("").trim().to_string(),
        dnn_layers: parse_field(rec, 8, line)?,
        memory_mb: parse_field(rec, 9, line)?,
        processing_ms: parse_field(rec, 10, line)?,
        inference_ms: parse_field(rec, 11, line)?,
    };
    for (name, v) in [
        ("cpu_freq_ghz", f.cpu_freq_ghz),
        ("ram_gb", f.ram_gb),
        ("memory_mb", f.memory_mb),
        ("processing_ms", f.processing_ms),
        ("inference_ms", f.inference_ms),
    ] {
        check_finite_non_negative(v, name, line)?;
    }
    if f.threads == 0 {
        return Err(DatasetError::Row {
            line,
            msg: "column `threads` must be at least 1".into(),
        });
    }
    for (name, v) in [
        ("soc", &f.soc),
        ("source", &f.source),
        ("app_type", &f.app_type),
        ("dnn_model", &f.dnn_model),
    ] {
        if v.is_empty() {
            return Err(DatasetError::Row {
                line,
                msg: format!("column `{name}` must not be empty"),
            });
        }
    }
    Ok(f)
}

fn check_header(headers: &csv::StringRecord, want_energy: bool) -> Result<bool, DatasetError> {
    let found: Vec<&str> = headers.iter().map(|h| h.trim()).collect();
    let full: Vec<&str> = DATASET_HEADER.to_vec();
    let feature_only = &DATASET_HEADER[..12];
    if found == full {
        return Ok(true);
    }
    if !want_energy && found == feature_only {
        return Ok(false);
    }
    let expected = if want_energy {
        full.join(",")
    } else {
        format!("{} (energy_j optional)", feature_only.join(","))
    };
    Err(DatasetError::Header {
        expected,
        found: found.join(","),
    })
}

/// Reads a full dataset (features plus energy) from CSV.
pub fn load_records(reader: impl io::Read) -> Result<Vec<CycleRecord>, DatasetError> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(rdr.headers()?, true)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let features = features_from_record(&rec, line)?;
        let energy_j: f64 = parse_field(&rec, 12, line)?;
        if !energy_j.is_finite() || energy_j <= 0.0 {
            return Err(DatasetError::Row {
                line,
                msg: format!("column `energy_j` must be finite and positive, got {energy_j}"),
            });
        }
        out.push(CycleRecord { features, energy_j });
    }
    if out.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(out)
}

/// Streaming reader over query rows: validates the header up front, then
/// yields one [`CycleFeatures`] per row without buffering the whole file.
/// The trailing `energy_j` column is optional and ignored when present.
pub struct QueryReader<R: io::Read> {
    inner: csv::StringRecordsIntoIter<R>,
}

impl<R: io::Read> QueryReader<R> {
    pub fn new(reader: R) -> Result<Self, DatasetError> {
        let mut rdr = csv::Reader::from_reader(reader);
        check_header(rdr.headers()?, false)?;
        Ok(QueryReader {
            inner: rdr.into_records(),
        })
    }
}

impl<R: io::Read> Iterator for QueryReader<R> {
    type Item = Result<CycleFeatures, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = match self.inner.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(e.into())),
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        Some(features_from_record(&rec, line))
    }
}

/// Reads prediction queries: the same layout as [`load_records`] but the
/// trailing `energy_j` column is optional and ignored when present.
pub fn load_queries(reader: impl io::Read) -> Result<Vec<CycleFeatures>, DatasetError> {
    let out = QueryReader::new(reader)?.collect::<Result<Vec<_>, _>>()?;
    if out.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(out)
}

/// Writes records in the canonical CSV layout.
pub fn write_records(writer: impl io::Write, records: &[CycleRecord]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DATASET_HEADER)?;
    for r in records {
        let f = &r.features;
        w.write_record(&[
            f.soc.clone(),
            f.cpu_freq_ghz.to_string(),
            f.cores.to_string(),
            f.ram_gb.to_string(),
            f.source.clone(),
            f.threads.to_string(),
            f.app_type.clone(),
            f.dnn_model.clone(),
            f.dnn_layers.to_string(),
            f.memory_mb.to_string(),
            f.processing_ms.to_string(),
            f.inference_ms.to_string(),
            r.energy_j.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
