//! Power-monitor capture handling: parse power and latency CSVs, align the
//! device clock to the monitor clock via a marker pulse, estimate base power,
//! and integrate net per-segment and per-cycle energy.
//!
//! Power is carried in milliwatts and time in seconds throughout; integrated
//! energy is reported in joules. All operations are pure functions over
//! immutable inputs.

use std::collections::BTreeMap;
use std::io::Read;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: expected '{expected}', found '{found}'")]
    Header { expected: String, found: String },
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("empty input: no samples")]
    Empty,
    #[error("a trace needs at least 2 samples, found {0}")]
    TooFewSamples(usize),
    #[error("quiet window [{start_s}, {end_s}] does not lie inside the trace")]
    WindowOutsideTrace { start_s: f64, end_s: f64 },
    #[error("quiet window holds {found} samples, need at least {need}")]
    TooFewWindowSamples { found: usize, need: usize },
    #[error("no marker pulse found in the trace")]
    NoMarkerPulse,
    #[error("marker is ambiguous: the trace starts mid-pulse and {} candidates exist (starts at {:?} s)", .candidate_starts_s.len(), .candidate_starts_s)]
    AmbiguousMarker { candidate_starts_s: Vec<f64> },
    #[error("no segment labeled '{label}' in any cycle log")]
    NoMarkerInLog { label: String },
    #[error("integration interval [{start_s}, {end_s}] is invalid (start must precede end)")]
    BadInterval { start_s: f64, end_s: f64 },
    #[error("interval [{start_s}, {end_s}] lies outside the trace span [{span_start_s}, {span_end_s}]")]
    IntervalOutsideTrace {
        start_s: f64,
        end_s: f64,
        span_start_s: f64,
        span_end_s: f64,
    },
    #[error("cycle {cycle_id} segment '{label}' lies outside the trace after alignment")]
    SegmentOutsideTrace { cycle_id: u64, label: String },
}

/// One monitor sample: capture-relative time and instantaneous power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSample {
    pub t_s: f64,
    pub power_mw: f64,
}

/// An ordered power capture with strictly increasing timestamps.
#[derive(Debug, Clone)]
pub struct PowerTrace {
    samples: Vec<PowerSample>,
    nominal_interval_s: f64,
}

impl PowerTrace {
    /// Validates and wraps raw samples. Requires at least two samples,
    /// strictly increasing finite timestamps, and finite non-negative power.
    /// The nominal sampling interval is the median timestamp spacing.
    pub fn new(samples: Vec<PowerSample>) -> Result<Self, TraceError> {
        if samples.len() < 2 {
            return Err(TraceError::TooFewSamples(samples.len()));
        }
        for (i, s) in samples.iter().enumerate() {
            let line = i as u64 + 1;
            if !s.t_s.is_finite() {
                return Err(TraceError::Row {
                    line,
                    msg: format!("non-finite timestamp {}", s.t_s),
                });
            }
            if !s.power_mw.is_finite() || s.power_mw < 0.0 {
                return Err(TraceError::Row {
                    line,
                    msg: format!("power must be finite and non-negative, got {}", s.power_mw),
                });
            }
            if i > 0 && s.t_s <= samples[i - 1].t_s {
                return Err(TraceError::Row {
                    line,
                    msg: format!(
                        "timestamps must be strictly increasing ({} after {})",
                        s.t_s,
                        samples[i - 1].t_s
                    ),
                });
            }
        }
        let mut gaps: Vec<f64> = samples.windows(2).map(|w| w[1].t_s - w[0].t_s).collect();
        gaps.sort_by(|a, b| a.partial_cmp(b).expect("finite gaps"));
        let nominal_interval_s = if gaps.len() % 2 == 1 {
            gaps[gaps.len() / 2]
        } else {
            0.5 * (gaps[gaps.len() / 2 - 1] + gaps[gaps.len() / 2])
        };
        Ok(PowerTrace {
            samples,
            nominal_interval_s,
        })
    }

    pub fn samples(&self) -> &[PowerSample] {
        &self.samples
    }

    pub fn nominal_interval_s(&self) -> f64 {
        self.nominal_interval_s
    }

    /// First and last timestamp.
    pub fn span(&self) -> (f64, f64) {
        (
            self.samples[0].t_s,
            self.samples[self.samples.len() - 1].t_s,
        )
    }
}

/// Column layout of a power CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerForm {
    /// Header `t_s,power_mW`.
    PowerMw,
    /// Header `t_s,current_mA,voltage_V`; power is their product.
    CurrentVoltage,
}

fn row_f64(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<f64, TraceError> {
    let raw = rec.get(idx).ok_or_else(|| TraceError::Row {
        line,
        msg: format!("missing {name} field"),
    })?;
    raw.trim().parse::<f64>().map_err(|_| TraceError::Row {
        line,
        msg: format!("cannot parse {name} value '{raw}'"),
    })
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Parses a power capture in either supported column form.
pub fn parse_power_csv(input: impl Read, form: PowerForm) -> Result<PowerTrace, TraceError> {
    let expected = match form {
        PowerForm::PowerMw => "t_s,power_mW",
        PowerForm::CurrentVoltage => "t_s,current_mA,voltage_V",
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let headers = rdr.headers()?.clone();
    let found = headers.iter().collect::<Vec<_>>().join(",");
    if found != expected {
        return Err(TraceError::Header {
            expected: expected.to_string(),
            found,
        });
    }
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let t_s = row_f64(&rec, 0, "t_s", line)?;
        let power_mw = match form {
            PowerForm::PowerMw => row_f64(&rec, 1, "power_mW", line)?,
            PowerForm::CurrentVoltage => {
                row_f64(&rec, 1, "current_mA", line)? * row_f64(&rec, 2, "voltage_V", line)?
            }
        };
        if !power_mw.is_finite() || power_mw < 0.0 {
            return Err(TraceError::Row {
                line,
                msg: format!("power must be finite and non-negative, got {power_mw}"),
            });
        }
        if let Some(prev) = samples.last() {
            let prev: &PowerSample = prev;
            if t_s <= prev.t_s {
                return Err(TraceError::Row {
                    line,
                    msg: format!(
                        "timestamps must be strictly increasing ({} after {})",
                        t_s, prev.t_s
                    ),
                });
            }
        }
        samples.push(PowerSample { t_s, power_mw });
    }
    if samples.is_empty() {
        return Err(TraceError::Empty);
    }
    PowerTrace::new(samples)
}

/// Clock a latency log was recorded on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockDomain {
    Device,
    Monitor,
}

/// One labeled time span of an application cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMark {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// All segment marks of one application cycle, ordered by start time.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleLog {
    pub cycle_id: u64,
    pub marks: Vec<SegmentMark>,
    pub clock: ClockDomain,
}

const LATENCY_HEADER: &str = "cycle_id,segment,start_s,end_s,clock";

/// Parses a latency log CSV into one [`CycleLog`] per cycle id, ordered by
/// cycle id with marks sorted by start time. A header-only file yields an
/// empty collection. Timestamps may be negative (clocks are relative).
pub fn parse_latency_csv(input: impl Read) -> Result<Vec<CycleLog>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let headers = rdr.headers()?.clone();
    let found = headers.iter().collect::<Vec<_>>().join(",");
    if found != LATENCY_HEADER {
        return Err(TraceError::Header {
            expected: LATENCY_HEADER.to_string(),
            found,
        });
    }
    let mut cycles: BTreeMap<u64, CycleLog> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let cycle_id: u64 = rec
            .get(0)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| TraceError::Row {
                line,
                msg: format!("cannot parse cycle_id '{}'", rec.get(0).unwrap_or("")),
            })?;
        let label = rec.get(1).unwrap_or("").trim().to_string();
        if label.is_empty() {
            return Err(TraceError::Row {
                line,
                msg: "segment label must be non-empty".to_string(),
            });
        }
        let start_s = row_f64(&rec, 2, "start_s", line)?;
        let end_s = row_f64(&rec, 3, "end_s", line)?;
        if !start_s.is_finite() || !end_s.is_finite() || start_s >= end_s {
            return Err(TraceError::Row {
                line,
                msg: format!("segment '{label}' needs finite start < end, got [{start_s}, {end_s}]"),
            });
        }
        let clock = match rec.get(4).unwrap_or("").trim() {
            "device" => ClockDomain::Device,
            "monitor" => ClockDomain::Monitor,
            other => {
                return Err(TraceError::Row {
                    line,
                    msg: format!("clock must be 'device' or 'monitor', got '{other}'"),
                })
            }
        };
        let entry = cycles.entry(cycle_id).or_insert_with(|| CycleLog {
            cycle_id,
            marks: Vec::new(),
            clock,
        });
        if entry.clock != clock {
            return Err(TraceError::Row {
                line,
                msg: format!("cycle {cycle_id} mixes device and monitor clocks"),
            });
        }
        entry.marks.push(SegmentMark {
            label,
            start_s,
            end_s,
        });
    }
    for log in cycles.values_mut() {
        log.marks
            .sort_by(|a, b| a.start_s.partial_cmp(&b.start_s).expect("finite starts"));
        for pair in log.marks.windows(2) {
            if pair[1].start_s < pair[0].end_s {
                return Err(TraceError::Row {
                    line: 0,
                    msg: format!(
                        "cycle {} segments '{}' and '{}' overlap",
                        log.cycle_id, pair[0].label, pair[1].label
                    ),
                });
            }
        }
    }
    Ok(cycles.into_values().collect())
}

/// Median power over a quiet window; the median makes the estimate robust to
/// stray spikes. The window must lie inside the trace and hold at least
/// `MIN_BASE_SAMPLES` samples.
pub const MIN_BASE_SAMPLES: usize = 10;

pub fn estimate_base_power(
    trace: &PowerTrace,
    window: (f64, f64),
) -> Result<f64, TraceError> {
    let (w0, w1) = window;
    let (t0, t1) = trace.span();
    if !(w0 < w1) || w0 < t0 || w1 > t1 {
        return Err(TraceError::WindowOutsideTrace {
            start_s: w0,
            end_s: w1,
        });
    }
    let mut vals: Vec<f64> = trace
        .samples()
        .iter()
        .filter(|s| s.t_s >= w0 && s.t_s <= w1)
        .map(|s| s.power_mw)
        .collect();
    if vals.len() < MIN_BASE_SAMPLES {
        return Err(TraceError::TooFewWindowSamples {
            found: vals.len(),
            need: MIN_BASE_SAMPLES,
        });
    }
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite powers"));
    let mid = vals.len() / 2;
    Ok(if vals.len() % 2 == 1 {
        vals[mid]
    } else {
        0.5 * (vals[mid - 1] + vals[mid])
    })
}

/// How the alignment marker pulse is recognized.
#[derive(Debug, Clone)]
pub struct MarkerSpec {
    pub base_power_mw: f64,
    /// Pulse must exceed base power by this much.
    pub threshold_above_base_mw: f64,
    /// Pulse must stay above the cut for at least this long.
    pub min_duration_s: f64,
    /// Segment label carrying the marker's device-clock time in the logs.
    pub label: String,
}

impl MarkerSpec {
    pub fn new(base_power_mw: f64) -> Self {
        MarkerSpec {
            base_power_mw,
            threshold_above_base_mw: 100.0,
            min_duration_s: 0.05,
            label: "marker".to_string(),
        }
    }
}

/// One contiguous run of samples above the marker cut.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerPulse {
    pub start_s: f64,
    pub end_s: f64,
}

/// All maximal runs of samples at or above base + threshold lasting at least
/// the minimum duration, in time order.
pub fn detect_marker_pulses(trace: &PowerTrace, spec: &MarkerSpec) -> Vec<MarkerPulse> {
    let cut = spec.base_power_mw + spec.threshold_above_base_mw;
    let mut pulses = Vec::new();
    let mut run_start: Option<f64> = None;
    let mut last_t = 0.0;
    for s in trace.samples() {
        if s.power_mw >= cut {
            if run_start.is_none() {
                run_start = Some(s.t_s);
            }
            last_t = s.t_s;
        } else if let Some(start) = run_start.take() {
            if last_t - start >= spec.min_duration_s {
                pulses.push(MarkerPulse {
                    start_s: start,
                    end_s: last_t,
                });
            }
        }
    }
    if let Some(start) = run_start {
        if last_t - start >= spec.min_duration_s {
            pulses.push(MarkerPulse {
                start_s: start,
                end_s: last_t,
            });
        }
    }
    pulses
}

/// Estimates the device-to-monitor clock offset from the marker pulse, so
/// that `device_time + offset = monitor_time`.
///
/// The marker is taken to be the first detected pulse: the marker runs before
/// the application, so the first rising edge is it. If the trace starts
/// already above the cut, the true first edge was not captured; with more
/// than one candidate the choice is then ambiguous and an error reports all
/// candidate starts.
pub fn align_clocks(
    trace: &PowerTrace,
    logs: &[CycleLog],
    spec: &MarkerSpec,
) -> Result<f64, TraceError> {
    let device_start = logs
        .iter()
        .flat_map(|l| l.marks.iter())
        .find(|m| m.label == spec.label)
        .map(|m| m.start_s)
        .ok_or_else(|| TraceError::NoMarkerInLog {
            label: spec.label.clone(),
        })?;
    let pulses = detect_marker_pulses(trace, spec);
    if pulses.is_empty() {
        return Err(TraceError::NoMarkerPulse);
    }
    let cut = spec.base_power_mw + spec.threshold_above_base_mw;
    let starts_mid_pulse = trace.samples()[0].power_mw >= cut;
    if starts_mid_pulse && pulses.len() > 1 {
        return Err(TraceError::AmbiguousMarker {
            candidate_starts_s: pulses.iter().map(|p| p.start_s).collect(),
        });
    }
    Ok(pulses[0].start_s - device_start)
}

#[derive(Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Power at an arbitrary time inside the span, linearly interpolated.
fn power_at(samples: &[PowerSample], t: f64) -> f64 {
    let after = samples.partition_point(|s| s.t_s <= t);
    let i = after - 1;
    if after == samples.len() || samples[i].t_s == t {
        return samples[i].power_mw;
    }
    let a = samples[i];
    let b = samples[after];
    a.power_mw + (t - a.t_s) / (b.t_s - a.t_s) * (b.power_mw - a.power_mw)
}

/// Trapezoidal integral of power over `[start_s, end_s]` in joules, with
/// linear interpolation at both boundaries. Exact (to rounding) on
/// piecewise-linear power with breakpoints on samples.
pub fn integrate_energy_j(
    trace: &PowerTrace,
    start_s: f64,
    end_s: f64,
) -> Result<f64, TraceError> {
    if !(start_s < end_s) {
        return Err(TraceError::BadInterval { start_s, end_s });
    }
    let (t0, t1) = trace.span();
    if start_s < t0 || end_s > t1 {
        return Err(TraceError::IntervalOutsideTrace {
            start_s,
            end_s,
            span_start_s: t0,
            span_end_s: t1,
        });
    }
    let s = trace.samples();
    let p_start = power_at(s, start_s);
    let p_end = power_at(s, end_s);
    let first_in = s.partition_point(|x| x.t_s < start_s);
    let last_in = s.partition_point(|x| x.t_s <= end_s) - 1;
    let mut acc = Kahan::default();
    if last_in < first_in {
        // Both endpoints fall between the same adjacent samples.
        acc.add((end_s - start_s) * 0.5 * (p_start + p_end));
    } else {
        acc.add((s[first_in].t_s - start_s) * 0.5 * (p_start + s[first_in].power_mw));
        for k in first_in..last_in {
            acc.add((s[k + 1].t_s - s[k].t_s) * 0.5 * (s[k].power_mw + s[k + 1].power_mw));
        }
        acc.add((end_s - s[last_in].t_s) * 0.5 * (s[last_in].power_mw + p_end));
    }
    Ok(acc.sum / 1000.0)
}

/// Net energy of one application cycle, after base-power subtraction.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleEnergy {
    pub cycle_id: u64,
    /// Net joules per segment label; duplicate labels within a cycle merge.
    pub per_segment_j: BTreeMap<String, f64>,
    pub total_j: f64,
    pub base_power_mw: f64,
    /// Segments whose net energy fell below zero (noise near base power) and
    /// were clamped to zero.
    pub clamped_segments: usize,
}

/// Integrates every segment of every cycle, subtracting base power over the
/// segment duration and clamping negative nets to zero. Device-clock logs are
/// shifted by `offset_s` onto the monitor clock first.
pub fn cycle_energies(
    trace: &PowerTrace,
    logs: &[CycleLog],
    base_power_mw: f64,
    offset_s: f64,
) -> Result<Vec<CycleEnergy>, TraceError> {
    let (t0, t1) = trace.span();
    let mut out = Vec::with_capacity(logs.len());
    for log in logs {
        let shift = match log.clock {
            ClockDomain::Device => offset_s,
            ClockDomain::Monitor => 0.0,
        };
        let mut per_segment_j: BTreeMap<String, f64> = BTreeMap::new();
        let mut clamped_segments = 0usize;
        for m in &log.marks {
            let a = m.start_s + shift;
            let b = m.end_s + shift;
            if a < t0 || b > t1 {
                return Err(TraceError::SegmentOutsideTrace {
                    cycle_id: log.cycle_id,
                    label: m.label.clone(),
                });
            }
            let gross = integrate_energy_j(trace, a, b)?;
            let mut net = gross - base_power_mw * (b - a) / 1000.0;
            if net < 0.0 {
                net = 0.0;
                clamped_segments += 1;
            }
            *per_segment_j.entry(m.label.clone()).or_insert(0.0) += net;
        }
        let mut total = Kahan::default();
        for v in per_segment_j.values() {
            total.add(*v);
        }
        out.push(CycleEnergy {
            cycle_id: log.cycle_id,
            per_segment_j,
            total_j: total.sum,
            base_power_mw,
            clamped_segments,
        });
    }
    Ok(out)
}
