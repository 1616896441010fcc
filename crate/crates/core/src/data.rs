//! Window slicing, per-window normalization, labeling against
//! annotations, PMU CSV ingestion/replay, balanced evaluation-set
//! construction, and train/validation splitting.
//!
//! The unit of classification throughout is a [`Window`]: one second of
//! frequency samples (30 at the default rate) plus its start timestamp
//! and optional label. All transforms here are pure; ingestion is a
//! single streaming pass that keeps only the requested terminal's
//! column.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::siggen::{EventAnnotation, EventKind, TimeSeries};
use crate::Result;

/// Ground-truth or predicted class of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Oscillation { frequency_hz: f64 },
}

impl Label {
    /// Maps the label onto an `n_classes`-way output head.
    ///
    /// Binary (`n_classes == 2`): oscillation is class 0, normal is
    /// class 1. Wider heads put normal at class 0 and an oscillation at
    /// its frequency rounded to the nearest integer Hz (clamped to the
    /// head), so a 16-way head spans normal plus 1..=15 Hz.
    pub fn class_index(&self, n_classes: usize) -> usize {
        assert!(n_classes >= 2);
        match (self, n_classes) {
            (Label::Oscillation { .. }, 2) => 0,
            (Label::Normal, 2) => 1,
            (Label::Normal, _) => 0,
            (Label::Oscillation { frequency_hz }, n) => {
                (frequency_hz.round() as usize).clamp(1, n - 1)
            }
        }
    }

    pub fn is_oscillation(&self) -> bool {
        matches!(self, Label::Oscillation { .. })
    }
}

/// One classifier input: exactly W samples (W = sample_rate x window
/// length; 30 by default) with the epoch timestamp of the window start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub samples: Vec<f64>,
    pub t_start_epoch_s: f64,
    pub terminal_id: String,
    pub label: Option<Label>,
}

/// Per-window normalization method. Z-score is the default: it makes
/// windows invariant to per-terminal gain and offset, which matters
/// because different lines reflect the same oscillation at very
/// different amplitudes. Min-max is the documented alternative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMethod {
    #[default]
    ZScore,
    MinMax,
}

/// Z-score normalizes one raw window: `(x - mean) / std_pop`. A
/// constant window has no scale to recover, so it maps to all zeros.
pub fn normalize_window(raw: &[f64]) -> Vec<f64> {
    normalize_window_with(raw, NormMethod::ZScore)
}

pub fn normalize_window_with(raw: &[f64], method: NormMethod) -> Vec<f64> {
    match method {
        NormMethod::ZScore => {
            let n = raw.len() as f64;
            let mean = raw.iter().sum::<f64>() / n;
            let var = raw.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std == 0.0 || !std.is_finite() {
                return vec![0.0; raw.len()];
            }
            raw.iter().map(|x| (x - mean) / std).collect()
        }
        NormMethod::MinMax => {
            let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = max - min;
            if span == 0.0 || !span.is_finite() {
                return vec![0.0; raw.len()];
            }
            raw.iter().map(|x| (x - min) / span).collect()
        }
    }
}

/// One terminal's samples extracted from a PMU archive: epoch-stamped,
/// strictly increasing, with data holes listed in `gaps` and rejected
/// input rows counted in `skipped_rows`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalRecord {
    pub terminal_id: String,
    pub sample_rate_hz: f64,
    /// `(epoch seconds, frequency in Hz)` pairs.
    pub samples: Vec<(f64, f64)>,
    /// Spans `(t_before, t_after)` where consecutive kept samples are
    /// more than 1.2 sample periods apart.
    pub gaps: Vec<(f64, f64)>,
    pub skipped_rows: usize,
}

impl TerminalRecord {
    /// Wraps a uniformly sampled series for the windowing API.
    pub fn from_series(series: &TimeSeries, terminal_id: &str) -> Self {
        let samples = series
            .values
            .iter()
            .enumerate()
            .map(|(n, &v)| (series.t0_epoch_s + n as f64 / series.sample_rate_hz, v))
            .collect();
        TerminalRecord {
            terminal_id: terminal_id.to_string(),
            sample_rate_hz: series.sample_rate_hz,
            samples,
            gaps: Vec::new(),
            skipped_rows: 0,
        }
    }
}

/// Cuts a record into fixed-length windows on the time grid anchored at
/// the first sample: window k spans `[t0 + k*stride, ... + window_s)`.
///
/// A window is emitted only when it is complete and clean: exactly
/// `round(window_s * rate)` consecutive finite samples, the first
/// within 0.4 sample periods of the grid point, and no consecutive
/// pair more than 1.2 periods apart. Windows touching a gap are
/// dropped; their neighbors are kept. A series shorter than one window
/// yields an empty list.
pub fn slice_windows(rec: &TerminalRecord, window_s: f64, stride_s: f64) -> Result<Vec<Window>> {
    if !(window_s > 0.0) {
        return Err(Error::config("window_s", "must be positive"));
    }
    if !(stride_s > 0.0) {
        return Err(Error::config("stride_s", "must be positive"));
    }
    let period = 1.0 / rec.sample_rate_hz;
    let w = (window_s * rec.sample_rate_hz).round() as usize;
    if w == 0 {
        return Err(Error::config("window_s", "shorter than one sample period"));
    }
    let mut out = Vec::new();
    let samples = &rec.samples;
    if samples.len() < w {
        return Ok(out);
    }
    let t0 = samples[0].0;
    let mut start = 0usize;
    for k in 0.. {
        let grid_t = t0 + k as f64 * stride_s;
        while start < samples.len() && samples[start].0 < grid_t - 0.4 * period {
            start += 1;
        }
        if start + w > samples.len() {
            break;
        }
        let slab = &samples[start..start + w];
        let aligned = slab[0].0 <= grid_t + 0.4 * period;
        let contiguous = slab
            .windows(2)
            .all(|p| p[1].0 - p[0].0 > 0.0 && p[1].0 - p[0].0 <= 1.2 * period);
        let finite = slab.iter().all(|&(_, v)| v.is_finite());
        if aligned && contiguous && finite {
            out.push(Window {
                samples: slab.iter().map(|&(_, v)| v).collect(),
                t_start_epoch_s: grid_t,
                terminal_id: rec.terminal_id.clone(),
                label: None,
            });
        }
    }
    Ok(out)
}

/// Labels one window span against ground-truth annotations (times in
/// seconds relative to the same origin as `t_start_rel_s`).
///
/// The window is an oscillation iff at least half of its time span
/// lies inside a single annotation; the label carries that
/// annotation's frequency. Annotations must not overlap each other.
pub fn label_window(
    t_start_rel_s: f64,
    window_s: f64,
    annotations: &[EventAnnotation],
) -> Label {
    let w_end = t_start_rel_s + window_s;
    let mut best: Option<(f64, &EventAnnotation)> = None;
    for ann in annotations {
        let overlap = (w_end.min(ann.end_s) - t_start_rel_s.max(ann.start_s)).max(0.0);
        if best.map_or(true, |(b, _)| overlap > b) {
            best = Some((overlap, ann));
        }
    }
    match best {
        Some((overlap, ann)) if overlap >= 0.5 * window_s => {
            Label::Oscillation { frequency_hz: ann.frequency_hz }
        }
        _ => Label::Normal,
    }
}

/// Full per-trace pipeline: slice, label against the trace's own
/// annotations, normalize. This is the path from generated or replayed
/// series to classifier-ready windows.
pub fn labeled_windows(
    series: &TimeSeries,
    terminal_id: &str,
    window_s: f64,
    stride_s: f64,
    method: NormMethod,
) -> Result<Vec<Window>> {
    let rec = TerminalRecord::from_series(series, terminal_id);
    let mut windows = slice_windows(&rec, window_s, stride_s)?;
    for win in &mut windows {
        let rel = win.t_start_epoch_s - series.t0_epoch_s;
        win.label = Some(label_window(rel, window_s, &series.annotations));
        win.samples = normalize_window_with(&win.samples, method);
    }
    Ok(windows)
}

/// Where a dataset's windows came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Recorded,
    Mixed,
}

/// A set of windows in which every window is labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub windows: Vec<Window>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(windows: Vec<Window>, provenance: Provenance) -> Result<Self> {
        if let Some(i) = windows.iter().position(|w| w.label.is_none()) {
            return Err(Error::data(format!("window {i} is unlabeled")));
        }
        Ok(LabeledDataset { windows, provenance })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Histogram of labels under an `n_classes`-way head.
    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0usize; n_classes];
        for w in &self.windows {
            counts[w.label.unwrap().class_index(n_classes)] += 1;
        }
        counts
    }
}

/// Builds the balanced evaluation protocol: exactly
/// `minutes_per_class` of windows per binary class (120 each at the
/// 2-minute, 1-second-window default), taken earliest-first.
pub fn balanced_truncate(
    windows: &[Window],
    minutes_per_class: f64,
    window_s: f64,
    provenance: Provenance,
) -> Result<LabeledDataset> {
    if !(minutes_per_class > 0.0) {
        return Err(Error::config("minutes_per_class", "must be positive"));
    }
    let need = (minutes_per_class * 60.0 / window_s).round() as usize;
    let mut osc: Vec<&Window> = Vec::new();
    let mut normal: Vec<&Window> = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        match w.label {
            Some(l) if l.is_oscillation() => osc.push(w),
            Some(_) => normal.push(w),
            None => return Err(Error::data(format!("window {i} is unlabeled"))),
        }
    }
    let mut deficits = Vec::new();
    if osc.len() < need {
        deficits.push(format!("oscillation: need {need} windows, have {}", osc.len()));
    }
    if normal.len() < need {
        deficits.push(format!("normal: need {need} windows, have {}", normal.len()));
    }
    if !deficits.is_empty() {
        return Err(Error::data(deficits.join("; ")));
    }
    osc.sort_by(|a, b| a.t_start_epoch_s.total_cmp(&b.t_start_epoch_s));
    normal.sort_by(|a, b| a.t_start_epoch_s.total_cmp(&b.t_start_epoch_s));
    let picked = osc
        .into_iter()
        .take(need)
        .chain(normal.into_iter().take(need))
        .cloned()
        .collect();
    LabeledDataset::new(picked, provenance)
}

/// Stratum key for splitting: normal windows together, oscillation
/// windows by rounded frequency.
fn stratum_key(label: &Label) -> usize {
    match label {
        Label::Normal => 0,
        Label::Oscillation { frequency_hz } => (frequency_hz.round() as usize).max(1),
    }
}

/// Stratified train/validation split. The validation share of each
/// stratum is `round(n * ratio / (1 + ratio))` — the ratio is
/// validation relative to *training* size, so e.g. 14,955 windows at
/// ratio 0.25 split 11,964 / 2,991. Reproducible by seed; strata are
/// visited in key order.
pub fn split_train_val(
    dataset: &LabeledDataset,
    ratio: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config("ratio", format!("must be in (0, 1), got {ratio}")));
    }
    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, w) in dataset.windows.iter().enumerate() {
        strata.entry(stratum_key(&w.label.unwrap())).or_default().push(i);
    }
    for (key, idxs) in &strata {
        if idxs.len() < 2 {
            return Err(Error::data(format!(
                "stratum {key} has only {} window(s); need at least 2 to split",
                idxs.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (_, mut idxs) in strata {
        idxs.shuffle(&mut rng);
        let n_val = (idxs.len() as f64 * ratio / (1.0 + ratio)).round() as usize;
        for (pos, idx) in idxs.into_iter().enumerate() {
            let w = dataset.windows[idx].clone();
            if pos < n_val {
                val.push(w);
            } else {
                train.push(w);
            }
        }
    }
    Ok((
        LabeledDataset { windows: train, provenance: dataset.provenance },
        LabeledDataset { windows: val, provenance: dataset.provenance },
    ))
}

/// Renders an epoch timestamp in the PMU CSV wire format: RFC 3339
/// UTC at microsecond precision.
pub fn epoch_to_rfc3339_micros(t: f64) -> String {
    let ns = (t * 1e9).round() as i64;
    let secs = ns.div_euclid(1_000_000_000);
    let nanos = ns.rem_euclid(1_000_000_000) as u32;
    DateTime::<Utc>::from_timestamp(secs, nanos)
        .expect("timestamp out of chrono range")
        .to_rfc3339_opts(SecondsFormat::Micros, true)
}

/// Parses an RFC 3339 timestamp to epoch seconds; `None` when malformed.
pub fn rfc3339_to_epoch(s: &str) -> Option<f64> {
    let dt = DateTime::parse_from_rfc3339(s).ok()?;
    Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9)
}

/// Writes a series as a PMU CSV: header `timestamp,<terminal>`, one
/// row per sample, RFC 3339 timestamps at microsecond precision.
pub fn write_pmu_csv(path: &Path, terminal_id: &str, series: &TimeSeries) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(csv_err)?;
    wtr.write_record(["timestamp", terminal_id]).map_err(csv_err)?;
    for (n, &v) in series.values.iter().enumerate() {
        let t = series.t0_epoch_s + n as f64 / series.sample_rate_hz;
        wtr.write_record([epoch_to_rfc3339_micros(t), format!("{v}")]).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::data(format!("csv: {other:?}")),
    }
}

/// Streams one terminal's column out of a PMU CSV at the default
/// 30 Hz nominal rate. See [`ingest_pmu_csv_with_rate`].
pub fn ingest_pmu_csv(path: &Path, terminal_id: &str) -> Result<TerminalRecord> {
    ingest_pmu_csv_with_rate(path, terminal_id, 30.0)
}

/// Single-pass, bounded-memory extraction of `terminal_id`'s column.
///
/// Only the requested column is retained, so memory scales with one
/// terminal's sample count, not the file width. Rows that cannot be
/// used — bad timestamp, short row, empty or unparseable frequency
/// cell, non-finite value, out-of-order or early (< 0.8 periods)
/// timestamp — are counted in `skipped_rows` and skipped. A jump of
/// more than 1.2 periods between kept samples is recorded in `gaps`.
pub fn ingest_pmu_csv_with_rate(
    path: &Path,
    terminal_id: &str,
    nominal_rate_hz: f64,
) -> Result<TerminalRecord> {
    if !(nominal_rate_hz > 0.0) {
        return Err(Error::config("nominal_rate_hz", "must be positive"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::data(format!("cannot open {}: {e}", path.display())),
            _ => csv_err(e),
        })?;
    let headers = rdr.byte_headers().map_err(csv_err)?.clone();
    let mut fields = headers.iter().map(|f| String::from_utf8_lossy(f).into_owned());
    match fields.next() {
        Some(first) if first == "timestamp" => {}
        other => {
            return Err(Error::data(format!(
                "bad header: first column must be \"timestamp\", found {other:?}"
            )))
        }
    }
    let available: Vec<String> = fields.collect();
    let col = match available.iter().position(|h| h == terminal_id) {
        // Offset by one: column 0 is the timestamp.
        Some(i) => i + 1,
        None => {
            return Err(Error::data(format!(
                "terminal {terminal_id:?} not in file; available: {}",
                available.join(", ")
            )))
        }
    };
    let period = 1.0 / nominal_rate_hz;
    let mut rec = TerminalRecord {
        terminal_id: terminal_id.to_string(),
        sample_rate_hz: nominal_rate_hz,
        samples: Vec::new(),
        gaps: Vec::new(),
        skipped_rows: 0,
    };
    let mut row = csv::ByteRecord::new();
    while rdr.read_byte_record(&mut row).map_err(csv_err)? {
        let parsed = (|| {
            let ts = std::str::from_utf8(row.get(0)?).ok()?;
            let t = rfc3339_to_epoch(ts)?;
            let cell = std::str::from_utf8(row.get(col)?).ok()?.trim();
            if cell.is_empty() {
                return None;
            }
            let v: f64 = cell.parse().ok()?;
            v.is_finite().then_some((t, v))
        })();
        let Some((t, v)) = parsed else {
            rec.skipped_rows += 1;
            continue;
        };
        if let Some(&(prev_t, _)) = rec.samples.last() {
            let dt = t - prev_t;
            if dt < 0.8 * period {
                // Out of order or faster than the jitter tolerance
                // allows; keeping it would corrupt the window grid.
                rec.skipped_rows += 1;
                continue;
            }
            if dt > 1.2 * period {
                rec.gaps.push((prev_t, t));
            }
        }
        rec.samples.push((t, v));
    }
    Ok(rec)
}

/// Writes the annotation sidecar: one `start_s,end_s,frequency_hz,kind`
/// line per event, no header.
pub fn write_annotations(path: &Path, annotations: &[EventAnnotation]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for a in annotations {
        writeln!(f, "{},{},{},{}", a.start_s, a.end_s, a.frequency_hz, a.kind)?;
    }
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<Vec<EventAnnotation>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let parsed = (|| -> Option<EventAnnotation> {
            let [start, end, freq, kind] = parts.as_slice() else { return None };
            Some(EventAnnotation {
                start_s: start.trim().parse().ok()?,
                end_s: end.trim().parse().ok()?,
                frequency_hz: freq.trim().parse().ok()?,
                kind: EventKind::from_str(kind.trim()).ok()?,
            })
        })();
        match parsed {
            Some(a) => out.push(a),
            None => {
                return Err(Error::data(format!("annotation line {}: {line:?}", i + 1)))
            }
        }
    }
    Ok(out)
}
