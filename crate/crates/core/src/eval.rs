//! Evaluation metrics and latency measurement.
//!
//! The binary report counts *windows*: a false positive is one normal
//! window flagged oscillation, a missed event one oscillation window
//! flagged normal. Every wrong prediction is one or the other, so
//! `accuracy = (n - false_positives - missed_events) / n` holds
//! exactly.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::normalize_window;
use crate::error::Error;
use crate::models::TrainedModel;
use crate::Result;

/// Per-window binary classification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub accuracy: f64,
    /// Normal windows flagged oscillation.
    pub false_positives: usize,
    /// Oscillation windows flagged normal.
    pub missed_events: usize,
    /// `confusion[truth][predicted]`, class order {0 oscillation,
    /// 1 normal}.
    pub confusion: [[usize; 2]; 2],
}

/// Compares aligned per-window predictions against truth; `true`
/// means oscillation on both sides.
pub fn compute_metrics(predicted_osc: &[bool], truth_osc: &[bool]) -> Result<EvalReport> {
    if predicted_osc.len() != truth_osc.len() {
        return Err(Error::data(format!(
            "prediction/truth length mismatch: {} vs {}",
            predicted_osc.len(),
            truth_osc.len()
        )));
    }
    if truth_osc.is_empty() {
        return Err(Error::data("no samples to evaluate"));
    }
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &t) in predicted_osc.iter().zip(truth_osc) {
        confusion[usize::from(!t)][usize::from(!p)] += 1;
    }
    let n = truth_osc.len();
    let false_positives = confusion[1][0];
    let missed_events = confusion[0][1];
    Ok(EvalReport {
        n_samples: n,
        accuracy: (n - false_positives - missed_events) as f64 / n as f64,
        false_positives,
        missed_events,
        confusion,
    })
}

/// Report for the wider classification head, where class 0 is normal
/// and classes 1..n are oscillation frequencies in whole Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassReport {
    pub n_samples: usize,
    pub n_classes: usize,
    pub top1_accuracy: f64,
    /// Fraction of predictions landing on the true class or an
    /// adjacent frequency class (±1 Hz). Normal must match exactly;
    /// normal/oscillation confusions are never adjacent.
    pub within_one_hz: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn multiclass_metrics(
    predicted: &[usize],
    truth: &[usize],
    n_classes: usize,
) -> Result<MulticlassReport> {
    if predicted.len() != truth.len() {
        return Err(Error::data(format!(
            "prediction/truth length mismatch: {} vs {}",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::data("no samples to evaluate"));
    }
    if let Some(&c) = predicted.iter().chain(truth).find(|&&c| c >= n_classes) {
        return Err(Error::data(format!("class {c} out of range for {n_classes} classes")));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    let mut top1 = 0usize;
    let mut adjacent = 0usize;
    for (&p, &t) in predicted.iter().zip(truth) {
        confusion[t][p] += 1;
        if p == t {
            top1 += 1;
            adjacent += 1;
        } else if p != 0 && t != 0 && p.abs_diff(t) == 1 {
            adjacent += 1;
        }
    }
    let n = truth.len();
    Ok(MulticlassReport {
        n_samples: n,
        n_classes,
        top1_accuracy: top1 as f64 / n as f64,
        within_one_hz: adjacent as f64 / n as f64,
        confusion,
    })
}

/// Inference latency over pre-generated windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub n_predictions: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub p99_s: f64,
    pub hardware: String,
}

/// CPU model string, best effort.
pub fn hardware_descriptor() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS))
}

/// Times `predict_proba` alone over `n` distinct pre-generated
/// windows on the monotonic clock; `warmup` untimed iterations come
/// first. Input preparation and normalization are excluded — this
/// measures the model, not the plumbing.
pub fn bench_latency(model: &TrainedModel, n: usize, warmup: usize) -> Result<LatencyReport> {
    bench(model, n, warmup, false)
}

/// Like [`bench_latency`] but times normalization together with
/// inference, approximating the full per-window cost once a stream
/// buffer is ready.
pub fn bench_latency_end_to_end(
    model: &TrainedModel,
    n: usize,
    warmup: usize,
) -> Result<LatencyReport> {
    bench(model, n, warmup, true)
}

fn bench(model: &TrainedModel, n: usize, warmup: usize, normalize: bool) -> Result<LatencyReport> {
    if n == 0 {
        return Err(Error::config("n", "need at least one timed prediction"));
    }
    let len = model.spec.input_len * model.spec.input_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(0x4245_4E43);
    let windows: Vec<Vec<f64>> = (0..n.max(warmup))
        .map(|_| {
            (0..len)
                .map(|_| 60.0 + rng.gen_range(-0.5..0.5))
                .collect()
        })
        .collect();
    let run = |w: &[f64]| -> Result<Vec<f64>> {
        if normalize {
            model.predict_proba(&normalize_window(w))
        } else {
            model.predict_proba(w)
        }
    };
    for w in windows.iter().take(warmup) {
        run(w)?;
    }
    let mut times = Vec::with_capacity(n);
    for w in windows.iter().take(n) {
        let t0 = Instant::now();
        let probs = run(w)?;
        let dt = t0.elapsed().as_secs_f64();
        // Keep the result observable so the call cannot be elided.
        if !probs.iter().all(|p| p.is_finite()) {
            return Err(Error::numeric("non-finite probability during benchmark"));
        }
        times.push(dt);
    }
    times.sort_by(f64::total_cmp);
    let mean = times.iter().sum::<f64>() / n as f64;
    let p99_idx = ((n as f64 * 0.99).ceil() as usize).max(1) - 1;
    Ok(LatencyReport {
        n_predictions: n,
        mean_s: mean,
        median_s: times[(n - 1) / 2],
        p99_s: times[p99_idx],
        hardware: hardware_descriptor(),
    })
}
