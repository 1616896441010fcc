//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc};
use std::thread;

use serde::Deserialize;
use serde_json::json;

use oscdet_core::data::{
    balanced_truncate, ingest_pmu_csv_with_rate, label_window, normalize_window, read_annotations,
    slice_windows, write_annotations, write_pmu_csv, Provenance, Window,
};
use oscdet_core::detector::{DetectionEvent, EventCoalescer, FlagRecord, StreamState};
use oscdet_core::eval::{
    bench_latency, bench_latency_end_to_end, compute_metrics, multiclass_metrics, EvalReport,
    LatencyReport, MulticlassReport,
};
use oscdet_core::models::{
    build_conv1d_spec, build_dense_spec, fine_tune, load_model, oscillation_probability,
    save_model, train as train_model, PhaseMeta, TrainConfig, TrainedModel,
};
use oscdet_core::siggen::{
    generate_series, sweep_dataset, Envelope, SecondOrderParams, SignalConfig,
};
use oscdet_core::{Error, LabeledDataset, NormMethod};

use crate::{Arch, BenchArgs, DetectArgs, EvalArgs, FinetuneArgs, Format, GenArgs, TrainArgs};

type Result<T> = std::result::Result<T, Error>;

// --- gen ---------------------------------------------------------------

/// Generator knobs accepted in the TOML config; anything omitted keeps
/// its default.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenFile {
    duration_s: Option<f64>,
    sample_rate_hz: Option<f64>,
    base_frequency_hz: Option<f64>,
    noise_sigma: Option<f64>,
    filter: Option<FilterFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterFile {
    natural_frequency_hz: Option<f64>,
    damping_ratio: Option<f64>,
    dc_gain: Option<f64>,
}

fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let invalid = || Error::InvalidConfig {
        field: "sweep",
        reason: format!("`{s}` is not of the form lo:hi with 1 <= lo <= hi <= 14"),
    };
    let (lo, hi) = s.split_once(':').ok_or_else(invalid)?;
    let lo: usize = lo.trim().parse().map_err(|_| invalid())?;
    let hi: usize = hi.trim().parse().map_err(|_| invalid())?;
    if !(1 <= lo && lo <= hi && hi <= 14) {
        return Err(invalid());
    }
    Ok((lo..=hi).map(|f| f as f64).collect())
}

fn base_config(args: &GenArgs) -> Result<SignalConfig> {
    let mut cfg = SignalConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)?;
        let file: GenFile = toml::from_str(&text).map_err(|e| Error::InvalidConfig {
            field: "config",
            reason: e.to_string(),
        })?;
        if let Some(v) = file.duration_s {
            cfg.duration_s = v;
            // The sweep randomizes event placement per trace; these
            // only need to stay inside the shortened trace.
            cfg.osc_start_s = 0.4 * v;
            cfg.osc_end_s = 2.0 / 3.0 * v;
        }
        if let Some(v) = file.sample_rate_hz {
            cfg.sample_rate_hz = v;
        }
        if let Some(v) = file.base_frequency_hz {
            cfg.base_frequency_hz = v;
        }
        if let Some(v) = file.noise_sigma {
            cfg.noise_sigma = v;
        }
        if let Some(f) = file.filter {
            let d = SecondOrderParams::default();
            cfg.filter = SecondOrderParams {
                natural_frequency_hz: f.natural_frequency_hz.unwrap_or(d.natural_frequency_hz),
                damping_ratio: f.damping_ratio.unwrap_or(d.damping_ratio),
                dc_gain: f.dc_gain.unwrap_or(d.dc_gain),
            };
        }
        cfg.envelope = Envelope::for_duration(cfg.duration_s);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn gen(args: &GenArgs, fmt: Format) -> Result<()> {
    let freqs = parse_sweep(&args.sweep)?;
    let base = base_config(args)?;
    fs::create_dir_all(&args.out)?;

    let traces = sweep_dataset(&base, &freqs, args.n_per_class, args.seed)?;
    let mut written = 0usize;
    for (i, series) in traces.iter().enumerate() {
        let f = freqs[i / args.n_per_class];
        let k = i % args.n_per_class;
        let stem = format!("osc{:02}_{k:03}", f as usize);
        write_trace(&args.out, &stem, series, fmt)?;
        written += 1;
    }
    for k in 0..args.n_normal {
        let cfg = SignalConfig {
            osc_amplitude: 0.0,
            seed: args.seed.wrapping_add(1_000_000 + k as u64),
            ..base.clone()
        };
        let series = generate_series(&cfg)?;
        write_trace(&args.out, &format!("normal_{k:03}"), &series, fmt)?;
        written += 1;
    }
    eprintln!("wrote {written} traces to {}", args.out.display());
    Ok(())
}

fn write_trace(
    dir: &Path,
    stem: &str,
    series: &oscdet_core::TimeSeries,
    fmt: Format,
) -> Result<()> {
    let csv = dir.join(format!("{stem}.csv"));
    write_pmu_csv(&csv, stem, series)?;
    write_annotations(&csv.with_extension("ann"), &series.annotations)?;
    match fmt {
        Format::Text => match series.annotations.first() {
            Some(a) => println!(
                "{stem}.csv  {:.2} Hz  event {:.1}-{:.1} s",
                a.frequency_hz, a.start_s, a.end_s
            ),
            None => println!("{stem}.csv  normal"),
        },
        Format::Records => {
            let a = series.annotations.first();
            println!(
                "{}",
                json!({
                    "type": "trace",
                    "file": format!("{stem}.csv"),
                    "frequency_hz": a.map(|a| a.frequency_hz),
                    "event_start_s": a.map(|a| a.start_s),
                    "event_end_s": a.map(|a| a.end_s),
                })
            );
        }
    }
    Ok(())
}

// --- corpus loading ----------------------------------------------------

/// Loads every CSV trace in a directory into labeled, normalized
/// windows. The terminal name is the file stem; a missing `.ann`
/// sidecar means the trace has no events.
fn load_dir(dir: &Path, rate: f64) -> Result<LabeledDataset> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no .csv traces in {}", dir.display())));
    }
    let mut windows = Vec::new();
    for path in &files {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let ann_path = path.with_extension("ann");
        let anns = if ann_path.exists() { read_annotations(&ann_path)? } else { Vec::new() };
        windows.extend(labeled_from_csv(path, &stem, rate, &anns)?);
    }
    LabeledDataset::new(windows, Provenance::Synthetic)
}

fn labeled_from_csv(
    csv: &Path,
    terminal: &str,
    rate: f64,
    anns: &[oscdet_core::EventAnnotation],
) -> Result<Vec<Window>> {
    let rec = ingest_pmu_csv_with_rate(csv, terminal, rate)?;
    let t0 = rec
        .samples
        .first()
        .map(|&(t, _)| t)
        .ok_or_else(|| Error::Data(format!("{} holds no usable samples", csv.display())))?;
    let mut windows = slice_windows(&rec, 1.0, 1.0)?;
    for w in &mut windows {
        w.label = Some(label_window(w.t_start_epoch_s - t0, 1.0, anns));
        w.samples = normalize_window(&w.samples);
    }
    Ok(windows)
}

// --- train / finetune --------------------------------------------------

fn print_history(phase: &PhaseMeta, fmt: Format) {
    for s in &phase.history {
        match fmt {
            Format::Text => println!(
                "epoch {:>3}  train_loss {:.4}  train_acc {:.4}  val_loss {:.4}  val_acc {:.4}",
                s.epoch, s.train_loss, s.train_accuracy, s.val_loss, s.val_accuracy
            ),
            Format::Records => println!(
                "{}",
                json!({
                    "type": "epoch",
                    "epoch": s.epoch,
                    "train_loss": s.train_loss,
                    "train_accuracy": s.train_accuracy,
                    "val_loss": s.val_loss,
                    "val_accuracy": s.val_accuracy,
                })
            ),
        }
    }
}

fn print_model_summary(model: &TrainedModel, out: &Path, fmt: Format) {
    let phase = model.meta.phases.last();
    match fmt {
        Format::Text => println!(
            "model {}  parameters {}  best_epoch {}",
            out.display(),
            model.network.parameter_count(),
            phase
                .and_then(|p| p.best_epoch)
                .map_or_else(|| "-".into(), |e| e.to_string()),
        ),
        Format::Records => println!(
            "{}",
            json!({
                "type": "model",
                "path": out.display().to_string(),
                "parameters": model.network.parameter_count(),
                "best_epoch": phase.and_then(|p| p.best_epoch),
                "corpus_fingerprint": phase.map(|p| p.corpus_fingerprint.clone()),
            })
        ),
    }
}

pub fn train(args: &TrainArgs, fmt: Format) -> Result<()> {
    let dataset = load_dir(&args.data, 30.0)?;
    eprintln!("loaded {} windows from {}", dataset.len(), args.data.display());
    let spec = match args.arch {
        Arch::Conv1d => build_conv1d_spec(args.classes)?,
        Arch::Dense => {
            if args.classes != 2 {
                return Err(Error::InvalidConfig {
                    field: "classes",
                    reason: "the dense baseline is binary-only".into(),
                });
            }
            build_dense_spec()
        }
    };
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: args.epochs.unwrap_or(d.epochs),
        batch_size: args.batch_size.unwrap_or(d.batch_size),
        learning_rate: args.learning_rate.unwrap_or(d.learning_rate),
        validation_ratio: args.validation_ratio.unwrap_or(d.validation_ratio),
        patience: args.patience.unwrap_or(d.patience),
        seed: args.seed,
    };
    let model = train_model(&spec, &dataset, &cfg)?;
    if let Some(phase) = model.meta.phases.last() {
        print_history(phase, fmt);
    }
    save_model(&model, &args.out)?;
    print_model_summary(&model, &args.out, fmt);
    Ok(())
}

pub fn finetune(args: &FinetuneArgs, fmt: Format) -> Result<()> {
    let model = load_model(&args.model)?;
    let dataset = load_dir(&args.data, 30.0)?;
    eprintln!("loaded {} windows from {}", dataset.len(), args.data.display());
    let d = TrainConfig::fine_tune_defaults();
    let cfg = TrainConfig {
        epochs: args.epochs.unwrap_or(d.epochs),
        learning_rate: args.learning_rate.unwrap_or(d.learning_rate),
        seed: args.seed,
        ..d
    };
    let tuned = fine_tune(&model, &dataset, &cfg)?;
    if let Some(phase) = tuned.meta.phases.last() {
        print_history(phase, fmt);
    }
    save_model(&tuned, &args.out)?;
    print_model_summary(&tuned, &args.out, fmt);
    Ok(())
}

// --- detect ------------------------------------------------------------

fn print_flag(f: &FlagRecord, fmt: Format) {
    match fmt {
        Format::Text => println!(
            "{:.3},{},{:.6}",
            f.t_epoch_s, f.flag, f.oscillation_probability
        ),
        Format::Records => println!(
            "{}",
            json!({
                "type": "flag",
                "t_epoch_s": f.t_epoch_s,
                "flag": f.flag,
                "probability": f.oscillation_probability,
            })
        ),
    }
}

fn print_event(ev: &DetectionEvent, fmt: Format) {
    match fmt {
        Format::Text => {
            let end = ev.end_epoch_s.map_or(String::new(), |e| format!("{e:.3}"));
            let dur = ev.duration_s().map_or(String::new(), |d| format!("{d:.3}"));
            println!(
                "event,{:.3},{end},{dur},{:.6}",
                ev.start_epoch_s, ev.peak_probability
            );
        }
        Format::Records => println!(
            "{}",
            json!({
                "type": "event",
                "start": ev.start_epoch_s,
                "end": ev.end_epoch_s,
                "duration_s": ev.duration_s(),
                "peak_prob": ev.peak_probability,
                "window_count": ev.window_count,
                "dominant_class": ev.dominant_class,
            })
        ),
    }
}

pub fn detect(args: &DetectArgs, fmt: Format) -> Result<()> {
    let model = Arc::new(load_model(&args.model)?);
    let n_classes = model.spec.n_classes;
    let mut state = StreamState::new(model, args.rate, args.stride_s, NormMethod::ZScore)?;
    let mut coalescer = EventCoalescer::new(args.debounce, state.window_s(), n_classes)?;
    let mut n_flags = 0usize;
    let mut n_events = 0usize;
    let mut emit = |f: &FlagRecord, c: &mut EventCoalescer| {
        n_flags += 1;
        print_flag(f, fmt);
        if let Some(ev) = c.push(f) {
            n_events += 1;
            print_event(&ev, fmt);
        }
    };

    if args.follow {
        let (tx, rx) = mpsc::sync_channel::<(f64, f64)>(1024);
        let path = args.csv.clone();
        let terminal = args.terminal.clone();
        let idle = args.idle_timeout_s;
        let reader = thread::spawn(move || follow_reader(&path, &terminal, idle, tx));
        for (t, v) in rx {
            state.push_sample(t, v);
            while let Some(f) = state.step() {
                emit(&f, &mut coalescer);
            }
        }
        let skipped = reader.join().expect("reader thread panicked")?;
        if skipped > 0 {
            eprintln!("skipped {skipped} malformed rows");
        }
    } else {
        let rec = ingest_pmu_csv_with_rate(&args.csv, &args.terminal, args.rate)?;
        if rec.skipped_rows > 0 {
            eprintln!("skipped {} malformed or jittered rows", rec.skipped_rows);
        }
        for &(t, v) in &rec.samples {
            state.push_sample(t, v);
            while let Some(f) = state.step() {
                emit(&f, &mut coalescer);
            }
        }
    }
    if let Some(ev) = coalescer.finish() {
        n_events += 1;
        print_event(&ev, fmt);
    }
    eprintln!(
        "{n_flags} flags, {n_events} events ({} samples rejected, {} buffer resets)",
        state.rejected(),
        state.resets()
    );
    Ok(())
}

/// The producer half of follow mode: tails the CSV, parses rows for
/// one terminal, and hands samples over a bounded channel. Returns the
/// count of malformed rows skipped. Exits once the file has been quiet
/// for `idle_timeout_s` or the consumer hangs up.
fn follow_reader(
    path: &Path,
    terminal: &str,
    idle_timeout_s: f64,
    tx: mpsc::SyncSender<(f64, f64)>,
) -> Result<u64> {
    crate::follow::tail_terminal(path, terminal, idle_timeout_s, |t, v| {
        tx.send((t, v)).is_ok()
    })
}

// --- eval --------------------------------------------------------------

fn print_report(r: &EvalReport, fmt: Format) {
    match fmt {
        Format::Text => {
            println!("# per-window counts: false_positive = normal window flagged oscillation; missed_event = oscillation window flagged normal");
            println!("n_samples        {}", r.n_samples);
            println!("accuracy         {:.4}", r.accuracy);
            println!("false_positives  {}", r.false_positives);
            println!("missed_events    {}", r.missed_events);
            println!(
                "confusion        osc->osc {}  osc->normal {}  normal->osc {}  normal->normal {}",
                r.confusion[0][0], r.confusion[0][1], r.confusion[1][0], r.confusion[1][1]
            );
        }
        Format::Records => println!(
            "{}",
            json!({
                "type": "report",
                "n_samples": r.n_samples,
                "accuracy": r.accuracy,
                "false_positives": r.false_positives,
                "missed_events": r.missed_events,
                "confusion": r.confusion,
            })
        ),
    }
}

fn print_multiclass(r: &MulticlassReport, fmt: Format) {
    match fmt {
        Format::Text => {
            println!("top1_accuracy    {:.4}", r.top1_accuracy);
            println!("within_one_hz    {:.4}", r.within_one_hz);
        }
        Format::Records => println!(
            "{}",
            json!({
                "type": "multiclass",
                "n_samples": r.n_samples,
                "n_classes": r.n_classes,
                "top1_accuracy": r.top1_accuracy,
                "within_one_hz": r.within_one_hz,
            })
        ),
    }
}

pub fn eval(args: &EvalArgs, fmt: Format) -> Result<()> {
    let model = load_model(&args.model)?;
    let anns = read_annotations(&args.annotations)?;
    let windows = labeled_from_csv(&args.csv, &args.terminal, args.rate, &anns)?;
    let dataset = match args.balanced_minutes {
        Some(m) => balanced_truncate(&windows, m, 1.0, Provenance::Recorded)?,
        None => LabeledDataset::new(windows, Provenance::Recorded)?,
    };

    let n_classes = model.spec.n_classes;
    let mut pred_osc = Vec::with_capacity(dataset.len());
    let mut truth_osc = Vec::with_capacity(dataset.len());
    let mut pred_class = Vec::with_capacity(dataset.len());
    let mut truth_class = Vec::with_capacity(dataset.len());
    for w in &dataset.windows {
        let probs = model.predict_proba(&w.samples)?;
        let label = w.label.expect("dataset windows are labeled");
        pred_osc.push(oscillation_probability(&probs) > 0.5);
        truth_osc.push(label.is_oscillation());
        if n_classes > 2 {
            pred_class.push(model.predict_class(&w.samples)?);
            truth_class.push(label.class_index(n_classes));
        }
    }
    print_report(&compute_metrics(&pred_osc, &truth_osc)?, fmt);
    if n_classes > 2 {
        print_multiclass(&multiclass_metrics(&pred_class, &truth_class, n_classes)?, fmt);
    }
    Ok(())
}

// --- bench -------------------------------------------------------------

fn print_latency(r: &LatencyReport, fmt: Format) {
    match fmt {
        Format::Text => {
            println!("n_predictions  {}", r.n_predictions);
            println!("mean_ms        {:.4}", r.mean_s * 1e3);
            println!("median_ms      {:.4}", r.median_s * 1e3);
            println!("p99_ms         {:.4}", r.p99_s * 1e3);
            println!("hardware       {}", r.hardware);
        }
        Format::Records => println!(
            "{}",
            json!({
                "type": "latency",
                "n_predictions": r.n_predictions,
                "mean_s": r.mean_s,
                "median_s": r.median_s,
                "p99_s": r.p99_s,
                "hardware": r.hardware,
            })
        ),
    }
}

pub fn bench(args: &BenchArgs, fmt: Format) -> Result<()> {
    let model = load_model(&args.model)?;
    let report = if args.end_to_end {
        bench_latency_end_to_end(&model, args.n, args.warmup)?
    } else {
        bench_latency(&model, args.n, args.warmup)?
    };
    print_latency(&report, fmt);
    Ok(())
}
