//! `oscdet` — generate, train, fine-tune, detect, evaluate, benchmark.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error
//! (unreadable input, missing terminal, bad model file), 3 numeric
//! failure (training divergence).

use std::path::PathBuf;
use std::process;

use clap::{Parser, Subcommand, ValueEnum};
use oscdet_core::Error;

mod commands;
mod follow;

#[derive(Parser)]
#[command(name = "oscdet", version, about = "Forced-oscillation detection on PMU frequency streams")]
struct Cli {
    /// Output format: human-readable text or line-delimited JSON records.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Records,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace corpus: one CSV and one .ann
    /// annotation sidecar per trace.
    Gen(GenArgs),
    /// Train a model on a directory of CSV traces with sidecars.
    Train(TrainArgs),
    /// Continue training an existing model on additional traces.
    Finetune(FinetuneArgs),
    /// Stream a trace through a model: per-second flags plus
    /// debounced event summaries.
    Detect(DetectArgs),
    /// Score a model against annotated ground truth.
    Eval(EvalArgs),
    /// Measure single-window inference latency.
    Bench(BenchArgs),
}

#[derive(clap::Args)]
struct GenArgs {
    /// TOML file overriding generator defaults (duration_s,
    /// sample_rate_hz, base_frequency_hz, noise_sigma, [filter]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Inclusive whole-Hz sweep range, e.g. 1:14.
    #[arg(long, default_value = "1:14")]
    sweep: String,
    /// Oscillation traces per swept frequency.
    #[arg(long, default_value_t = 3)]
    n_per_class: usize,
    /// Oscillation-free traces appended to the corpus.
    #[arg(long, default_value_t = 3)]
    n_normal: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Conv1d,
    Dense,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Directory of CSV traces; a trace without a .ann sidecar is
    /// treated as oscillation-free.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Arch::Conv1d)]
    arch: Arch,
    /// Output classes: 2 (oscillation/normal) or 16 (normal + 1..15 Hz).
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    validation_ratio: Option<f64>,
    /// Early-stopping patience in epochs without validation improvement.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct FinetuneArgs {
    /// Existing model to continue from.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    /// Terminal (column) to read from the CSV.
    #[arg(long)]
    terminal: String,
    /// Tail the file as it grows instead of reading it once.
    #[arg(long)]
    follow: bool,
    /// Consecutive flags required to open or close an event.
    #[arg(long, default_value_t = 3)]
    debounce: usize,
    /// Seconds between emitted flags.
    #[arg(long, default_value_t = 1.0)]
    stride_s: f64,
    /// Nominal sample rate of the stream.
    #[arg(long, default_value_t = 30.0)]
    rate: f64,
    /// In follow mode, exit after this long with no new data.
    #[arg(long, default_value_t = 10.0)]
    idle_timeout_s: f64,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    terminal: String,
    /// Ground-truth annotation sidecar.
    #[arg(long)]
    annotations: PathBuf,
    /// Evaluate on a balanced subset: this many minutes per class.
    #[arg(long)]
    balanced_minutes: Option<f64>,
    #[arg(long, default_value_t = 30.0)]
    rate: f64,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    /// Timed predictions.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Untimed warm-up predictions.
    #[arg(long, default_value_t = 50)]
    warmup: usize,
    /// Time normalization together with inference.
    #[arg(long)]
    end_to_end: bool,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version print to stdout and are successes;
            // everything else is a usage error.
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            process::exit(code);
        }
    };
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        process::exit(match e {
            Error::InvalidConfig { .. } => 1,
            Error::Data(_) | Error::ModelFile(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        });
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Gen(a) => commands::gen(a, cli.format),
        Command::Train(a) => commands::train(a, cli.format),
        Command::Finetune(a) => commands::finetune(a, cli.format),
        Command::Detect(a) => commands::detect(a, cli.format),
        Command::Eval(a) => commands::eval(a, cli.format),
        Command::Bench(a) => commands::bench(a, cli.format),
    }
}
