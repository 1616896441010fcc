//! Detection of forced oscillations in PMU frequency streams.
//!
//! The crate covers the full pipeline: synthesis of labelled training
//! traces ([`siggen`]), a self-contained double-precision neural network
//! kernel ([`nn`]), model assembly, training and serialization
//! ([`models`]), windowing and CSV ingestion for recorded data ([`data`]),
//! streaming detection with debounced event extraction ([`detector`]),
//! and evaluation plus latency measurement ([`eval`]).
//!
//! All numeric work is `f64`. Every randomized step takes an explicit
//! seed, and a fixed seed reproduces results bit-for-bit within one
//! build.

pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod siggen;

pub use data::{Label, LabeledDataset, NormMethod, TerminalRecord, Window};
pub use detector::{coalesce_events, DetectionEvent, EventCoalescer, FlagRecord, StreamState};
pub use error::Error;
pub use eval::{EvalReport, LatencyReport, MulticlassReport};
pub use models::{ModelSpec, TrainConfig, TrainedModel};
pub use nn::Tensor;
pub use siggen::{EventAnnotation, SecondOrderParams, SignalConfig, TimeSeries};

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
