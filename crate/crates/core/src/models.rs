//! Declarative model specs, the training loop, transfer fine-tuning,
//! prediction, and model file serialization.
//!
//! A [`ModelSpec`] is data; [`compile`] turns it into an initialized
//! [`Network`]. Training mutates a network through a single writer and
//! returns an immutable [`TrainedModel`] whose metadata records every
//! training phase run against it.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::Error;
use crate::nn::{self, AdamConfig, AdamState, Gradients, Network, StageOp, Tensor};
use crate::siggen::mix_seed;
use crate::Result;

/// One layer descriptor. The final `Dense` must emit the class count;
/// softmax is applied implicitly by the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d { channels: usize, kernel: usize, relu: bool },
    Dense { units: usize, relu: bool },
    MaxPool1d { width: usize },
    Dropout { rate: f64 },
    Flatten,
}

/// A complete architecture description: input geometry plus the layer
/// stack. Everything needed to rebuild the network skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input_len: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub n_classes: usize,
}

/// The convolutional stack: two Conv1D(64, k=3, ReLU), MaxPool1D(2),
/// Dropout(0.5), Flatten, Dense(100, ReLU), Dropout(0.5), Dense(n).
/// `n_classes` is 2 for detection or 16 for frequency identification.
pub fn build_conv1d_spec(n_classes: usize) -> Result<ModelSpec> {
    if n_classes != 2 && n_classes != 16 {
        return Err(Error::config(
            "n_classes",
            format!("conv model supports 2 or 16 classes, got {n_classes}"),
        ));
    }
    Ok(ModelSpec {
        name: if n_classes == 2 { "conv1d".into() } else { "conv1d-16".into() },
        input_len: 30,
        input_channels: 1,
        layers: vec![
            LayerSpec::Conv1d { channels: 64, kernel: 3, relu: true },
            LayerSpec::Conv1d { channels: 64, kernel: 3, relu: true },
            LayerSpec::MaxPool1d { width: 2 },
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 100, relu: true },
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense { units: n_classes, relu: false },
        ],
        n_classes,
    })
}

/// The dense baseline: Flatten, Dense(256, ReLU), Dropout(0.5),
/// Dense(64, ReLU), Dense(2).
pub fn build_dense_spec() -> ModelSpec {
    ModelSpec {
        name: "dense".into(),
        input_len: 30,
        input_channels: 1,
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 256, relu: true },
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense { units: 64, relu: true },
            LayerSpec::Dense { units: 2, relu: false },
        ],
        n_classes: 2,
    }
}

/// Materializes a spec into a network with freshly initialized
/// parameters: He-uniform for ReLU layers, Glorot-uniform for the
/// linear head, zero biases. Deterministic in `seed`.
pub fn compile(spec: &ModelSpec, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x494E_4954));
    let mut len = spec.input_len;
    let mut ch = spec.input_channels;
    let mut flat = false;
    let mut stages = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        match *layer {
            LayerSpec::Conv1d { channels, kernel, relu } => {
                let fan_in = kernel * ch;
                let fan_out = kernel * channels;
                let shape = [kernel, ch, channels];
                let weights = if relu {
                    nn::he_uniform(&shape, fan_in, &mut rng)
                } else {
                    nn::glorot_uniform(&shape, fan_in, fan_out, &mut rng)
                };
                stages.push(StageOp::Conv1d {
                    kernel: weights,
                    bias: Tensor::zeros(&[channels]),
                    relu,
                });
                len = len.saturating_sub(kernel - 1);
                ch = channels;
            }
            LayerSpec::Dense { units, relu } => {
                let fan_in = if flat { len * ch } else { len * ch };
                let shape = [fan_in, units];
                let weight = if relu {
                    nn::he_uniform(&shape, fan_in, &mut rng)
                } else {
                    nn::glorot_uniform(&shape, fan_in, units, &mut rng)
                };
                stages.push(StageOp::Dense { weight, bias: Tensor::zeros(&[units]), relu });
                len = units;
                ch = 1;
                flat = true;
            }
            LayerSpec::MaxPool1d { width } => {
                if width == 0 {
                    return Err(Error::config("layers", "pool width must be positive"));
                }
                stages.push(StageOp::MaxPool1d { width });
                len /= width;
            }
            LayerSpec::Dropout { rate } => {
                stages.push(StageOp::Dropout { rate });
            }
            LayerSpec::Flatten => {
                stages.push(StageOp::Flatten);
                len *= ch;
                ch = 1;
                flat = true;
            }
        }
    }
    let net = Network::new([spec.input_len, spec.input_channels], stages)?;
    if net.n_classes() != spec.n_classes {
        return Err(Error::config(
            "n_classes",
            format!("layer stack emits {}, spec declares {}", net.n_classes(), spec.n_classes),
        ));
    }
    Ok(net)
}

/// Training hyperparameters. `validation_ratio` is validation size
/// relative to training size (0.25 puts 1/5 of the data in
/// validation). Early stopping watches validation loss and tolerates
/// `patience` non-improving epochs before halting; the best epoch's
/// weights are restored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_ratio: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            validation_ratio: 0.25,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning defaults: as [`Default`], but a 0.1x learning rate
    /// so the continued optimization nudges rather than overwrites the
    /// base weights.
    pub fn fine_tune_defaults() -> Self {
        TrainConfig { learning_rate: 1e-4, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive and finite"));
        }
        if !(self.validation_ratio > 0.0 && self.validation_ratio < 1.0) {
            return Err(Error::config("validation_ratio", "must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Loss and accuracy for one epoch; training numbers are measured in
/// train mode (dropout active), validation in inference mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// One completed call to [`train`] or [`fine_tune`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMeta {
    pub kind: String,
    pub seed: u64,
    pub corpus_fingerprint: String,
    pub epochs_run: usize,
    /// Index into `history` of the epoch whose weights were kept.
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub phases: Vec<PhaseMeta>,
}

/// An immutable trained (or freshly initialized) model.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub network: Network,
    pub meta: TrainingMeta,
}

/// FNV-1a 64-bit running hash; used for the corpus fingerprint and the
/// model file checksum.
pub(crate) struct Fnv1a64(u64);

impl Fnv1a64 {
    pub(crate) fn new() -> Self {
        Fnv1a64(0xCBF2_9CE4_8422_2325)
    }

    pub(crate) fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

/// Order- and content-sensitive digest of a dataset, recorded in
/// training metadata so a model can be traced to what it saw.
pub fn corpus_fingerprint(dataset: &LabeledDataset) -> String {
    let mut h = Fnv1a64::new();
    h.update(&(dataset.windows.len() as u64).to_le_bytes());
    for w in &dataset.windows {
        h.update(&w.t_start_epoch_s.to_le_bytes());
        h.update(w.terminal_id.as_bytes());
        if let Some(label) = w.label {
            h.update(&(label.class_index(16) as u64).to_le_bytes());
        }
        for &v in &w.samples {
            h.update(&v.to_le_bytes());
        }
    }
    format!("{:016x}", h.finish())
}

fn check_window_shapes(spec: &ModelSpec, dataset: &LabeledDataset) -> Result<()> {
    let want = spec.input_len * spec.input_channels;
    for w in &dataset.windows {
        if w.samples.len() != want {
            return Err(Error::data(format!(
                "window has {} samples, model expects {want}",
                w.samples.len()
            )));
        }
    }
    Ok(())
}

fn accumulate(acc: &mut Gradients, g: &Gradients) {
    for (a, b) in acc.iter_mut().zip(g) {
        if let (Some((aw, ab)), Some((bw, bb))) = (a.as_mut(), b.as_ref()) {
            for (x, y) in aw.data_mut().iter_mut().zip(bw.data()) {
                *x += y;
            }
            for (x, y) in ab.data_mut().iter_mut().zip(bb.data()) {
                *x += y;
            }
        }
    }
}

fn scale(acc: &mut Gradients, k: f64) {
    for entry in acc.iter_mut().flatten() {
        for x in entry.0.data_mut() {
            *x *= k;
        }
        for x in entry.1.data_mut() {
            *x *= k;
        }
    }
}

fn zeroed_gradients(net: &Network) -> Gradients {
    net.stages()
        .iter()
        .map(|s| {
            s.params().map(|(w, b)| (Tensor::zeros(w.shape()), Tensor::zeros(b.shape())))
        })
        .collect()
}

fn input_tensor(samples: &[f64], channels: usize) -> Tensor {
    Tensor::from_vec(&[samples.len() / channels, channels], samples.to_vec())
        .expect("window already shape-checked")
}

fn evaluate(net: &Network, set: &LabeledDataset, n_classes: usize) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for w in &set.windows {
        let x = input_tensor(&w.samples, net.input_shape()[1]);
        let probs = net.forward_infer(&x);
        let class = w.label.unwrap().class_index(n_classes);
        loss += nn::cross_entropy(&probs, class);
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        if argmax == class {
            correct += 1;
        }
    }
    let n = set.windows.len().max(1) as f64;
    (loss / n, correct as f64 / n)
}

/// The shared epoch loop: seeded shuffling, batch-averaged gradients,
/// Adam updates, per-epoch validation, early stopping with best-weight
/// restore. Returns the history and the kept epoch.
fn run_phase(
    net: &mut Network,
    train: &LabeledDataset,
    val: &LabeledDataset,
    cfg: &TrainConfig,
    n_classes: usize,
) -> Result<(Vec<EpochStats>, Option<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5348_5546));
    let adam_cfg = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut adam = AdamState::new(net);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Network)> = None;
    let mut waited = 0usize;
    let mut order: Vec<usize> = (0..train.windows.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        let mut train_correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = zeroed_gradients(net);
            for &idx in batch {
                let w = &train.windows[idx];
                let x = input_tensor(&w.samples, net.input_shape()[1]);
                let cache = net.forward_train(&x, &mut rng);
                let class = w.label.unwrap().class_index(n_classes);
                let (loss, g) = net.backward(&cache, class);
                train_loss += loss;
                let argmax = cache
                    .probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap();
                if argmax == class {
                    train_correct += 1;
                }
                accumulate(&mut grads, &g);
            }
            scale(&mut grads, 1.0 / batch.len() as f64);
            adam.step(net, &grads, &adam_cfg);
        }
        let n_train = train.windows.len() as f64;
        let (val_loss, val_accuracy) = evaluate(net, val, n_classes);
        let stats = EpochStats {
            epoch,
            train_loss: train_loss / n_train,
            train_accuracy: train_correct as f64 / n_train,
            val_loss,
            val_accuracy,
        };
        if !stats.train_loss.is_finite() || !stats.val_loss.is_finite() {
            return Err(Error::numeric(format!(
                "loss diverged at epoch {epoch}: train {}, val {}",
                stats.train_loss, stats.val_loss
            )));
        }
        history.push(stats);
        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, epoch, net.clone()));
            waited = 0;
        } else {
            waited += 1;
            if waited > cfg.patience {
                break;
            }
        }
    }
    let best_epoch = best.map(|(_, epoch, weights)| {
        *net = weights;
        epoch
    });
    Ok((history, best_epoch))
}

/// Trains a fresh model. The dataset is split stratified by class and
/// oscillation frequency; both classes must be present. `epochs = 0`
/// returns the untouched initialization.
pub fn train(spec: &ModelSpec, dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    check_window_shapes(spec, dataset)?;
    if dataset.is_empty() {
        return Err(Error::data("training dataset is empty"));
    }
    let counts = dataset.class_counts(spec.n_classes);
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::data(
            "training dataset holds a single class; nothing to separate",
        ));
    }
    let (train_set, val_set) = crate::data::split_train_val(dataset, cfg.validation_ratio, cfg.seed)?;
    if val_set.is_empty() {
        return Err(Error::data("validation split is empty; dataset too small"));
    }
    let mut net = compile(spec, cfg.seed)?;
    let (history, best_epoch) = run_phase(&mut net, &train_set, &val_set, cfg, spec.n_classes)?;
    Ok(TrainedModel {
        spec: spec.clone(),
        network: net,
        meta: TrainingMeta {
            phases: vec![PhaseMeta {
                kind: "train".into(),
                seed: cfg.seed,
                corpus_fingerprint: corpus_fingerprint(dataset),
                epochs_run: history.len(),
                best_epoch,
                history,
            }],
        },
    })
}

/// Continues optimization from an existing model's weights on `extra`
/// windows only — no reinitialization, no layer freezing. The returned
/// model's metadata carries both phases.
pub fn fine_tune(
    model: &TrainedModel,
    extra: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    check_window_shapes(&model.spec, extra)?;
    if extra.is_empty() {
        return Err(Error::data("fine-tune dataset is empty"));
    }
    let (train_set, val_set) = crate::data::split_train_val(extra, cfg.validation_ratio, cfg.seed)?;
    if val_set.is_empty() {
        return Err(Error::data("validation split is empty; dataset too small"));
    }
    let mut net = model.network.clone();
    let (history, best_epoch) =
        run_phase(&mut net, &train_set, &val_set, cfg, model.spec.n_classes)?;
    let mut meta = model.meta.clone();
    meta.phases.push(PhaseMeta {
        kind: "fine_tune".into(),
        seed: cfg.seed,
        corpus_fingerprint: corpus_fingerprint(extra),
        epochs_run: history.len(),
        best_epoch,
        history,
    });
    Ok(TrainedModel { spec: model.spec.clone(), network: net, meta })
}

impl TrainedModel {
    /// Initialization without any training; useful as a baseline and
    /// for tests.
    pub fn initialized(spec: &ModelSpec, seed: u64) -> Result<TrainedModel> {
        Ok(TrainedModel {
            spec: spec.clone(),
            network: compile(spec, seed)?,
            meta: TrainingMeta::default(),
        })
    }

    /// Softmax class probabilities for one normalized window.
    pub fn predict_proba(&self, samples: &[f64]) -> Result<Vec<f64>> {
        let want = self.spec.input_len * self.spec.input_channels;
        if samples.len() != want {
            return Err(Error::data(format!(
                "window has {} samples, model expects {want}",
                samples.len()
            )));
        }
        let x = input_tensor(samples, self.spec.input_channels);
        Ok(self.network.forward_infer(&x))
    }

    /// Predicted class index (softmax argmax).
    pub fn predict_class(&self, samples: &[f64]) -> Result<usize> {
        let probs = self.predict_proba(samples)?;
        Ok(probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap())
    }
}

/// Probability that a window is an oscillation, under either head
/// convention: the binary head puts oscillation at class 0; wider
/// heads put normal at class 0 and oscillations everywhere else.
pub fn oscillation_probability(probs: &[f64]) -> f64 {
    if probs.len() == 2 {
        probs[0]
    } else {
        1.0 - probs[0]
    }
}

const MAGIC: &[u8; 4] = b"OSC1";
const FORMAT_VERSION: u8 = 1;

/// Writes the model file: magic `OSC1`, a format version byte, a
/// length-prefixed JSON descriptor (spec + training metadata), each
/// stage's parameters as little-endian f64 (weights then bias, in
/// stage order), and an FNV-1a 64-bit checksum of all parameter bytes.
pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let descriptor = serde_json::to_vec(&serde_json::json!({
        "spec": model.spec,
        "meta": model.meta,
    }))
    .map_err(|e| Error::ModelFile(format!("descriptor serialization: {e}")))?;
    let file = std::fs::File::create(path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
    let mut out = std::io::BufWriter::new(file);
    out.write_all(MAGIC)?;
    out.write_all(&[FORMAT_VERSION])?;
    out.write_all(&(descriptor.len() as u32).to_le_bytes())?;
    out.write_all(&descriptor)?;
    let mut hash = Fnv1a64::new();
    for stage in model.network.stages() {
        if let Some((w, b)) = stage.params() {
            for &v in w.data().iter().chain(b.data()) {
                let bytes = v.to_le_bytes();
                hash.update(&bytes);
                out.write_all(&bytes)?;
            }
        }
    }
    out.write_all(&hash.finish().to_le_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut f = std::io::BufReader::new(file);
    let bad = |msg: String| Error::ModelFile(msg);
    let mut magic = [0u8; 4];
    read_fully(&mut f, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}; not a model file")));
    }
    let mut version = [0u8; 1];
    read_fully(&mut f, &mut version, "version")?;
    if version[0] != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format version {} (supported: {FORMAT_VERSION})",
            version[0]
        )));
    }
    let mut len_bytes = [0u8; 4];
    read_fully(&mut f, &mut len_bytes, "descriptor length")?;
    let desc_len = u32::from_le_bytes(len_bytes) as usize;
    if desc_len > 64 << 20 {
        return Err(bad(format!("descriptor length {desc_len} is implausible")));
    }
    let mut descriptor = vec![0u8; desc_len];
    read_fully(&mut f, &mut descriptor, "descriptor")?;
    #[derive(Deserialize)]
    struct Descriptor {
        spec: ModelSpec,
        meta: TrainingMeta,
    }
    let Descriptor { spec, meta } = serde_json::from_slice(&descriptor)
        .map_err(|e| bad(format!("descriptor parse: {e}")))?;
    // Rebuild the skeleton, then overwrite every parameter from the
    // file. Compile validates the shape chain, so the byte count below
    // is fully determined by the spec.
    let mut network = compile(&spec, 0)?;
    let mut hash = Fnv1a64::new();
    for stage in network.stages_mut() {
        let Some((w, b)) = stage.params_mut() else { continue };
        for slot in w.data_mut().iter_mut().chain(b.data_mut()) {
            let mut bytes = [0u8; 8];
            read_fully(&mut f, &mut bytes, "parameters")?;
            hash.update(&bytes);
            *slot = f64::from_le_bytes(bytes);
            if !slot.is_finite() {
                return Err(bad("non-finite parameter in model file".into()));
            }
        }
    }
    let mut checksum = [0u8; 8];
    read_fully(&mut f, &mut checksum, "checksum")?;
    if u64::from_le_bytes(checksum) != hash.finish() {
        return Err(bad("parameter checksum mismatch; file corrupted".into()));
    }
    let mut trailing = [0u8; 1];
    if f.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after checksum".into()));
    }
    Ok(TrainedModel { spec, network, meta })
}

fn read_fully(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::ModelFile(format!("truncated while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Label, LabeledDataset, Provenance, Window};

    fn window(samples: Vec<f64>, t: f64, label: Label) -> Window {
        Window { samples, t_start_epoch_s: t, terminal_id: "T".into(), label: Some(label) }
    }

    /// Noise windows with labels assigned independently of content —
    /// unlearnable by construction.
    fn random_dataset(n: usize, seed: u64) -> LabeledDataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let windows = (0..n)
            .map(|i| {
                let raw: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let label = if i % 2 == 0 {
                    Label::Normal
                } else {
                    Label::Oscillation { frequency_hz: 3.0 }
                };
                window(crate::data::normalize_window(&raw), i as f64, label)
            })
            .collect();
        LabeledDataset::new(windows, Provenance::Synthetic).unwrap()
    }

    /// Constant (normal) vs clean 3 Hz sine (oscillation) windows,
    /// z-score normalized, phases staggered.
    fn toy_dataset(n_per_class: usize) -> LabeledDataset {
        let mut windows = Vec::new();
        for k in 0..n_per_class {
            windows.push(window(vec![0.0; 30], k as f64, Label::Normal));
            let raw: Vec<f64> = (0..30)
                .map(|j| {
                    (std::f64::consts::TAU * 3.0 * (k as f64 / 7.0 + j as f64 / 30.0)).sin()
                })
                .collect();
            windows.push(window(
                crate::data::normalize_window(&raw),
                1000.0 + k as f64,
                Label::Oscillation { frequency_hz: 3.0 },
            ));
        }
        LabeledDataset::new(windows, Provenance::Synthetic).unwrap()
    }

    #[test]
    fn conv_spec_compiles_with_expected_parameter_count() {
        let spec = build_conv1d_spec(2).unwrap();
        assert_eq!(spec.layers.len(), 8);
        let net = compile(&spec, 0).unwrap();
        // 256 + 12,352 + 83,300 + 202.
        assert_eq!(net.parameter_count(), 96_110);
        assert_eq!(net.n_classes(), 2);

        let spec16 = build_conv1d_spec(16).unwrap();
        let net16 = compile(&spec16, 0).unwrap();
        assert_eq!(net16.n_classes(), 16);
        assert_eq!(net16.parameter_count(), 96_110 - 202 + 1_616);

        assert!(build_conv1d_spec(3).is_err());
    }

    #[test]
    fn dense_spec_compiles_with_expected_parameter_count() {
        let spec = build_dense_spec();
        assert_eq!(spec.layers.len(), 5);
        let net = compile(&spec, 0).unwrap();
        // 7,936 + 16,448 + 130.
        assert_eq!(net.parameter_count(), 24_514);
        // First dense weight is 30 x 256.
        let dense = net.stages().iter().find_map(|s| match s {
            StageOp::Dense { weight, .. } => Some(weight.shape().to_vec()),
            _ => None,
        });
        assert_eq!(dense.unwrap(), vec![30, 256]);
    }

    #[test]
    fn initialization_is_seed_deterministic() {
        let spec = build_conv1d_spec(2).unwrap();
        let a = compile(&spec, 7).unwrap();
        let b = compile(&spec, 7).unwrap();
        let c = compile(&spec, 8).unwrap();
        let flat = |n: &Network| -> Vec<f64> {
            n.stages()
                .iter()
                .filter_map(|s| s.params())
                .flat_map(|(w, b)| w.data().iter().chain(b.data()).copied().collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn toy_separable_problem_reaches_perfect_validation() {
        let ds = toy_dataset(50);
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 16,
            patience: 20,
            seed: 42,
            ..Default::default()
        };
        let spec = build_conv1d_spec(2).unwrap();
        let model = train(&spec, &ds, &cfg).unwrap();
        let phase = &model.meta.phases[0];
        assert_eq!(phase.kind, "train");
        assert!(
            phase.history.iter().any(|e| e.val_accuracy == 1.0),
            "validation never reached 100%: {:?}",
            phase.history.last()
        );

        // A fresh clean oscillation window scores as an oscillation.
        let raw: Vec<f64> =
            (0..30).map(|j| (std::f64::consts::TAU * 3.0 * (0.123 + j as f64 / 30.0)).sin()).collect();
        let probs = model.predict_proba(&crate::data::normalize_window(&raw)).unwrap();
        assert!(oscillation_probability(&probs) > 0.9, "{probs:?}");
        let flat = model.predict_proba(&[0.0; 30]).unwrap();
        assert!(oscillation_probability(&flat) < 0.1, "{flat:?}");
    }

    #[test]
    fn zero_epochs_returns_initialization_untouched() {
        let ds = toy_dataset(20);
        let spec = build_conv1d_spec(2).unwrap();
        let cfg = TrainConfig { epochs: 0, seed: 9, ..Default::default() };
        let model = train(&spec, &ds, &cfg).unwrap();
        let init = compile(&spec, 9).unwrap();
        for (a, b) in model.network.stages().iter().zip(init.stages()) {
            if let (Some((wa, ba)), Some((wb, bb))) = (a.params(), b.params()) {
                assert_eq!(wa.data(), wb.data());
                assert_eq!(ba.data(), bb.data());
            }
        }
        assert_eq!(model.meta.phases[0].epochs_run, 0);
        assert_eq!(model.meta.phases[0].best_epoch, None);

        // Labels assigned independently of content: any untrained
        // (or trained) predictor sits at chance, +- binomial noise.
        let chance = random_dataset(200, 17);
        let (_, acc) = evaluate(&model.network, &chance, 2);
        assert!((0.35..=0.65).contains(&acc), "untrained accuracy {acc}");
    }

    #[test]
    fn degenerate_datasets_are_refused() {
        let spec = build_conv1d_spec(2).unwrap();
        let cfg = TrainConfig::default();

        let empty = LabeledDataset::new(vec![], Provenance::Synthetic).unwrap();
        assert!(train(&spec, &empty, &cfg).is_err());

        let single = LabeledDataset::new(
            (0..10).map(|i| window(vec![0.0; 30], i as f64, Label::Normal)).collect(),
            Provenance::Synthetic,
        )
        .unwrap();
        let err = train(&spec, &single, &cfg).unwrap_err();
        assert!(err.to_string().contains("single class"), "{err}");

        let short = LabeledDataset::new(
            vec![window(vec![0.0; 20], 0.0, Label::Normal)],
            Provenance::Synthetic,
        )
        .unwrap();
        let err = train(&spec, &short, &cfg).unwrap_err();
        assert!(err.to_string().contains("expects 30"), "{err}");
    }

    #[test]
    fn absurd_learning_rate_reports_divergence() {
        let ds = toy_dataset(20);
        let spec = build_conv1d_spec(2).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 1e200,
            seed: 1,
            ..Default::default()
        };
        match train(&spec, &ds, &cfg) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("epoch"), "{msg}"),
            other => panic!("expected numeric divergence, got {other:?}"),
        }
    }

    #[test]
    fn early_stopping_restores_the_best_epoch() {
        // Random labels are unlearnable, so validation loss wanders
        // and patience 0 stops at the first non-improvement.
        let ds = random_dataset(60, 3);
        let spec = build_dense_spec();
        let cfg = TrainConfig { epochs: 30, patience: 0, seed: 5, ..Default::default() };
        let model = train(&spec, &ds, &cfg).unwrap();
        let phase = &model.meta.phases[0];
        assert!(phase.epochs_run < 30, "never stopped: {}", phase.epochs_run);
        let best = phase.best_epoch.unwrap();
        let best_loss = phase.history[best].val_loss;
        assert!(phase.history.iter().all(|e| e.val_loss >= best_loss));

        // The returned weights really are the best epoch's: re-derive
        // the validation split and re-measure.
        let (_, val) = crate::data::split_train_val(&ds, cfg.validation_ratio, cfg.seed).unwrap();
        let (loss, acc) = evaluate(&model.network, &val, 2);
        assert!((loss - best_loss).abs() < 1e-12, "{loss} vs {best_loss}");
        assert!((acc - phase.history[best].val_accuracy).abs() < 1e-12);
    }

    #[test]
    fn training_is_reproducible_by_seed() {
        let ds = toy_dataset(20);
        let spec = build_dense_spec();
        let cfg = TrainConfig { epochs: 5, seed: 11, ..Default::default() };
        let a = train(&spec, &ds, &cfg).unwrap();
        let b = train(&spec, &ds, &cfg).unwrap();
        assert_eq!(a.meta.phases[0].history, b.meta.phases[0].history);
        for (sa, sb) in a.network.stages().iter().zip(b.network.stages()) {
            if let (Some((wa, _)), Some((wb, _))) = (sa.params(), sb.params()) {
                assert_eq!(wa.data(), wb.data());
            }
        }
        let c = train(&spec, &ds, &TrainConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(
            a.meta.phases[0].history,
            c.meta.phases[0].history,
            "different seeds produced identical traces"
        );
    }

    #[test]
    fn fine_tune_zero_epochs_is_identity_and_phases_accumulate() {
        let ds = toy_dataset(20);
        let spec = build_dense_spec();
        let base = train(&spec, &ds, &TrainConfig { epochs: 3, ..Default::default() }).unwrap();

        let frozen = fine_tune(&base, &ds, &TrainConfig { epochs: 0, ..TrainConfig::fine_tune_defaults() })
            .unwrap();
        for (a, b) in frozen.network.stages().iter().zip(base.network.stages()) {
            if let (Some((wa, _)), Some((wb, _))) = (a.params(), b.params()) {
                assert_eq!(wa.data(), wb.data());
            }
        }
        assert_eq!(frozen.meta.phases.len(), 2);
        assert_eq!(frozen.meta.phases[1].kind, "fine_tune");

        let moved = fine_tune(&base, &ds, &TrainConfig { epochs: 2, ..TrainConfig::fine_tune_defaults() })
            .unwrap();
        let changed = moved
            .network
            .stages()
            .iter()
            .zip(base.network.stages())
            .filter_map(|(a, b)| Some((a.params()?, b.params()?)))
            .any(|((wa, _), (wb, _))| wa.data() != wb.data());
        assert!(changed, "fine-tuning never moved any weight");

        // Shape mismatch is refused.
        let bad = LabeledDataset::new(
            vec![window(vec![0.0; 10], 0.0, Label::Normal)],
            Provenance::Recorded,
        )
        .unwrap();
        assert!(fine_tune(&base, &bad, &TrainConfig::fine_tune_defaults()).is_err());
    }

    #[test]
    fn predict_proba_contract() {
        let spec = build_conv1d_spec(2).unwrap();
        let model = TrainedModel::initialized(&spec, 4).unwrap();
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let w: Vec<f64> = (0..30).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p1 = model.predict_proba(&w).unwrap();
            let p2 = model.predict_proba(&w).unwrap();
            assert_eq!(p1, p2, "inference must be deterministic");
            assert!((p1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p1.iter().all(|&p| p >= 0.0));
        }
        assert!(model.predict_proba(&[0.0; 29]).is_err());

        assert_eq!(oscillation_probability(&[0.8, 0.2]), 0.8);
        let mut wide = vec![0.05; 16];
        wide[0] = 0.25;
        assert!((oscillation_probability(&wide) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn model_file_round_trips_bit_exactly() {
        let ds = toy_dataset(10);
        let spec = build_conv1d_spec(2).unwrap();
        let model =
            train(&spec, &ds, &TrainConfig { epochs: 2, seed: 6, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.osc");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.spec, model.spec);
        assert_eq!(loaded.meta, model.meta);
        for (a, b) in loaded.network.stages().iter().zip(model.network.stages()) {
            if let (Some((wa, ba)), Some((wb, bb))) = (a.params(), b.params()) {
                assert_eq!(wa.data(), wb.data());
                assert_eq!(ba.data(), bb.data());
            }
        }
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let w: Vec<f64> = (0..30).map(|_| rng.gen_range(-2.0..2.0)).collect();
            assert_eq!(model.predict_proba(&w).unwrap(), loaded.predict_proba(&w).unwrap());
        }
    }

    #[test]
    fn model_file_rejects_damage() {
        let spec = build_dense_spec();
        let model = TrainedModel::initialized(&spec, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.osc");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let write = |b: &[u8]| {
            let p = dir.path().join("tmp.osc");
            std::fs::write(&p, b).unwrap();
            p
        };

        // Truncations at every structural boundary, plus mid-payload.
        for cut in [2usize, 5, 9, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = load_model(&write(&bytes[..cut])).unwrap_err();
            assert!(
                matches!(err, Error::ModelFile(ref m) if m.contains("truncated")),
                "cut {cut}: {err}"
            );
        }

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(
            load_model(&write(&wrong_magic)).unwrap_err(),
            Error::ModelFile(m) if m.contains("magic")
        ));

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 2;
        assert!(matches!(
            load_model(&write(&wrong_version)).unwrap_err(),
            Error::ModelFile(m) if m.contains("version")
        ));

        // Flip one bit inside the parameter block.
        let mut corrupt = bytes.clone();
        let mid = bytes.len() - 100;
        corrupt[mid] ^= 0x40;
        assert!(matches!(
            load_model(&write(&corrupt)).unwrap_err(),
            Error::ModelFile(m) if m.contains("checksum") || m.contains("non-finite")
        ));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(
            load_model(&write(&trailing)).unwrap_err(),
            Error::ModelFile(m) if m.contains("trailing")
        ));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = toy_dataset(5);
        let b = toy_dataset(5);
        assert_eq!(corpus_fingerprint(&a), corpus_fingerprint(&b));
        let c = toy_dataset(6);
        assert_ne!(corpus_fingerprint(&a), corpus_fingerprint(&c));
    }
}
