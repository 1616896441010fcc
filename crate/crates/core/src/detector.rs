//! Streaming detection: buffer a live sample stream, emit one flag per
//! stride, and coalesce consecutive oscillation flags into debounced
//! events.
//!
//! One [`StreamState`] serves one terminal and must be driven by a
//! single consumer; independent terminals can share one immutable
//! model behind the `Arc`.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{normalize_window_with, NormMethod};
use crate::error::Error;
use crate::models::{oscillation_probability, TrainedModel};
use crate::Result;

/// One emitted classification. `t_epoch_s` is the timestamp of the
/// *start* of the window the flag describes. `flag` follows the wire
/// convention: 0 = oscillation, 1 = normal. `class` is the model's
/// argmax (for a binary head, 0 = oscillation; for wider heads the
/// frequency class).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub t_epoch_s: f64,
    pub flag: u8,
    pub oscillation_probability: f64,
    pub class: usize,
}

impl FlagRecord {
    pub fn is_oscillation(&self) -> bool {
        self.flag == 0
    }
}

/// A debounced run of oscillation flags. `end_epoch_s` is `None`
/// while the event is still open (stream ended or ongoing).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub start_epoch_s: f64,
    pub end_epoch_s: Option<f64>,
    pub peak_probability: f64,
    /// Oscillation-flagged windows inside the event.
    pub window_count: usize,
    /// Most frequent predicted frequency class, for multi-class
    /// models only.
    pub dominant_class: Option<usize>,
}

impl DetectionEvent {
    pub fn duration_s(&self) -> Option<f64> {
        self.end_epoch_s.map(|e| e - self.start_epoch_s)
    }
}

/// Per-terminal streaming state: a bounded buffer of the most recent
/// raw samples plus rejection/reset accounting.
#[derive(Debug, Clone)]
pub struct StreamState {
    model: Arc<TrainedModel>,
    sample_period_s: f64,
    stride: usize,
    norm: NormMethod,
    buf: VecDeque<(f64, f64)>,
    last_t: Option<f64>,
    rejected: u64,
    resets: u64,
    overflowed: u64,
}

impl StreamState {
    /// `stride_s` controls how often flags are emitted; the default
    /// protocol is one window length (non-overlapping windows, one
    /// flag per second at 30 sps).
    pub fn new(
        model: Arc<TrainedModel>,
        sample_rate_hz: f64,
        stride_s: f64,
        norm: NormMethod,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::config("sample_rate_hz", "must be positive and finite"));
        }
        let stride = (stride_s * sample_rate_hz).round() as usize;
        if stride == 0 {
            return Err(Error::config("stride_s", "shorter than one sample period"));
        }
        Ok(StreamState {
            model,
            sample_period_s: 1.0 / sample_rate_hz,
            stride,
            norm,
            buf: VecDeque::new(),
            last_t: None,
            rejected: 0,
            resets: 0,
            overflowed: 0,
        })
    }

    /// Window length in samples, fixed by the model.
    pub fn window_len(&self) -> usize {
        self.model.spec.input_len * self.model.spec.input_channels
    }

    /// Window span in seconds — what one flag covers.
    pub fn window_s(&self) -> f64 {
        self.window_len() as f64 * self.sample_period_s
    }

    /// Samples rejected for being out of order or non-finite.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    /// Buffer resets caused by data gaps.
    pub fn resets(&self) -> u64 {
        self.resets
    }

    /// Samples discarded because the consumer fell behind.
    pub fn overflowed(&self) -> u64 {
        self.overflowed
    }

    /// Accepts one timestamped sample. Out-of-order or non-finite
    /// samples are rejected (counted, state otherwise untouched). A
    /// gap of more than 3 sample periods empties the buffer: a window
    /// spanning missing data is not a valid classifier input.
    pub fn push_sample(&mut self, t_epoch_s: f64, value_hz: f64) {
        if !value_hz.is_finite() || !t_epoch_s.is_finite() {
            self.rejected += 1;
            return;
        }
        if let Some(last) = self.last_t {
            if t_epoch_s <= last {
                self.rejected += 1;
                return;
            }
            if t_epoch_s - last > 3.0 * self.sample_period_s && !self.buf.is_empty() {
                self.buf.clear();
                self.resets += 1;
            }
        }
        self.buf.push_back((t_epoch_s, value_hz));
        self.last_t = Some(t_epoch_s);
        // Cap: one full window plus one stride of lookahead.
        while self.buf.len() > self.window_len() + self.stride {
            self.buf.pop_front();
            self.overflowed += 1;
        }
    }

    /// Emits the flag for the oldest buffered window, if one is
    /// complete, and advances the buffer by one stride. The window is
    /// an oscillation when its probability strictly exceeds 1/2 —
    /// ties (e.g. a constant window, which normalizes to zeros) read
    /// as normal.
    pub fn step(&mut self) -> Option<FlagRecord> {
        let w = self.window_len();
        if self.buf.len() < w {
            return None;
        }
        let t_start = self.buf[0].0;
        let raw: Vec<f64> = self.buf.iter().take(w).map(|&(_, v)| v).collect();
        let samples = normalize_window_with(&raw, self.norm);
        let probs = self
            .model
            .predict_proba(&samples)
            .expect("buffered window length matches the model by construction");
        let p_osc = oscillation_probability(&probs);
        let class = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        for _ in 0..self.stride.min(self.buf.len()) {
            self.buf.pop_front();
        }
        Some(FlagRecord {
            t_epoch_s: t_start,
            flag: u8::from(!(p_osc > 0.5)),
            oscillation_probability: p_osc,
            class,
        })
    }

    /// Feeds a whole recorded stream through push/step and collects
    /// every emitted flag.
    pub fn replay(&mut self, samples: impl IntoIterator<Item = (f64, f64)>) -> Vec<FlagRecord> {
        let mut flags = Vec::new();
        for (t, v) in samples {
            self.push_sample(t, v);
            while let Some(flag) = self.step() {
                flags.push(flag);
            }
        }
        flags
    }
}

/// Debounced event extraction over a time-ordered flag stream.
///
/// An event opens once `debounce_n` consecutive oscillation flags
/// arrive, with its start backdated to the first flag of that run; it
/// closes once `debounce_n` consecutive normal flags arrive, ending at
/// the last oscillation window's end (its start plus the window
/// span). Shorter flips in either direction are absorbed.
#[derive(Debug, Clone)]
pub struct EventCoalescer {
    debounce_n: usize,
    window_s: f64,
    multiclass: bool,
    osc_run: Vec<FlagRecord>,
    normal_run: usize,
    open: Option<OpenEvent>,
}

#[derive(Debug, Clone)]
struct OpenEvent {
    start: f64,
    last_osc_t: f64,
    peak: f64,
    count: usize,
    classes: BTreeMap<usize, usize>,
}

impl OpenEvent {
    fn absorb(&mut self, flag: &FlagRecord) {
        self.last_osc_t = flag.t_epoch_s;
        self.peak = self.peak.max(flag.oscillation_probability);
        self.count += 1;
        *self.classes.entry(flag.class).or_insert(0) += 1;
    }

    fn close(self, window_s: f64, ended: bool, multiclass: bool) -> DetectionEvent {
        // Most frequent class; ties resolve to the lowest frequency.
        let dominant = multiclass.then(|| {
            self.classes
                .iter()
                .filter(|&(&c, _)| c != 0)
                .max_by_key(|&(_, &n)| n)
                .map(|(&c, _)| c)
                .unwrap_or(0)
        });
        DetectionEvent {
            start_epoch_s: self.start,
            end_epoch_s: ended.then_some(self.last_osc_t + window_s),
            peak_probability: self.peak,
            window_count: self.count,
            dominant_class: dominant,
        }
    }
}

impl EventCoalescer {
    pub fn new(debounce_n: usize, window_s: f64, n_classes: usize) -> Result<Self> {
        if debounce_n == 0 {
            return Err(Error::config("debounce_n", "must be at least 1"));
        }
        if !(window_s > 0.0) {
            return Err(Error::config("window_s", "must be positive"));
        }
        Ok(EventCoalescer {
            debounce_n,
            window_s,
            multiclass: n_classes > 2,
            osc_run: Vec::new(),
            normal_run: 0,
            open: None,
        })
    }

    /// Feeds one flag; returns an event exactly when one closes.
    pub fn push(&mut self, flag: &FlagRecord) -> Option<DetectionEvent> {
        if flag.is_oscillation() {
            self.normal_run = 0;
            match self.open.as_mut() {
                Some(ev) => ev.absorb(flag),
                None => {
                    self.osc_run.push(*flag);
                    if self.osc_run.len() >= self.debounce_n {
                        let mut ev = OpenEvent {
                            start: self.osc_run[0].t_epoch_s,
                            last_osc_t: self.osc_run[0].t_epoch_s,
                            peak: f64::NEG_INFINITY,
                            count: 0,
                            classes: BTreeMap::new(),
                        };
                        for f in std::mem::take(&mut self.osc_run) {
                            ev.absorb(&f);
                        }
                        self.open = Some(ev);
                    }
                }
            }
            None
        } else {
            self.osc_run.clear();
            if self.open.is_some() {
                self.normal_run += 1;
                if self.normal_run >= self.debounce_n {
                    self.normal_run = 0;
                    let ev = self.open.take().unwrap();
                    return Some(ev.close(self.window_s, true, self.multiclass));
                }
            }
            None
        }
    }

    /// Ends the stream: a still-open event is returned with
    /// `end_epoch_s = None`. A pending opening run shorter than the
    /// debounce is discarded.
    pub fn finish(&mut self) -> Option<DetectionEvent> {
        self.osc_run.clear();
        self.normal_run = 0;
        self.open.take().map(|ev| ev.close(self.window_s, false, self.multiclass))
    }
}

/// Batch wrapper over the streaming coalescer.
pub fn coalesce_events(
    flags: &[FlagRecord],
    debounce_n: usize,
    window_s: f64,
    n_classes: usize,
) -> Result<Vec<DetectionEvent>> {
    let mut c = EventCoalescer::new(debounce_n, window_s, n_classes)?;
    let mut events: Vec<DetectionEvent> = flags.iter().filter_map(|f| c.push(f)).collect();
    events.extend(c.finish());
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelSpec, TrainedModel, TrainingMeta};
    use crate::nn::{Network, StageOp, Tensor};

    /// A hand-built linear model: logit(oscillation) = <w, x> - 1 with
    /// w a 3 Hz matched filter, logit(normal) = 0. Deterministic and
    /// transparent: clean 3 Hz windows flag oscillation, flat or
    /// off-frequency windows flag normal.
    fn matched_filter_model() -> Arc<TrainedModel> {
        let w = 30usize;
        let mut weight = Tensor::zeros(&[w, 2]);
        for j in 0..w {
            let phase = std::f64::consts::TAU * 3.0 * j as f64 / 30.0;
            weight.data_mut()[j * 2] = phase.sin() * 0.5;
        }
        let mut bias = Tensor::zeros(&[2]);
        bias.data_mut()[0] = -1.0;
        let network = Network::new(
            [w, 1],
            vec![StageOp::Flatten, StageOp::Dense { weight, bias, relu: false }],
        )
        .unwrap();
        let spec = ModelSpec {
            name: "matched".into(),
            input_len: w,
            input_channels: 1,
            layers: vec![],
            n_classes: 2,
        };
        Arc::new(TrainedModel { spec, network, meta: TrainingMeta::default() })
    }

    fn state(stride_s: f64) -> StreamState {
        StreamState::new(matched_filter_model(), 30.0, stride_s, NormMethod::ZScore).unwrap()
    }

    fn sine_stream(n: usize, f: f64) -> impl Iterator<Item = (f64, f64)> {
        (0..n).map(move |i| {
            let t = i as f64 / 30.0;
            (t, 60.0 + (std::f64::consts::TAU * f * t).sin() * 0.05)
        })
    }

    fn flat_stream(n: usize) -> impl Iterator<Item = (f64, f64)> {
        (0..n).map(|i| (i as f64 / 30.0, 60.0))
    }

    fn flag(t: f64, osc: bool) -> FlagRecord {
        FlagRecord {
            t_epoch_s: t,
            flag: u8::from(!osc),
            oscillation_probability: if osc { 0.9 } else { 0.1 },
            class: usize::from(!osc),
        }
    }

    #[test]
    fn no_emission_until_a_full_window() {
        let mut s = state(1.0);
        for (t, v) in flat_stream(29) {
            s.push_sample(t, v);
            assert!(s.step().is_none());
        }
        s.push_sample(29.0 / 30.0, 60.0);
        let f = s.step().expect("30th sample completes the window");
        assert_eq!(f.t_epoch_s, 0.0);
        assert_eq!(f.flag, 1, "constant stream reads normal");
        assert!(s.step().is_none(), "stride consumed; nothing new yet");
    }

    #[test]
    fn flags_follow_signal_content() {
        let mut s = state(1.0);
        // 10 s of flat, then 10 s of strong 3 Hz, then 10 s flat.
        let stream = (0..900).map(|i| {
            let t = i as f64 / 30.0;
            let v = if (300..600).contains(&i) {
                60.0 + (std::f64::consts::TAU * 3.0 * t).sin() * 0.05
            } else {
                60.0
            };
            (t, v)
        });
        let flags = s.replay(stream);
        assert_eq!(flags.len(), 30);
        for f in &flags {
            let expect_osc = (10.0..20.0 - 1e-9).contains(&f.t_epoch_s);
            assert_eq!(f.is_oscillation(), expect_osc, "at {}", f.t_epoch_s);
        }
        // Strictly increasing timestamps, one per second.
        for (i, f) in flags.iter().enumerate() {
            assert!((f.t_epoch_s - i as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn four_minute_replay_emits_240_flags() {
        let mut s = state(1.0);
        let flags = s.replay(sine_stream(240 * 30, 3.0));
        assert_eq!(flags.len(), 240);
    }

    #[test]
    fn out_of_order_and_non_finite_are_rejected() {
        let mut s = state(1.0);
        s.push_sample(0.0, 60.0);
        s.push_sample(1.0 / 30.0, 60.0);
        s.push_sample(1.0 / 30.0, 61.0); // duplicate timestamp
        s.push_sample(0.01, 61.0); // backwards
        s.push_sample(2.0 / 30.0, f64::NAN);
        s.push_sample(2.0 / 30.0, 60.0); // fine: NaN push was rejected, t still newer than last accepted...
        assert_eq!(s.rejected(), 3);
    }

    #[test]
    fn gap_resets_the_buffer_and_delays_the_next_flag() {
        let mut s = state(1.0);
        for (t, v) in flat_stream(20) {
            s.push_sample(t, v);
        }
        // Gap of 10 sample periods.
        let resume = 29.0 / 30.0;
        s.push_sample(resume, 60.0);
        assert_eq!(s.resets(), 1);
        assert!(s.step().is_none());
        // 29 more samples complete a fresh window that starts at the
        // resume timestamp.
        for i in 1..30 {
            s.push_sample(resume + i as f64 / 30.0, 60.0);
        }
        let f = s.step().expect("window refilled after reset");
        assert!((f.t_epoch_s - resume).abs() < 1e-12);

        // A gap of exactly 3 periods does not reset.
        let mut s2 = state(1.0);
        s2.push_sample(0.0, 60.0);
        s2.push_sample(3.0 / 30.0, 60.0);
        assert_eq!(s2.resets(), 0);
    }

    #[test]
    fn overflow_drops_oldest_and_counts() {
        let mut s = state(1.0);
        // Push 100 samples without stepping: cap is W + stride = 60.
        for (t, v) in flat_stream(100) {
            s.push_sample(t, v);
        }
        assert_eq!(s.overflowed(), 40);
        let f = s.step().unwrap();
        // Oldest surviving sample is index 40.
        assert!((f.t_epoch_s - 40.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn replay_is_deterministic() {
        let a = state(1.0).replay(sine_stream(3600, 7.0));
        let b = state(1.0).replay(sine_stream(3600, 7.0));
        assert_eq!(a, b);
    }

    #[test]
    fn coalescer_worked_example() {
        // Flags 1,1,0,0,0,0,1,1,1,0 with debounce 3: one event over
        // the oscillation run at t = 2..=5, closed by the three
        // normals; the trailing isolated oscillation flag is absorbed.
        let probs = [0.1, 0.2, 0.8, 0.85, 0.95, 0.9, 0.3, 0.2, 0.1, 0.7];
        let osc = [false, false, true, true, true, true, false, false, false, true];
        let flags: Vec<FlagRecord> = (0..10)
            .map(|i| FlagRecord {
                t_epoch_s: i as f64,
                flag: u8::from(!osc[i]),
                oscillation_probability: probs[i],
                class: usize::from(!osc[i]),
            })
            .collect();
        let events = coalesce_events(&flags, 3, 1.0, 2).unwrap();
        assert_eq!(events.len(), 1);
        let ev = &events[0];
        assert_eq!(ev.start_epoch_s, 2.0);
        assert_eq!(ev.end_epoch_s, Some(6.0));
        assert_eq!(ev.window_count, 4);
        assert_eq!(ev.peak_probability, 0.95);
        assert_eq!(ev.dominant_class, None);
        assert_eq!(ev.duration_s(), Some(4.0));
    }

    #[test]
    fn all_normal_yields_no_events_and_short_runs_are_absorbed() {
        let flags: Vec<FlagRecord> = (0..20).map(|i| flag(i as f64, false)).collect();
        assert!(coalesce_events(&flags, 3, 1.0, 2).unwrap().is_empty());

        // Two isolated oscillation flags never open an event.
        let mut flags: Vec<FlagRecord> = (0..20).map(|i| flag(i as f64, false)).collect();
        flags[5] = flag(5.0, true);
        flags[11] = flag(11.0, true);
        flags[12] = flag(12.0, true);
        assert!(coalesce_events(&flags, 3, 1.0, 2).unwrap().is_empty());
    }

    #[test]
    fn open_event_survives_short_normal_runs_and_stream_end() {
        // 0,0,0,1,0,0,1,1,0,0 — opens at t=0, never sees three
        // consecutive normals, stays open at stream end.
        let osc = [true, true, true, false, true, true, false, false, true, true];
        let flags: Vec<FlagRecord> =
            (0..10).map(|i| flag(i as f64, osc[i])).collect();
        let events = coalesce_events(&flags, 3, 1.0, 2).unwrap();
        assert_eq!(events.len(), 1);
        let ev = &events[0];
        assert_eq!(ev.start_epoch_s, 0.0);
        assert_eq!(ev.end_epoch_s, None);
        assert_eq!(ev.window_count, 7);
    }

    #[test]
    fn multiclass_events_report_the_dominant_class() {
        let mut flags = Vec::new();
        for (i, c) in [3usize, 3, 4, 3, 4, 4, 4].iter().enumerate() {
            flags.push(FlagRecord {
                t_epoch_s: i as f64,
                flag: 0,
                oscillation_probability: 0.9,
                class: *c,
            });
        }
        let events = coalesce_events(&flags, 3, 1.0, 16).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].dominant_class, Some(4));
    }

    #[test]
    fn streaming_and_batch_agree() {
        let osc = [
            false, true, true, true, false, false, false, true, true, true, true, false, true,
            false, false, false, true, true, true,
        ];
        let flags: Vec<FlagRecord> = osc
            .iter()
            .enumerate()
            .map(|(i, &o)| flag(i as f64, o))
            .collect();
        let batch = coalesce_events(&flags, 3, 1.0, 2).unwrap();

        let mut c = EventCoalescer::new(3, 1.0, 2).unwrap();
        let mut streamed: Vec<DetectionEvent> = Vec::new();
        for f in &flags {
            streamed.extend(c.push(f));
        }
        streamed.extend(c.finish());
        assert_eq!(batch, streamed);
        assert_eq!(batch.len(), 3);
        assert_eq!(batch[0].end_epoch_s, Some(4.0));
        // The lone oscillation flag at t=12 is absorbed into the
        // second event before the normal run closes it.
        assert_eq!(batch[1].start_epoch_s, 7.0);
        assert_eq!(batch[1].end_epoch_s, Some(13.0));
        assert_eq!(batch[2].start_epoch_s, 16.0);
        assert_eq!(batch[2].end_epoch_s, None);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Independent oracle: run-length scan over the flag stream.
        fn reference_events(osc: &[bool], n: usize) -> Vec<(usize, Option<usize>)> {
            let mut events = Vec::new();
            let mut open_at: Option<usize> = None;
            let mut run_start = 0usize;
            let mut osc_run = 0usize;
            let mut norm_run = 0usize;
            let mut last_osc = 0usize;
            for (i, &o) in osc.iter().enumerate() {
                if o {
                    if osc_run == 0 {
                        run_start = i;
                    }
                    osc_run += 1;
                    norm_run = 0;
                    last_osc = i;
                    if open_at.is_none() && osc_run >= n {
                        open_at = Some(run_start);
                    }
                } else {
                    osc_run = 0;
                    if open_at.is_some() {
                        norm_run += 1;
                        if norm_run >= n {
                            events.push((open_at.take().unwrap(), Some(last_osc)));
                            norm_run = 0;
                        }
                    }
                }
            }
            if let Some(s) = open_at {
                events.push((s, None));
            }
            events
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(256))]

            #[test]
            fn coalescer_matches_run_length_oracle(
                osc in proptest::collection::vec(proptest::bool::weighted(0.4), 0..80),
                n in 1usize..5,
            ) {
                let flags: Vec<FlagRecord> = osc
                    .iter()
                    .enumerate()
                    .map(|(i, &o)| flag(i as f64, o))
                    .collect();
                let got = coalesce_events(&flags, n, 1.0, 2).unwrap();
                let want = reference_events(&osc, n);
                prop_assert_eq!(got.len(), want.len());
                for (g, (start, end)) in got.iter().zip(&want) {
                    prop_assert_eq!(g.start_epoch_s, *start as f64);
                    prop_assert_eq!(g.end_epoch_s, end.map(|e| e as f64 + 1.0));
                    prop_assert!(g.window_count >= n);
                }
            }

            #[test]
            fn raising_debounce_never_adds_events(
                osc in proptest::collection::vec(proptest::bool::weighted(0.5), 0..80),
            ) {
                let flags: Vec<FlagRecord> = osc
                    .iter()
                    .enumerate()
                    .map(|(i, &o)| flag(i as f64, o))
                    .collect();
                let mut prev = usize::MAX;
                for n in 1..=5 {
                    let count = coalesce_events(&flags, n, 1.0, 2).unwrap().len();
                    prop_assert!(count <= prev, "debounce {} grew events", n);
                    prev = count;
                }
            }
        }
    }
}
