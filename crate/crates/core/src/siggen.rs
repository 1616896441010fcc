//! Synthetic PMU frequency traces for training and evaluation.
//!
//! A trace is built as
//!
//! ```text
//! y[n] = filter( envelope(t) * (noise(t) + gate(t) * A * sin(2*pi*f*t)) ) + base
//! ```
//!
//! where `envelope` is the superposition of a rising ramp, a falling
//! ramp and a rectangular pulse, `noise` is white Gaussian, `gate`
//! switches the sinusoid on inside the event window, and `filter` is a
//! discretized second-order low-pass. The additive `base` (nominal grid
//! frequency) is applied after the filter, so a trace with zero noise
//! and zero amplitude is exactly constant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Second-order low-pass prototype: `H(s) = g * wn^2 / (s^2 + 2*z*wn*s + wn^2)`.
///
/// The default corner sits at 12.5 Hz. At a 30 Hz sample rate the
/// bilinear transform warps the top of the band hard toward Nyquist
/// (digital 14 Hz maps to the prototype at ~91 Hz), so a corner much
/// below this buries 13-14 Hz oscillations under the passed
/// low-frequency noise floor. 12.5 Hz keeps the 1-14 Hz detection band
/// within ~16 dB of flat while the transform's double zero at Nyquist
/// still removes sample-to-sample hash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderParams {
    pub natural_frequency_hz: f64,
    pub damping_ratio: f64,
    pub dc_gain: f64,
}

impl Default for SecondOrderParams {
    fn default() -> Self {
        SecondOrderParams { natural_frequency_hz: 12.5, damping_ratio: 0.7, dc_gain: 1.0 }
    }
}

/// Discrete biquad obtained from [`SecondOrderParams`] by the bilinear
/// transform with frequency prewarping (the digital response matches
/// the prototype exactly at DC and at the natural frequency). State is
/// direct-form II transposed.
#[derive(Debug, Clone)]
pub struct SecondOrderFilter {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    s1: f64,
    s2: f64,
}

impl SecondOrderFilter {
    pub fn new(params: &SecondOrderParams, sample_rate_hz: f64) -> Result<Self> {
        if !(params.natural_frequency_hz > 0.0)
            || params.natural_frequency_hz >= sample_rate_hz / 2.0
        {
            return Err(Error::config(
                "natural_frequency_hz",
                format!(
                    "must lie in (0, {}) for sample rate {sample_rate_hz}",
                    sample_rate_hz / 2.0
                ),
            ));
        }
        if !(params.damping_ratio > 0.0) {
            return Err(Error::config("damping_ratio", "must be positive"));
        }
        if !(params.dc_gain > 0.0) || !params.dc_gain.is_finite() {
            return Err(Error::config("dc_gain", "must be positive and finite"));
        }
        let k = 2.0 * sample_rate_hz;
        let wn = k * (std::f64::consts::PI * params.natural_frequency_hz / sample_rate_hz).tan();
        let z = params.damping_ratio;
        let a0 = k * k + 2.0 * z * wn * k + wn * wn;
        let filt = SecondOrderFilter {
            b0: params.dc_gain * wn * wn / a0,
            b1: 2.0 * params.dc_gain * wn * wn / a0,
            b2: params.dc_gain * wn * wn / a0,
            a1: (2.0 * wn * wn - 2.0 * k * k) / a0,
            a2: (k * k - 2.0 * z * wn * k + wn * wn) / a0,
            s1: 0.0,
            s2: 0.0,
        };
        debug_assert!(filt.max_pole_magnitude() < 1.0);
        Ok(filt)
    }

    /// Advances the filter by one sample.
    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.s1;
        self.s1 = self.b1 * x - self.a1 * y + self.s2;
        self.s2 = self.b2 * x - self.a2 * y;
        y
    }

    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }

    /// `H(z=1)`: must equal `dc_gain` up to rounding.
    pub fn dc_response(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Largest pole magnitude of `z^2 + a1 z + a2`; stable iff < 1.
    pub fn max_pole_magnitude(&self) -> f64 {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc < 0.0 {
            self.a2.sqrt()
        } else {
            let r = disc.sqrt();
            ((-self.a1 + r) / 2.0).abs().max(((-self.a1 - r) / 2.0).abs())
        }
    }
}

/// Linear ramp: contributes 0 before `start_s`, rises (or falls)
/// linearly to `gain` at `end_s`, then holds `gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub start_s: f64,
    pub end_s: f64,
    pub gain: f64,
}

impl Ramp {
    fn value(&self, t: f64) -> f64 {
        if t <= self.start_s {
            0.0
        } else if t >= self.end_s {
            self.gain
        } else {
            self.gain * (t - self.start_s) / (self.end_s - self.start_s)
        }
    }
}

/// Rectangular pulse: `amplitude` inside `[start_s, end_s)`, 0 outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub start_s: f64,
    pub end_s: f64,
    pub amplitude: f64,
}

impl Pulse {
    fn value(&self, t: f64) -> f64 {
        if t >= self.start_s && t < self.end_s {
            self.amplitude
        } else {
            0.0
        }
    }
}

/// Amplitude envelope applied to the noise-plus-oscillation drive: the
/// superposition of one rising ramp, one falling ramp and one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub ramp_up: Ramp,
    pub ramp_down: Ramp,
    pub pulse: Pulse,
}

impl Envelope {
    /// Default envelope scaled to a trace of `duration_s`: fade-in over
    /// the first tenth, a +0.5 pulse across the middle, and a -0.5
    /// fade-out over the last tenth.
    pub fn for_duration(duration_s: f64) -> Self {
        Envelope {
            ramp_up: Ramp { start_s: 0.0, end_s: 0.1 * duration_s, gain: 1.0 },
            ramp_down: Ramp { start_s: 0.9 * duration_s, end_s: duration_s, gain: -0.5 },
            pulse: Pulse { start_s: 0.3 * duration_s, end_s: 0.7 * duration_s, amplitude: 0.5 },
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.ramp_up.value(t) + self.ramp_down.value(t) + self.pulse.value(t)
    }
}

/// Full description of one synthetic trace. `seed` drives every random
/// draw; equal configs produce bit-identical traces within one build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Nominal grid frequency added after the filter, in Hz.
    pub base_frequency_hz: f64,
    /// Standard deviation of the white Gaussian noise drive, in Hz.
    pub noise_sigma: f64,
    /// Oscillation frequency in Hz; valid range [1, 14].
    pub osc_frequency_hz: f64,
    /// Peak amplitude of the gated sinusoid before filtering, in Hz.
    /// Zero disables the event entirely (and its annotation).
    pub osc_amplitude: f64,
    /// Event window: the sinusoid is switched on for `t in [osc_start_s, osc_end_s)`.
    pub osc_start_s: f64,
    pub osc_end_s: f64,
    pub envelope: Envelope,
    pub filter: SecondOrderParams,
    pub seed: u64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig {
            duration_s: 300.0,
            sample_rate_hz: 30.0,
            base_frequency_hz: 60.0,
            noise_sigma: 0.01,
            osc_frequency_hz: 3.0,
            osc_amplitude: 0.05,
            osc_start_s: 120.0,
            osc_end_s: 200.0,
            envelope: Envelope::for_duration(300.0),
            filter: SecondOrderParams::default(),
            seed: 0,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::config("duration_s", "must be positive and finite"));
        }
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(Error::config("sample_rate_hz", "must be positive and finite"));
        }
        if !self.base_frequency_hz.is_finite() {
            return Err(Error::config("base_frequency_hz", "must be finite"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config("noise_sigma", "must be non-negative"));
        }
        if !(self.osc_amplitude >= 0.0) || !self.osc_amplitude.is_finite() {
            return Err(Error::config("osc_amplitude", "must be non-negative"));
        }
        if self.osc_amplitude > 0.0 {
            if !(1.0..=14.0).contains(&self.osc_frequency_hz) {
                return Err(Error::config(
                    "osc_frequency_hz",
                    format!("{} outside [1, 14]", self.osc_frequency_hz),
                ));
            }
            if self.osc_frequency_hz >= self.sample_rate_hz / 2.0 {
                return Err(Error::config(
                    "osc_frequency_hz",
                    format!(
                        "{} at or above the Nyquist limit {}",
                        self.osc_frequency_hz,
                        self.sample_rate_hz / 2.0
                    ),
                ));
            }
            if !(0.0 <= self.osc_start_s
                && self.osc_start_s < self.osc_end_s
                && self.osc_end_s <= self.duration_s)
            {
                return Err(Error::config(
                    "osc_start_s",
                    format!(
                        "event window [{}, {}) must satisfy 0 <= start < end <= duration {}",
                        self.osc_start_s, self.osc_end_s, self.duration_s
                    ),
                ));
            }
        }
        SecondOrderFilter::new(&self.filter, self.sample_rate_hz)?;
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }
}

/// Kind tag carried by an annotation; currently only forced
/// oscillations are generated or recognized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Oscillation,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EventKind::Oscillation => write!(f, "oscillation"),
        }
    }
}

impl std::str::FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oscillation" => Ok(EventKind::Oscillation),
            other => Err(Error::data(format!("unknown event kind {other:?}"))),
        }
    }
}

/// Ground-truth event: times are seconds relative to trace start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventAnnotation {
    pub start_s: f64,
    pub end_s: f64,
    pub frequency_hz: f64,
    pub kind: EventKind,
}

/// A generated (or replayed) fixed-rate series with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub sample_rate_hz: f64,
    /// Epoch timestamp of sample 0, seconds.
    pub t0_epoch_s: f64,
    pub values: Vec<f64>,
    pub annotations: Vec<EventAnnotation>,
}

impl TimeSeries {
    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate_hz
    }

    /// Epoch timestamp of sample `n`.
    pub fn t(&self, n: usize) -> f64 {
        self.t0_epoch_s + n as f64 / self.sample_rate_hz
    }
}

/// Synthesizes one trace. Fails if the config is invalid; otherwise the
/// output length is `duration_s * sample_rate_hz` rounded, with exactly
/// one annotation when `osc_amplitude > 0` and none otherwise.
pub fn generate_series(config: &SignalConfig) -> Result<TimeSeries> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut filter = SecondOrderFilter::new(&config.filter, config.sample_rate_hz)?;
    let n = config.n_samples();
    let omega = std::f64::consts::TAU * config.osc_frequency_hz;
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / config.sample_rate_hz;
        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * config.noise_sigma;
        let gated = if config.osc_amplitude > 0.0 && t >= config.osc_start_s && t < config.osc_end_s
        {
            config.osc_amplitude * (omega * t).sin()
        } else {
            0.0
        };
        let drive = config.envelope.value(t) * (noise + gated);
        values.push(filter.step(drive) + config.base_frequency_hz);
    }
    let annotations = if config.osc_amplitude > 0.0 {
        vec![EventAnnotation {
            start_s: config.osc_start_s,
            end_s: config.osc_end_s,
            frequency_hz: config.osc_frequency_hz,
            kind: EventKind::Oscillation,
        }]
    } else {
        Vec::new()
    };
    Ok(TimeSeries { sample_rate_hz: config.sample_rate_hz, t0_epoch_s: 0.0, values, annotations })
}

/// Generates a frequency-sweep corpus: `n_per_freq` traces per entry of
/// `freqs_hz`, with per-trace randomized event placement, amplitude
/// (5 to 30 times the noise floor) and a +-0.3 Hz frequency jitter that
/// keeps each trace's rounded frequency equal to its nominal class.
/// Trace seeds are derived from `seed`, so the corpus is reproducible
/// and every trace differs.
pub fn sweep_dataset(
    base: &SignalConfig,
    freqs_hz: &[f64],
    n_per_freq: usize,
    seed: u64,
) -> Result<Vec<TimeSeries>> {
    if freqs_hz.is_empty() || n_per_freq == 0 {
        return Err(Error::config("freqs_hz", "sweep needs at least one frequency and one trace"));
    }
    for &f in freqs_hz {
        if !(1.0..=14.0).contains(&f) {
            return Err(Error::config(
                "osc_frequency_hz",
                format!("sweep frequency {f} outside [1, 14]"),
            ));
        }
    }
    let d = base.duration_s;
    let mut out = Vec::with_capacity(freqs_hz.len() * n_per_freq);
    for (fi, &f) in freqs_hz.iter().enumerate() {
        for k in 0..n_per_freq {
            let idx = (fi * n_per_freq + k) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, idx));
            let jitter: f64 = rng.gen_range(-0.3..0.3);
            let freq = (f + jitter).clamp(1.0, 14.0);
            let amplitude = base.noise_sigma * rng.gen_range(5.0..30.0);
            let ev_len = rng.gen_range(0.2 * d..0.4 * d);
            let ev_start = rng.gen_range(0.1 * d..(0.9 * d - ev_len));
            let config = SignalConfig {
                osc_frequency_hz: freq,
                osc_amplitude: amplitude,
                osc_start_s: ev_start,
                osc_end_s: ev_start + ev_len,
                seed: rng.gen(),
                ..base.clone()
            };
            out.push(generate_series(&config)?);
        }
    }
    Ok(out)
}

/// SplitMix64 step used to derive independent per-trace seeds.
pub(crate) fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x1234_5678_9ABC_DEF1);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
