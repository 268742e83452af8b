use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::wav::WavStream;
use crate::error::{config, Result};

/// Length of the linear-phase bandpass used for broadband noise.
pub const BANDPASS_TAPS: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub freq_hz: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// What to do when a file-backed source runs out of samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExhaustPolicy {
    #[default]
    Loop,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    BandpassWhite { low_hz: f64, high_hz: f64 },
    TonalMixture { tones: Vec<Tone> },
    FileStream { policy: ExhaustPolicy },
}

/// Deterministic primary-noise generator feeding the reference sensor.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    kind: NoiseKind,
    fs: f64,
    amplitude: f64,
    n: u64,
    state: State,
}

// the bandpass variant dominates and is the common case
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum State {
    Bandpass {
        rng: ChaCha8Rng,
        filter: Vec<f64>,
        // most recent first, fixed length BANDPASS_TAPS
        history: Vec<f64>,
        head: usize,
    },
    Tonal,
    File {
        samples: Vec<f64>,
        pos: usize,
    },
}

/// Windowed-sinc (Blackman) linear-phase bandpass, normalized to unit energy
/// so that unit-variance white input gives unit-variance output.
pub fn bandpass_design(low_hz: f64, high_hz: f64, fs: f64, taps: usize) -> Vec<f64> {
    assert!(taps % 2 == 1, "linear-phase design needs an odd tap count");
    let mid = (taps / 2) as f64;
    let lowpass = |fc: f64, i: f64| {
        let t = i - mid;
        let wc = 2.0 * fc / fs;
        if t == 0.0 {
            wc
        } else {
            (PI * wc * t).sin() / (PI * t)
        }
    };
    let denom = (taps - 1) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let i = i as f64;
            let w = 0.42 - 0.5 * (2.0 * PI * i / denom).cos() + 0.08 * (4.0 * PI * i / denom).cos();
            (lowpass(high_hz, i) - lowpass(low_hz, i)) * w
        })
        .collect();
    let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    h.iter_mut().for_each(|x| *x /= norm);
    h
}

impl NoiseSource {
    /// Gaussian white noise through a 255-tap bandpass; RMS equals `amplitude`.
    pub fn bandpass(low_hz: f64, high_hz: f64, fs: f64, amplitude: f64, seed: u64) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(config("sampling frequency must be positive"));
        }
        if !(0.0 <= low_hz && low_hz < high_hz && high_hz < fs / 2.0) {
            return Err(config(format!("bandpass edges [{low_hz}, {high_hz}] Hz invalid for fs = {fs} Hz")));
        }
        check_amplitude(amplitude)?;
        let filter = bandpass_design(low_hz, high_hz, fs, BANDPASS_TAPS);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Prime the filter so the stream is stationary from the first sample.
        let mut history = vec![0.0; 2 * BANDPASS_TAPS];
        for i in (0..BANDPASS_TAPS).rev() {
            let v: f64 = StandardNormal.sample(&mut rng);
            history[i] = v;
            history[i + BANDPASS_TAPS] = v;
        }
        Ok(Self {
            kind: NoiseKind::BandpassWhite { low_hz, high_hz },
            fs,
            amplitude,
            n: 0,
            state: State::Bandpass { rng, filter, history, head: 0 },
        })
    }

    /// Sum of sinusoids `a * sin(2*pi*f*n/fs + phase)`.
    pub fn tonal(tones: Vec<Tone>, fs: f64) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(config("sampling frequency must be positive"));
        }
        if tones.iter().any(|t| !t.freq_hz.is_finite() || !t.amplitude.is_finite() || !t.phase.is_finite()) {
            return Err(config("tone parameters must be finite"));
        }
        Ok(Self { kind: NoiseKind::TonalMixture { tones }, fs, amplitude: 1.0, n: 0, state: State::Tonal })
    }

    /// Samples from a mono WAV file whose rate must equal `fs`.
    pub fn from_wav(path: impl AsRef<Path>, fs: f64, amplitude: f64, policy: ExhaustPolicy) -> Result<Self> {
        check_amplitude(amplitude)?;
        let stream = WavStream::open(path, fs)?;
        Ok(Self::from_samples(stream.into_samples(), fs, amplitude, policy))
    }

    /// File-stream source over samples already in memory.
    pub fn from_samples(samples: Vec<f64>, fs: f64, amplitude: f64, policy: ExhaustPolicy) -> Self {
        Self { kind: NoiseKind::FileStream { policy }, fs, amplitude, n: 0, state: State::File { samples, pos: 0 } }
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    /// Number of samples emitted so far.
    pub fn position(&self) -> u64 {
        self.n
    }

    /// Next sample, or `None` once a file stream with the stop policy is exhausted.
    pub fn next_sample(&mut self) -> Option<f64> {
        let n = self.n;
        let v = match &mut self.state {
            State::Bandpass { rng, filter, history, head } => {
                let cap = BANDPASS_TAPS;
                *head = if *head == 0 { cap - 1 } else { *head - 1 };
                let v: f64 = StandardNormal.sample(rng);
                history[*head] = v;
                history[*head + cap] = v;
                let win = &history[*head..*head + cap];
                self.amplitude * filter.iter().zip(win).map(|(h, x)| h * x).sum::<f64>()
            }
            State::Tonal => {
                let NoiseKind::TonalMixture { tones } = &self.kind else { unreachable!() };
                let t = n as f64 / self.fs;
                tones.iter().map(|tone| tone.amplitude * (2.0 * PI * tone.freq_hz * t + tone.phase).sin()).sum()
            }
            State::File { samples, pos } => {
                if samples.is_empty() {
                    return None;
                }
                if *pos >= samples.len() {
                    match self.kind {
                        NoiseKind::FileStream { policy: ExhaustPolicy::Loop } => *pos = 0,
                        _ => return None,
                    }
                }
                let v = samples[*pos];
                *pos += 1;
                self.amplitude * v
            }
        };
        self.n += 1;
        Some(v)
    }
}

fn check_amplitude(a: f64) -> Result<()> {
    if a.is_finite() && a >= 0.0 {
        Ok(())
    } else {
        Err(config(format!("noise amplitude {a} must be finite and non-negative")))
    }
}
