//! Evaluation quantities: average normalized squared error (ANSE), averaged
//! periodogram power spectra, and the run log they are computed from.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::adaptive::ControlFilterState;
use crate::error::{Error, Result};
use crate::protocol::CommEvent;
use crate::scalar::Real;

/// Expectation window of the ANSE, in samples.
pub const DEFAULT_ANSE_WINDOW: usize = 5000;

/// Segment length of the spectrum estimator.
pub const SPECTRUM_SEGMENT: usize = 4096;

/// Power floor in linear units; empty bins read `-300 dB`.
pub const SPECTRUM_FLOOR: f64 = 1e-30;

/// Everything recorded during one scenario run.
#[derive(Debug, Clone)]
pub struct RunLog<T> {
    pub fs: f64,
    /// `errors[k][n] = e_k(n)`.
    pub errors: Vec<Vec<T>>,
    /// `disturbances[k][n] = d_k(n)`.
    pub disturbances: Vec<Vec<T>>,
    /// Weight-difference exchanges (empty for the per-sample gradient policy,
    /// whose rounds are only counted).
    pub events: Vec<CommEvent<T>>,
    /// Number of communication rounds, whatever the policy.
    pub event_count: usize,
    /// `(sample, |w_k|_2 per node)` every `trace_stride` samples and at the end.
    pub weight_norms: Vec<(usize, Vec<f64>)>,
    pub final_states: Vec<ControlFilterState<T>>,
}

impl<T: Real> RunLog<T> {
    pub fn nodes(&self) -> usize {
        self.errors.len()
    }

    pub fn samples(&self) -> usize {
        self.errors.first().map_or(0, Vec::len)
    }

    /// ANSE after `n` samples, over the trailing `window` samples.
    ///
    /// `Ok(None)` when some node has zero disturbance power in the window.
    pub fn anse(&self, n: usize, window: usize) -> Result<Option<f64>> {
        anse(&self.errors, &self.disturbances, n, window)
    }

    /// ANSE after every sample: entry `i` covers the window ending at sample
    /// `i`; `None` marks warm-up (`i + 1 < window`) or undefined values.
    pub fn anse_series(&self, window: usize) -> Vec<Option<f64>> {
        anse_series(&self.errors, &self.disturbances, window)
    }
}

fn check_shapes<T>(errors: &[Vec<T>], disturbances: &[Vec<T>]) -> Result<usize> {
    if errors.is_empty() || errors.len() != disturbances.len() {
        return Err(Error::Input("error and disturbance logs must cover the same nodes".into()));
    }
    let len = errors[0].len();
    if errors.iter().chain(disturbances).any(|v| v.len() != len) {
        return Err(Error::Input("per-node logs differ in length".into()));
    }
    Ok(len)
}

/// `(1/K) sum_k 10 log10(mean(e_k^2) / mean(d_k^2))` over samples `[n - window, n)`.
pub fn anse<T: Real>(errors: &[Vec<T>], disturbances: &[Vec<T>], n: usize, window: usize) -> Result<Option<f64>> {
    let len = check_shapes(errors, disturbances)?;
    if window == 0 || n < window || n > len {
        return Err(Error::NotReady(format!("ANSE needs {window} <= n <= {len}, got n = {n}")));
    }
    let range = n - window..n;
    let mut acc = 0.0;
    for (e, d) in errors.iter().zip(disturbances) {
        let pe: f64 = e[range.clone()].iter().map(|x| x.as_f64().powi(2)).sum();
        let pd: f64 = d[range.clone()].iter().map(|x| x.as_f64().powi(2)).sum();
        if pd == 0.0 {
            return Ok(None);
        }
        acc += 10.0 * (pe.max(f64::MIN_POSITIVE) / pd).log10();
    }
    Ok(Some(acc / errors.len() as f64))
}

/// Trailing-window ANSE for every sample (see [`RunLog::anse_series`]).
pub fn anse_series<T: Real>(errors: &[Vec<T>], disturbances: &[Vec<T>], window: usize) -> Vec<Option<f64>> {
    let Ok(len) = check_shapes(errors, disturbances) else {
        return Vec::new();
    };
    let prefix = |v: &[T]| {
        let mut p = Vec::with_capacity(v.len() + 1);
        p.push(0.0f64);
        let mut s = 0.0;
        for x in v {
            s += x.as_f64().powi(2);
            p.push(s);
        }
        p
    };
    let pe: Vec<Vec<f64>> = errors.iter().map(|v| prefix(v)).collect();
    let pd: Vec<Vec<f64>> = disturbances.iter().map(|v| prefix(v)).collect();
    let k = errors.len() as f64;
    (1..=len)
        .map(|n| {
            if window == 0 || n < window {
                return None;
            }
            let mut acc = 0.0;
            for (e, d) in pe.iter().zip(&pd) {
                let se = (e[n] - e[n - window]).max(0.0);
                let sd = d[n] - d[n - window];
                if !(sd > 0.0) {
                    return None;
                }
                acc += 10.0 * (se.max(f64::MIN_POSITIVE) / sd).log10();
            }
            Some(acc / k)
        })
        .collect()
}

/// Averaged periodogram: 4096-sample periodic-Hann segments with 50 % overlap,
/// one-sided. Scaled as a power spectrum, so a sinusoid of amplitude `A` centred
/// on a bin reads `10 log10(A^2 / 2)` dB (its mean square; -3.01 dB for `A = 1`).
///
/// Returns `(frequency_hz, power_db)` for bins `0..=4096/2`.
pub fn power_spectrum(signal: &[f64], fs: f64) -> Result<Vec<(f64, f64)>> {
    let n = SPECTRUM_SEGMENT;
    if signal.len() < n {
        return Err(Error::NotReady(format!("spectrum needs at least {n} samples, got {}", signal.len())));
    }
    let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
    let wsum: f64 = window.iter().sum();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let hop = n / 2;
    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut segments = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut start = 0;
    while start + n <= signal.len() {
        for (b, (x, w)) in buf.iter_mut().zip(signal[start..start + n].iter().zip(&window)) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let scale = 1.0 / (segments as f64 * wsum * wsum);
    Ok(acc
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let one_sided = if i == 0 || i == n / 2 { 1.0 } else { 2.0 };
            let power = (p * scale * one_sided).max(SPECTRUM_FLOOR);
            (i as f64 * fs / n as f64, 10.0 * power.log10())
        })
        .collect())
}
