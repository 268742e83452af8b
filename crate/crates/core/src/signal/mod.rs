//! Streaming DSP primitives: FIR impulse responses, tapped delay lines,
//! per-sample convolution and primary-noise sources.

mod noise;
mod wav;

pub use noise::{bandpass_design, ExhaustPolicy, NoiseKind, NoiseSource, Tone};
pub use wav::WavStream;

use crate::error::{config, Error, Result};
use crate::scalar::{all_finite, dot, norm_sq, Real};

/// A finite FIR tap vector. Used for primary paths, secondary paths and their
/// estimates, compensation filters and control filters alike.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse<T> {
    taps: Vec<T>,
}

impl<T: Real> ImpulseResponse<T> {
    /// Wraps `taps`, rejecting empty or non-finite vectors.
    pub fn new(taps: Vec<T>) -> Result<Self> {
        if taps.is_empty() {
            return Err(config("impulse response must have at least one tap"));
        }
        if !all_finite(&taps) {
            return Err(Error::Input("impulse response contains non-finite taps".into()));
        }
        Ok(Self { taps })
    }

    /// `[1, 0, ..., 0]` of the given length.
    pub fn unit_impulse(len: usize) -> Self {
        Self::delay(0, len)
    }

    /// Pure delay of `delay` samples, zero padded to `len`.
    pub fn delay(delay: usize, len: usize) -> Self {
        assert!(delay < len, "delay {delay} does not fit in {len} taps");
        let mut taps = vec![T::zero(); len];
        taps[delay] = T::one();
        Self { taps }
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0);
        Self { taps: vec![T::zero(); len] }
    }

    #[inline]
    pub fn taps(&self) -> &[T] {
        &self.taps
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    /// Always false; kept for API symmetry with slices.
    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn energy(&self) -> T {
        norm_sq(&self.taps)
    }

    pub fn norm(&self) -> T {
        self.energy().sqrt()
    }

    /// Zero pads or truncates to `len` taps.
    pub fn resized(&self, len: usize) -> Result<Self> {
        let mut taps = self.taps.clone();
        taps.resize(len, T::zero());
        Self::new(taps)
    }

    pub fn into_taps(self) -> Vec<T> {
        self.taps
    }

    /// Converts to another scalar type.
    pub fn cast<U: Real>(&self) -> ImpulseResponse<U> {
        ImpulseResponse { taps: self.taps.iter().map(|t| U::lit(t.as_f64())).collect() }
    }
}

/// Most-recent-first history of a scalar stream. Index `i` is the sample
/// from `i` steps ago, so tap index equals delay in samples.
///
/// Samples are written twice into a buffer of length `2 * capacity`, which
/// keeps the current window contiguous without shifting on every push.
#[derive(Debug, Clone)]
pub struct TappedDelayLine<T> {
    buf: Vec<T>,
    head: usize,
    capacity: usize,
}

impl<T: Real> TappedDelayLine<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "delay line capacity must be positive");
        Self { buf: vec![T::zero(); 2 * capacity], head: 0, capacity }
    }

    #[inline]
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Pushes a new sample; the oldest is discarded.
    #[inline]
    pub fn push(&mut self, x: T) {
        self.head = if self.head == 0 { self.capacity - 1 } else { self.head - 1 };
        self.buf[self.head] = x;
        self.buf[self.head + self.capacity] = x;
    }

    /// Sample from `delay` steps ago.
    pub fn get(&self, delay: usize) -> Result<T> {
        if delay >= self.capacity {
            return Err(config(format!("read at delay {delay} beyond delay line capacity {}", self.capacity)));
        }
        Ok(self.buf[self.head + delay])
    }

    /// The whole history, most recent first.
    #[inline]
    pub fn history(&self) -> &[T] {
        &self.buf[self.head..self.head + self.capacity]
    }

    /// The `len` most recent samples. Panics if `len > capacity`.
    #[inline]
    pub fn recent(&self, len: usize) -> &[T] {
        &self.history()[..len]
    }

    pub fn clear(&mut self) {
        self.buf.iter_mut().for_each(|x| *x = T::zero());
        self.head = 0;
    }
}

/// One output sample of `h * x`: `sum_i h[i] * line[i]`. Does not touch the line.
#[inline]
pub fn fir_step<T: Real>(line: &TappedDelayLine<T>, h: &ImpulseResponse<T>) -> Result<T> {
    if line.capacity() < h.len() {
        return Err(config(format!("delay line capacity {} shorter than filter length {}", line.capacity(), h.len())));
    }
    Ok(dot(h.taps(), line.recent(h.len())))
}

/// Full linear convolution; the result has `a.len() + b.len() - 1` taps.
pub fn convolve_full<T: Real>(a: &ImpulseResponse<T>, b: &ImpulseResponse<T>) -> ImpulseResponse<T> {
    ImpulseResponse { taps: convolve_slices(a.taps(), b.taps()) }
}

pub(crate) fn convolve_slices<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == T::zero() {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(b) {
            *o += x * y;
        }
    }
    out
}
