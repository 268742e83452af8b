//! Control-filter update laws: control output, filtered reference, local
//! gradient, centralized multiple-error FxLMS, mixed-gradient FxLMS and
//! weight-constrained FxLMS.

use crate::compensation::accumulate_compensated;
use crate::error::{config, Error, Result};
use crate::scalar::{all_finite, dot, norm_sq, Real};
use crate::scene::AcousticScene;
use crate::signal::{fir_step, ImpulseResponse, TappedDelayLine};

/// One node's control filter `w`, its constraint center `w_center`, and the
/// step size / penalty it adapts with.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlFilterState<T> {
    pub(crate) w: Vec<T>,
    pub(crate) w_center: Vec<T>,
    mu: T,
    alpha: T,
}

impl<T: Real> ControlFilterState<T> {
    /// Zero filter and zero center of `len` taps.
    pub fn new(len: usize, mu: T, alpha: T) -> Result<Self> {
        if len == 0 {
            return Err(config("control filter length must be positive"));
        }
        if !(mu > T::zero() && mu.is_finite()) {
            return Err(config(format!("step size {mu} must be positive and finite")));
        }
        if !(alpha >= T::zero() && alpha.is_finite()) {
            return Err(config(format!("penalty factor {alpha} must be non-negative and finite")));
        }
        if mu * alpha >= T::one() {
            return Err(config(format!(
                "mu * alpha = {} must be below 1 or the penalty overshoots the center",
                mu * alpha
            )));
        }
        Ok(Self { w: vec![T::zero(); len], w_center: vec![T::zero(); len], mu, alpha })
    }

    /// Replaces filter and center, checking lengths and finiteness.
    pub fn with_weights(mut self, w: Vec<T>, w_center: Vec<T>) -> Result<Self> {
        if w.len() != self.w.len() || w_center.len() != self.w.len() {
            return Err(config("weight vectors must keep the filter length"));
        }
        if !all_finite(&w) || !all_finite(&w_center) {
            return Err(Error::Input("non-finite weights".into()));
        }
        self.w = w;
        self.w_center = w_center;
        Ok(self)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn weights(&self) -> &[T] {
        &self.w
    }

    pub fn center(&self) -> &[T] {
        &self.w_center
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Sets both filter and center to `w_new` (the effect of a fusion event).
    pub fn snap_to(&mut self, w_new: &[T]) {
        self.w.copy_from_slice(w_new);
        self.w_center.copy_from_slice(w_new);
    }

    /// Moves the center onto the current filter, zeroing the weight difference.
    pub fn reset_center(&mut self) {
        self.w_center.copy_from_slice(&self.w);
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.w) && all_finite(&self.w_center)
    }
}

/// Lines of filtered reference `x'_km = s_hat_mk * x`, one per `(k, m)` pair in use.
#[derive(Debug, Clone)]
pub struct FilteredReferenceBank<T> {
    k: usize,
    lines: Vec<Option<TappedDelayLine<T>>>,
}

impl<T: Real> FilteredReferenceBank<T> {
    /// All `K^2` lines, as needed by the centralized update.
    pub fn full(k: usize, capacity: usize) -> Self {
        Self { k, lines: (0..k * k).map(|_| Some(TappedDelayLine::new(capacity))).collect() }
    }

    /// Only the `x'_kk` lines used by the distributed algorithms.
    pub fn self_only(k: usize, capacity: usize) -> Self {
        Self { k, lines: (0..k * k).map(|i| (i / k == i % k).then(|| TappedDelayLine::new(capacity))).collect() }
    }

    pub fn nodes(&self) -> usize {
        self.k
    }

    /// `x'_km`: node `k`'s reference seen through the estimated path to sensor `m`.
    pub fn line(&self, k: usize, m: usize) -> Result<&TappedDelayLine<T>> {
        self.lines
            .get(k * self.k + m)
            .and_then(Option::as_ref)
            .ok_or_else(|| config(format!("filtered reference line x'_({k},{m}) is not in the bank")))
    }

    /// Pushes `x'_km(n)` into every line present.
    pub fn feed(&mut self, scene: &AcousticScene<T>, reference: &TappedDelayLine<T>) -> Result<()> {
        let est = scene.secondary_est();
        for (i, line) in self.lines.iter_mut().enumerate() {
            if let Some(line) = line {
                let (k, m) = (i / self.k, i % self.k);
                line.push(filtered_reference_step(reference, est.get(m, k))?);
            }
        }
        Ok(())
    }
}

/// `y_k(n) = w_k^T x(n)`.
#[inline]
pub fn control_output<T: Real>(state: &ControlFilterState<T>, reference: &TappedDelayLine<T>) -> Result<T> {
    let len = state.len();
    if reference.capacity() < len {
        return Err(config(format!(
            "reference line capacity {} shorter than control filter length {len}",
            reference.capacity()
        )));
    }
    Ok(dot(&state.w, reference.recent(len)))
}

/// One sample of `s_hat_mk * x`.
#[inline]
pub fn filtered_reference_step<T: Real>(reference: &TappedDelayLine<T>, s_hat: &ImpulseResponse<T>) -> Result<T> {
    fir_step(reference, s_hat)
}

/// `mu * e_k * x'_kk(n)` over `len` taps. `len` may exceed the filter length
/// when the gradient is exchanged for compensation.
pub fn gradient_of_len<T: Real>(mu: T, xprime: &TappedDelayLine<T>, e: T, len: usize) -> Result<Vec<T>> {
    if xprime.capacity() < len {
        return Err(config(format!(
            "filtered reference capacity {} shorter than gradient length {len}",
            xprime.capacity()
        )));
    }
    let g = mu * e;
    Ok(xprime.recent(len).iter().map(|&x| g * x).collect())
}

/// Local gradient `mu * x'_kk(n) * e_k(n)`. The step size is already inside,
/// so consumers add it without scaling again.
pub fn local_gradient<T: Real>(
    state: &ControlFilterState<T>,
    xprime_kk: &TappedDelayLine<T>,
    e_k: T,
) -> Result<Vec<T>> {
    gradient_of_len(state.mu, xprime_kk, e_k, state.len())
}

/// Plain single-channel FxLMS: `w += mu * x'_kk * e_k`.
pub fn fxlms_update<T: Real>(state: &mut ControlFilterState<T>, xprime_kk: &TappedDelayLine<T>, e_k: T) -> Result<()> {
    check_line(xprime_kk, state.len())?;
    let g = state.mu * e_k;
    let len = state.w.len();
    for (w, &x) in state.w.iter_mut().zip(xprime_kk.recent(len)) {
        *w += g * x;
    }
    Ok(())
}

/// Centralized update: `w_k += mu * sum_m x'_km * e_m` for every node.
pub fn mefxlms_update<T: Real>(
    states: &mut [ControlFilterState<T>],
    bank: &FilteredReferenceBank<T>,
    errors: &[T],
) -> Result<()> {
    if states.len() != errors.len() || bank.nodes() != errors.len() {
        return Err(config("node counts of states, bank and errors differ"));
    }
    for (k, state) in states.iter_mut().enumerate() {
        let len = state.len();
        for (m, &e) in errors.iter().enumerate() {
            let line = bank.line(k, m)?;
            check_line(line, len)?;
            let g = state.mu * e;
            for (w, &x) in state.w.iter_mut().zip(line.recent(len)) {
                *w += g * x;
            }
        }
    }
    Ok(())
}

/// Mixed-gradient update: `w_k += grad_k + sum_m C_mk(grad_m)` where
/// `C_mk` is [`apply_compensation`](crate::compensation::apply_compensation).
///
/// Received gradients may be longer than the filter (up to `L_w + L_c - 1`
/// taps), which makes the compensated cross term exact.
pub fn mgdfxlms_update<T: Real>(
    state: &mut ControlFilterState<T>,
    own_gradient: &[T],
    received: &[(&[T], &ImpulseResponse<T>)],
) -> Result<()> {
    let len = state.len();
    if own_gradient.len() < len {
        return Err(Error::Protocol(format!("own gradient has {} taps, filter has {len}", own_gradient.len())));
    }
    for (g, c) in received {
        if g.len() < len || g.len() > len + c.len() - 1 {
            return Err(Error::Protocol(format!(
                "received gradient has {} taps; expected {len}..={}",
                g.len(),
                len + c.len() - 1
            )));
        }
    }
    for (w, &g) in state.w.iter_mut().zip(own_gradient) {
        *w += g;
    }
    for (g, c) in received {
        accumulate_compensated(&mut state.w, g, c);
    }
    Ok(())
}

/// Weight-constrained FxLMS:
/// `w += mu * x'_kk * e_k + mu * alpha * (w_center - w)`.
pub fn wcfxlms_update<T: Real>(
    state: &mut ControlFilterState<T>,
    xprime_kk: &TappedDelayLine<T>,
    e_k: T,
) -> Result<()> {
    let len = state.len();
    check_line(xprime_kk, len)?;
    let g = state.mu * e_k;
    let leak = state.mu * state.alpha;
    for ((w, &c), &x) in state.w.iter_mut().zip(&state.w_center).zip(xprime_kk.recent(len)) {
        *w = *w + g * x + leak * (c - *w);
    }
    Ok(())
}

/// Instantaneous sample of the weight-constrained cost:
/// `e^2 + alpha * |w_center - w|^2`.
pub fn cost<T: Real>(e_k: T, state: &ControlFilterState<T>) -> T {
    let dev: T = state.w_center.iter().zip(&state.w).map(|(c, w)| (*c - *w) * (*c - *w)).sum();
    e_k * e_k + state.alpha * dev
}

/// `|w|_2`.
pub fn filter_norm<T: Real>(state: &ControlFilterState<T>) -> T {
    norm_sq(&state.w).sqrt()
}

fn check_line<T: Real>(line: &TappedDelayLine<T>, len: usize) -> Result<()> {
    if line.capacity() < len {
        Err(config(format!("filtered reference capacity {} shorter than filter length {len}", line.capacity())))
    } else {
        Ok(())
    }
}
