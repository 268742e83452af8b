//! Event-triggered communication between nodes.
//!
//! Each node watches its residual noise level (RNL) in non-overlapping
//! windows of `T * fs` samples. When a window's average RNL is worse than the
//! previous window's, the node requests an exchange: peers send their weight
//! difference `phi_m = w_m - w_center_m`, and the requester fuses them into a
//! new filter/center through the mixed weight difference (MWD) rule.

use serde::{Deserialize, Serialize};

use crate::adaptive::ControlFilterState;
use crate::compensation::{accumulate_compensated, CompensationSet};
use crate::error::{config, Error, Result};
use crate::scalar::Real;
use crate::signal::ImpulseResponse;

/// Floor applied to `e^2` before taking the logarithm.
pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-30;

/// Instantaneous residual noise level `10 log10(max(e^2, floor))` in dB.
#[inline]
pub fn rnl(e: f64, epsilon_floor: f64) -> f64 {
    10.0 * (e * e).max(epsilon_floor).log10()
}

/// Per-node windowed RNL monitor deciding when to request communication.
#[derive(Debug, Clone)]
pub struct TriggerMonitor {
    window_len: usize,
    epsilon_floor: f64,
    hysteresis_db: f64,
    sum_db: f64,
    count: usize,
    prev_arnl: Option<f64>,
}

impl TriggerMonitor {
    /// Window of `round(period_s * fs)` samples.
    pub fn new(period_s: f64, fs: f64) -> Result<Self> {
        if !(period_s > 0.0 && fs > 0.0 && period_s.is_finite() && fs.is_finite()) {
            return Err(config("trigger period and sampling rate must be positive"));
        }
        let window_len = (period_s * fs).round() as usize;
        if window_len == 0 {
            return Err(config(format!("trigger period {period_s} s is shorter than one sample")));
        }
        Ok(Self {
            window_len,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            hysteresis_db: 0.0,
            sum_db: 0.0,
            count: 0,
            prev_arnl: None,
        })
    }

    pub fn with_hysteresis(mut self, db: f64) -> Result<Self> {
        if !(db >= 0.0 && db.is_finite()) {
            return Err(config("hysteresis must be finite and non-negative"));
        }
        self.hysteresis_db = db;
        Ok(self)
    }

    pub fn with_epsilon_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(config("epsilon floor must be positive"));
        }
        self.epsilon_floor = floor;
        Ok(self)
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn previous_arnl(&self) -> Option<f64> {
        self.prev_arnl
    }

    pub fn is_complete(&self) -> bool {
        self.count == self.window_len
    }

    /// Adds one error sample to the current window.
    pub fn push(&mut self, e: f64) {
        debug_assert!(self.count < self.window_len, "window not restarted");
        self.sum_db += rnl(e, self.epsilon_floor);
        self.count += 1;
    }

    /// Mean of the window's RNL values in dB (mean of logs, not log of mean).
    pub fn arnl(&self) -> Result<f64> {
        if !self.is_complete() {
            return Err(Error::NotReady(format!("{} of {} window samples", self.count, self.window_len)));
        }
        Ok(self.sum_db / self.window_len as f64)
    }

    /// True iff a previous ARNL exists and `current > previous + hysteresis`.
    /// The baseline becomes `current` regardless of the outcome.
    pub fn should_request(&mut self, current_arnl: f64) -> bool {
        let fire = matches!(self.prev_arnl, Some(prev) if current_arnl > prev + self.hysteresis_db);
        self.prev_arnl = Some(current_arnl);
        fire
    }

    pub fn start_window(&mut self) {
        self.sum_db = 0.0;
        self.count = 0;
    }

    /// Pushes `e`; at a window boundary returns `(arnl, request)` and starts
    /// the next window.
    pub fn observe(&mut self, e: f64) -> Option<(f64, bool)> {
        self.push(e);
        if !self.is_complete() {
            return None;
        }
        let arnl = self.sum_db / self.window_len as f64;
        let fire = self.should_request(arnl);
        self.start_window();
        Some((arnl, fire))
    }
}

/// Which communication scheme a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// No exchange at all.
    None,
    /// Every node broadcasts its local gradient each sample.
    PerSampleGradient,
    /// All nodes fuse weight differences once any node triggers.
    SyncMwd,
    /// Only the triggering node fuses weight differences.
    AsyncMwd,
}

/// What transmitters do with their center after sending `phi_m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransmitterReset {
    /// Transmitter sets `w_center <- w`, so the same `phi` is never sent twice.
    #[default]
    Reset,
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommPolicy {
    pub kind: PolicyKind,
    #[serde(default)]
    pub transmitter_reset: TransmitterReset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventTag {
    Async,
    Sync,
}

impl EventTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EventTag::Async => "async",
            EventTag::Sync => "sync",
        }
    }
}

/// Record of one weight-difference exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct CommEvent<T> {
    pub sample: usize,
    /// Lowest-id triggering node; for async events the only one.
    pub requester: usize,
    /// Every node whose trigger fired in this sample (sync events only list
    /// more than one).
    pub triggered: Vec<usize>,
    /// `phi_m` of every node as read before any state was written.
    pub payloads: Vec<Vec<T>>,
    pub tag: EventTag,
}

impl<T: Real> CommEvent<T> {
    pub fn payload_norms(&self) -> Vec<f64> {
        self.payloads.iter().map(|p| p.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt()).collect()
    }
}

/// `phi = w - w_center`, read after the sample's filter update.
pub fn weight_difference<T: Real>(state: &ControlFilterState<T>) -> Vec<T> {
    state.w.iter().zip(&state.w_center).map(|(w, c)| *w - *c).collect()
}

/// MWD fusion: `w_center + phi_k + sum_m C_mk(phi_m)`. The caller snaps both
/// filter and center of node `k` to the result.
pub fn mwd_combine<T: Real>(
    state: &ControlFilterState<T>,
    own_phi: &[T],
    received: &[(&[T], &ImpulseResponse<T>)],
) -> Result<Vec<T>> {
    let len = state.len();
    if own_phi.len() != len {
        return Err(Error::Protocol(format!("own weight difference has {} taps, filter has {len}", own_phi.len())));
    }
    if let Some((phi, _)) = received.iter().find(|(phi, _)| phi.len() != len) {
        return Err(Error::Protocol(format!("received weight difference has {} taps, filter has {len}", phi.len())));
    }
    // w_center + (w - w_center) need not round back to w; when own_phi is the
    // node's current weight difference the filter itself is the exact sum.
    let mut out: Vec<T> = state
        .w
        .iter()
        .zip(&state.w_center)
        .zip(own_phi)
        .map(|((w, c), p)| if *w - *c == *p { *w } else { *c + *p })
        .collect();
    for (phi, c) in received {
        accumulate_compensated(&mut out, phi, c);
    }
    Ok(out)
}

fn check_nodes<T: Real>(states: &[ControlFilterState<T>], comp: &CompensationSet<T>) -> Result<()> {
    if states.is_empty() || comp.nodes() != states.len() {
        return Err(config(format!("{} nodes but compensation set for K = {}", states.len(), comp.nodes())));
    }
    Ok(())
}

fn fuse_for<T: Real>(
    states: &[ControlFilterState<T>],
    k: usize,
    phis: &[Vec<T>],
    comp: &CompensationSet<T>,
) -> Result<Vec<T>> {
    let received = phis
        .iter()
        .enumerate()
        .filter(|(m, _)| *m != k)
        .map(|(m, phi)| {
            comp.filter(m, k)
                .map(|c| (phi.as_slice(), c))
                .ok_or_else(|| config(format!("missing compensation filter ({m}, {k})")))
        })
        .collect::<Result<Vec<_>>>()?;
    mwd_combine(&states[k], &phis[k], &received)
}

/// Asynchronous exchange requested by node `requester`: only the requester
/// fuses; the others keep adapting, optionally folding their sent `phi` into
/// their center.
pub fn execute_async_event<T: Real>(
    states: &mut [ControlFilterState<T>],
    requester: usize,
    comp: &CompensationSet<T>,
    reset: TransmitterReset,
    sample: usize,
) -> Result<CommEvent<T>> {
    check_nodes(states, comp)?;
    if requester >= states.len() {
        return Err(config(format!("requester {requester} out of range")));
    }
    let phis: Vec<Vec<T>> = states.iter().map(weight_difference).collect();
    let fused = fuse_for(states, requester, &phis, comp)?;
    states[requester].snap_to(&fused);
    if reset == TransmitterReset::Reset {
        for (m, s) in states.iter_mut().enumerate() {
            if m != requester {
                s.reset_center();
            }
        }
    }
    Ok(CommEvent { sample, requester, triggered: vec![requester], payloads: phis, tag: EventTag::Async })
}

/// Synchronous exchange: every node fuses from the same pre-event snapshot.
pub fn execute_sync_event<T: Real>(
    states: &mut [ControlFilterState<T>],
    triggered: &[usize],
    comp: &CompensationSet<T>,
    sample: usize,
) -> Result<CommEvent<T>> {
    check_nodes(states, comp)?;
    let requester = *triggered.iter().min().ok_or_else(|| config("synchronous event without a triggering node"))?;
    let phis: Vec<Vec<T>> = states.iter().map(weight_difference).collect();
    let fused = (0..states.len()).map(|k| fuse_for(states, k, &phis, comp)).collect::<Result<Vec<_>>>()?;
    for (s, f) in states.iter_mut().zip(&fused) {
        s.snap_to(f);
    }
    let mut triggered = triggered.to_vec();
    triggered.sort_unstable();
    triggered.dedup();
    Ok(CommEvent { sample, requester, triggered, payloads: phis, tag: EventTag::Sync })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(w: &[f64], c: &[f64]) -> ControlFilterState<f64> {
        ControlFilterState::new(w.len(), 1e-3, 1.0).unwrap().with_weights(w.to_vec(), c.to_vec()).unwrap()
    }

    #[test]
    fn rnl_values() {
        assert_eq!(rnl(1.0, DEFAULT_EPSILON_FLOOR), 0.0);
        assert!((rnl(0.1, DEFAULT_EPSILON_FLOOR) + 20.0).abs() < 1e-12);
        assert_eq!(rnl(0.0, 1e-30), -300.0);
    }

    #[test]
    fn window_length_from_period() {
        assert_eq!(TriggerMonitor::new(0.3, 16000.0).unwrap().window_len(), 4800);
        assert!(TriggerMonitor::new(0.0, 16000.0).is_err());
        assert!(TriggerMonitor::new(1e-6, 16000.0).is_err());
    }

    #[test]
    fn arnl_mean_of_logs() {
        let mut m = TriggerMonitor::new(1.0, 4.0).unwrap();
        for _ in 0..4 {
            m.push(1.0);
        }
        assert_eq!(m.arnl().unwrap(), 0.0);
        m.start_window();
        m.push(1.0);
        assert!(matches!(m.arnl(), Err(Error::NotReady(_))));
        m.push(1.0);
        m.push(0.1);
        m.push(0.1);
        assert!((m.arnl().unwrap() + 10.0).abs() < 1e-12);
    }

    #[test]
    fn request_rule_sequence() {
        let mut m = TriggerMonitor::new(1.0, 1.0).unwrap();
        let got: Vec<bool> = [-5.0, -8.0, -7.0].iter().map(|&a| m.should_request(a)).collect();
        assert_eq!(got, vec![false, false, true]);
        let mut m = TriggerMonitor::new(1.0, 1.0).unwrap();
        assert!((0..20).all(|i| !m.should_request(-(i as f64))));
        let mut m = TriggerMonitor::new(1.0, 1.0).unwrap();
        assert!((0..5).all(|_| !m.should_request(-3.0)));
        let mut m = TriggerMonitor::new(1.0, 1.0).unwrap().with_hysteresis(1.5).unwrap();
        assert!(!m.should_request(-8.0));
        assert!(!m.should_request(-7.0));
        assert!(m.should_request(-5.0));
    }

    #[test]
    fn no_trigger_in_first_window() {
        let mut m = TriggerMonitor::new(0.3, 16000.0).unwrap();
        for n in 0..4799 {
            assert_eq!(m.observe(1e3 * n as f64), None);
        }
        assert_eq!(m.observe(1e9).map(|(_, fire)| fire), Some(false));
    }

    #[test]
    fn weight_difference_cases() {
        assert_eq!(weight_difference(&st(&[0.5, 0.2], &[0.5, 0.2])), vec![0.0, 0.0]);
        assert_eq!(weight_difference(&st(&[0.5, -0.2], &[0.0, 0.0])), vec![0.5, -0.2]);
    }

    #[test]
    fn weight_difference_after_one_step() {
        use crate::adaptive::wcfxlms_update;
        use crate::signal::TappedDelayLine;
        let mut s = st(&[0.3, 0.1], &[0.3, 0.1]);
        let mut x = TappedDelayLine::new(2);
        x.push(0.25);
        x.push(-0.5);
        wcfxlms_update(&mut s, &x, 2.0).unwrap();
        let phi = weight_difference(&s);
        let mu = 1e-3;
        assert!((phi[0] - mu * -0.5 * 2.0).abs() < 1e-18);
        assert!((phi[1] - mu * 0.25 * 2.0).abs() < 1e-18);
    }

    #[test]
    fn mwd_cases() {
        let unit = ImpulseResponse::unit_impulse(1);
        let s = st(&[0.7], &[0.0]);
        assert_eq!(mwd_combine(&s, &[0.7], &[]).unwrap(), vec![0.7]);
        let s = st(&[0.0], &[0.0]);
        let got = mwd_combine(&s, &[0.2], &[(&[0.3][..], &unit), (&[-0.1][..], &unit)]).unwrap();
        assert!((got[0] - 0.4).abs() < 1e-15);
        let s = st(&[1.0, 1.0], &[0.5, 0.5]);
        assert_eq!(mwd_combine(&s, &[0.5, 0.5], &[(&[0.0, 0.0][..], &unit)]).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(mwd_combine(&s, &[0.5], &[]), Err(Error::Protocol(_))));
        assert!(matches!(mwd_combine(&s, &[0.5, 0.5], &[(&[0.1][..], &unit)]), Err(Error::Protocol(_))));
    }

    #[test]
    fn async_two_nodes_zero_peer_difference() {
        let comp = CompensationSet::identity(2, 1);
        for reset in [TransmitterReset::Reset, TransmitterReset::Keep] {
            let mut states = vec![st(&[0.4, 0.1], &[0.1, 0.0]), st(&[0.2, 0.2], &[0.2, 0.2])];
            let peer = states[1].clone();
            let ev = execute_async_event(&mut states, 0, &comp, reset, 10).unwrap();
            assert_eq!(states[0].weights(), &[0.4, 0.1]);
            assert_eq!(states[0].center(), &[0.4, 0.1]);
            assert_eq!(states[1], peer);
            assert_eq!(ev.requester, 0);
            assert_eq!(ev.tag, EventTag::Async);
        }
    }

    #[test]
    fn async_reset_folds_history() {
        let comp = CompensationSet::identity(2, 1);
        let mut states = vec![st(&[0.3], &[0.0]), st(&[0.5], &[0.0])];
        execute_async_event(&mut states, 0, &comp, TransmitterReset::Reset, 0).unwrap();
        // node 0 fused 0.3 + 0.5; node 1 folded its 0.5 into its center
        assert!((states[0].weights()[0] - 0.8).abs() < 1e-15);
        assert_eq!(states[1].center(), &[0.5]);
        let ev = execute_async_event(&mut states, 1, &comp, TransmitterReset::Reset, 1).unwrap();
        assert_eq!(ev.payloads[0], vec![0.0]);
        assert_eq!(ev.payloads[1], vec![0.0]);
        assert_eq!(states[1].weights(), &[0.5]);

        let mut keep = vec![st(&[0.3], &[0.0]), st(&[0.5], &[0.0])];
        execute_async_event(&mut keep, 0, &comp, TransmitterReset::Keep, 0).unwrap();
        let ev = execute_async_event(&mut keep, 1, &comp, TransmitterReset::Keep, 1).unwrap();
        assert_eq!(ev.payloads[1], vec![0.5]);
    }

    #[test]
    fn async_single_node_snaps_center() {
        let comp = CompensationSet::<f64>::identity(1, 3);
        let mut states = vec![st(&[0.1, 0.2, 0.3], &[0.0, 0.1, 0.0])];
        execute_async_event(&mut states, 0, &comp, TransmitterReset::Reset, 0).unwrap();
        assert_eq!(states[0].weights(), &[0.1, 0.2, 0.3]);
        assert_eq!(states[0].center(), &[0.1, 0.2, 0.3]);
        let mut sync = vec![st(&[0.1, 0.2, 0.3], &[0.0, 0.1, 0.0])];
        execute_sync_event(&mut sync, &[0], &comp, 0).unwrap();
        assert_eq!(sync, states);
    }

    #[test]
    fn sync_hand_trace_and_symmetry() {
        let comp = CompensationSet::identity(2, 1);
        let mut states = vec![st(&[0.3], &[0.1]), st(&[-0.2], &[0.0])];
        let ev = execute_sync_event(&mut states, &[1, 0], &comp, 5).unwrap();
        // w_center + phi_self + phi_other
        assert!((states[0].weights()[0] - (0.1 + 0.2 - 0.2)).abs() < 1e-15);
        assert!((states[1].weights()[0] - (0.0 - 0.2 + 0.2)).abs() < 1e-15);
        assert_eq!(ev.triggered, vec![0, 1]);
        assert_eq!(ev.requester, 0);

        let c = ImpulseResponse::new(vec![0.5, 0.25]).unwrap();
        let comp = CompensationSet::exact(2, 2, vec![((0, 1), c.clone()), ((1, 0), c)]).unwrap();
        let mut sym = vec![st(&[0.3, -0.1], &[0.1, 0.0]), st(&[0.3, -0.1], &[0.1, 0.0])];
        execute_sync_event(&mut sym, &[0], &comp, 0).unwrap();
        assert_eq!(sym[0], sym[1]);
        assert_eq!(sym[0].weights(), sym[0].center());
    }

    proptest! {
        #[test]
        fn fusion_bounded_and_snapped(
            w in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 3),
            c in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 3),
            taps in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 6),
            requester in 0usize..3,
        ) {
            let mut entries = Vec::new();
            let mut it = taps.into_iter();
            for m in 0..3 {
                for k in (0..3).filter(|&k| k != m) {
                    entries.push(((m, k), ImpulseResponse::new(it.next().unwrap()).unwrap()));
                }
            }
            let comp = CompensationSet::exact(3, 2, entries).unwrap();
            let mut states: Vec<_> = w.iter().zip(&c).map(|(w, c)| st(w, c)).collect();
            let before = states.clone();
            let ev = execute_async_event(&mut states, requester, &comp, TransmitterReset::Reset, 0).unwrap();
            let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
            let mut bound = l2(before[requester].center()) + l2(&ev.payloads[requester]);
            for m in (0..3).filter(|&m| m != requester) {
                bound += l1(&ev.payloads[m]) * l1(comp.filter(m, requester).unwrap().taps());
            }
            prop_assert!(l2(states[requester].center()) <= bound + 1e-12);
            prop_assert_eq!(states[requester].weights(), states[requester].center());
            prop_assert!(weight_difference(&states[requester]).iter().all(|x| *x == 0.0));
        }
    }
}
