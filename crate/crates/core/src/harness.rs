//! Scenario configuration and the per-sample simulation loop.
//!
//! One sample proceeds in a fixed order for every algorithm:
//! reference -> disturbances -> control outputs -> residual errors ->
//! filtered references -> filter updates -> window-boundary triggers and
//! exchanges.

use std::collections::VecDeque;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::adaptive::{
    control_output, fxlms_update, mefxlms_update, mgdfxlms_update, wcfxlms_update, ControlFilterState,
    FilteredReferenceBank,
};
use crate::compensation::{estimate_compensation, CompensationSet};
use crate::error::{config, Error, Result};
use crate::metrics::{RunLog, DEFAULT_ANSE_WINDOW};
use crate::protocol::{
    execute_async_event, execute_sync_event, mwd_combine, weight_difference, CommEvent, EventTag, PolicyKind,
    TransmitterReset, TriggerMonitor,
};
use crate::scalar::{all_finite, norm_sq, Real};
use crate::scene::{disturbance, factorable_scene, perturb_estimates, residual_error, synthesize_scene};
use crate::scene::{AcousticScene, PathSynthesisSpec};
use crate::signal::{ExhaustPolicy, NoiseSource, TappedDelayLine, Tone};

/// Control algorithm driving the nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Filters stay at zero (normalization reference).
    Off,
    /// Decentralized FxLMS, no communication.
    Fxlms,
    /// Decentralized weight-constrained FxLMS around a zero center, no communication.
    Wcfxlms,
    /// Centralized multiple-error FxLMS.
    Mefxlms,
    /// Distributed mixed-gradient FxLMS, gradients exchanged every sample.
    Mgdfxlms,
    /// Weight-constrained FxLMS with synchronous weight-difference fusion.
    Scdmcanc,
    /// Weight-constrained FxLMS with asynchronous weight-difference fusion.
    Acdmcanc,
}

impl Algorithm {
    pub fn policy(self) -> PolicyKind {
        match self {
            Algorithm::Off | Algorithm::Fxlms | Algorithm::Wcfxlms | Algorithm::Mefxlms => PolicyKind::None,
            Algorithm::Mgdfxlms => PolicyKind::PerSampleGradient,
            Algorithm::Scdmcanc => PolicyKind::SyncMwd,
            Algorithm::Acdmcanc => PolicyKind::AsyncMwd,
        }
    }

    /// Whether the penalty factor takes part in the update.
    pub fn is_constrained(self) -> bool {
        matches!(self, Algorithm::Wcfxlms | Algorithm::Scdmcanc | Algorithm::Acdmcanc)
    }

    pub fn needs_compensation(self) -> bool {
        matches!(self, Algorithm::Mgdfxlms | Algorithm::Scdmcanc | Algorithm::Acdmcanc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Off => "off",
            Algorithm::Fxlms => "fxlms",
            Algorithm::Wcfxlms => "wcfxlms",
            Algorithm::Mefxlms => "mefxlms",
            Algorithm::Mgdfxlms => "mgdfxlms",
            Algorithm::Scdmcanc => "scdmcanc",
            Algorithm::Acdmcanc => "acdmcanc",
        }
    }
}

/// A value shared by all nodes or given per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerNode {
    All(f64),
    Each(Vec<f64>),
}

impl PerNode {
    pub fn resolve(&self, k: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            PerNode::All(v) => Ok(vec![*v; k]),
            PerNode::Each(v) if v.len() == k => Ok(v.clone()),
            PerNode::Each(v) => Err(config(format!("{what} lists {} values for {k} nodes", v.len()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneSource {
    Synthesize,
    Factorable,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub source: SceneSource,
    /// Scene archive, for `source = "file"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthesis: PathSynthesisSpec,
    /// Estimation error of the secondary-path models in dB; absent means exact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatch_db: Option<f64>,
    #[serde(default)]
    pub mismatch_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            source: SceneSource::Synthesize,
            path: None,
            synthesis: PathSynthesisSpec::default(),
            mismatch_db: None,
            mismatch_seed: 0,
        }
    }
}

impl SceneConfig {
    /// Builds (or loads) the scene for `k` nodes.
    pub fn build<T: Real>(&self, k: usize, fs: f64, compensation_len: usize) -> Result<AcousticScene<T>> {
        let scene = match self.source {
            SceneSource::Synthesize => synthesize_scene(&self.synthesis, k, fs)?,
            SceneSource::Factorable => factorable_scene(&self.synthesis, k, compensation_len, fs)?.scene,
            SceneSource::File => {
                let path = self.path.as_ref().ok_or_else(|| config("scene.path is required for source = \"file\""))?;
                let scene: AcousticScene<T> = crate::archive::load_scene::<f64>(path)?.cast();
                if scene.nodes() != k {
                    return Err(config(format!(
                        "scene archive has K = {} but the configuration asks for {k}",
                        scene.nodes()
                    )));
                }
                if scene.fs() != fs {
                    return Err(config(format!(
                        "scene archive sampled at {} Hz, configuration at {fs} Hz",
                        scene.fs()
                    )));
                }
                scene
            }
        };
        match self.mismatch_db {
            Some(db) => perturb_estimates(&scene, db, self.mismatch_seed),
            None => Ok(scene),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKindConfig {
    Bandpass,
    Tonal,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub kind: NoiseKindConfig,
    pub low_hz: f64,
    pub high_hz: f64,
    /// RMS for bandpass noise, gain for file streams.
    pub amplitude: f64,
    pub seed: u64,
    pub tones: Vec<Tone>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub on_exhausted: ExhaustPolicy,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKindConfig::Bandpass,
            low_hz: 100.0,
            high_hz: 1000.0,
            amplitude: 1.0,
            seed: 1,
            tones: Vec::new(),
            path: None,
            on_exhausted: ExhaustPolicy::Loop,
        }
    }
}

impl NoiseConfig {
    pub fn build(&self, fs: f64) -> Result<NoiseSource> {
        match self.kind {
            NoiseKindConfig::Bandpass => {
                NoiseSource::bandpass(self.low_hz, self.high_hz, fs, self.amplitude, self.seed)
            }
            NoiseKindConfig::Tonal => NoiseSource::tonal(self.tones.clone(), fs),
            NoiseKindConfig::File => {
                let path = self.path.as_ref().ok_or_else(|| config("noise.path is required for kind = \"file\""))?;
                NoiseSource::from_wav(path, fs, self.amplitude, self.on_exhausted)
            }
        }
    }
}

/// Algorithm and its hyperparameters for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub mu: PerNode,
    /// Penalty factor; only used by the weight-constrained algorithms.
    #[serde(default = "default_alpha")]
    pub alpha: PerNode,
    /// Trigger evaluation period in seconds.
    #[serde(default = "default_period")]
    pub period_s: f64,
    #[serde(default)]
    pub hysteresis_db: f64,
    #[serde(default)]
    pub transmitter_reset: TransmitterReset,
    /// Link latency in samples applied to exchanged payloads.
    #[serde(default)]
    pub link_delay: usize,
}

fn default_alpha() -> PerNode {
    PerNode::All(0.0)
}

fn default_period() -> f64 {
    0.3
}

impl AlgorithmConfig {
    pub fn new(algorithm: Algorithm, mu: f64, alpha: f64) -> Self {
        Self {
            algorithm,
            label: None,
            mu: PerNode::All(mu),
            alpha: PerNode::All(alpha),
            period_s: default_period(),
            hysteresis_db: 0.0,
            transmitter_reset: TransmitterReset::Reset,
            link_delay: 0,
        }
    }

    pub fn run_id(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.algorithm.name().to_string())
    }
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub fs: f64,
    /// `K`.
    pub nodes: usize,
    /// `L_w`.
    pub control_len: usize,
    /// `L_c`.
    pub compensation_len: usize,
    pub duration_s: f64,
    #[serde(default = "default_anse_window")]
    pub anse_window: usize,
    /// Interval of the weight-norm trace in samples.
    #[serde(default = "default_trace_stride")]
    pub trace_stride: usize,
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub run: AlgorithmConfig,
}

fn default_anse_window() -> usize {
    DEFAULT_ANSE_WINDOW
}

fn default_trace_stride() -> usize {
    1000
}

impl SimConfig {
    /// Number of samples, requiring `duration_s * fs` to be an integer.
    pub fn sample_count(&self) -> Result<usize> {
        let n = self.duration_s * self.fs;
        if !(n >= 0.0 && n.is_finite()) || (n - n.round()).abs() > 1e-6 {
            return Err(config(format!(
                "duration {} s at {} Hz is not a whole number of samples",
                self.duration_s, self.fs
            )));
        }
        Ok(n.round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(config("fs must be positive"));
        }
        if self.nodes == 0 || self.control_len == 0 || self.compensation_len == 0 {
            return Err(config("nodes, control_len and compensation_len must be positive"));
        }
        if self.anse_window == 0 || self.trace_stride == 0 {
            return Err(config("anse_window and trace_stride must be positive"));
        }
        self.sample_count()?;
        self.run.mu.resolve(self.nodes, "mu")?;
        self.run.alpha.resolve(self.nodes, "alpha")?;
        Ok(())
    }
}

#[cfg(debug_assertions)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Idle,
    Reference,
    Disturbance,
    Control,
    Residual,
    FilteredReference,
    Update,
    Exchange,
}

/// Checks that each sample visits the pipeline stages in order.
#[derive(Debug, Clone, Default)]
struct StageAudit {
    #[cfg(debug_assertions)]
    last: Option<Stage>,
}

impl StageAudit {
    #[cfg(debug_assertions)]
    fn enter(&mut self, stage: Stage) {
        let last = self.last.unwrap_or(Stage::Idle);
        assert!(stage > last, "pipeline stage {stage:?} entered after {last:?}");
        self.last = Some(stage);
    }

    #[cfg(debug_assertions)]
    fn finish(&mut self) {
        self.last = None;
    }
}

macro_rules! audit {
    ($a:expr, $stage:ident) => {
        #[cfg(debug_assertions)]
        $a.enter(Stage::$stage);
    };
}

#[derive(Debug, Clone)]
struct PendingFusion<T> {
    due: usize,
    nodes: Vec<usize>,
    sample: usize,
    tag: EventTag,
    // peer payloads as sent
    payloads: Vec<Vec<T>>,
}

/// What one call to [`Simulation::step`] produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T> {
    pub disturbances: Vec<T>,
    pub errors: Vec<T>,
    pub events: Vec<CommEvent<T>>,
}

/// Sample-by-sample simulation over a fixed scene.
#[derive(Debug, Clone)]
pub struct Simulation<'a, T: Real> {
    scene: &'a AcousticScene<T>,
    comp: Option<&'a CompensationSet<T>>,
    algorithm: Algorithm,
    reset: TransmitterReset,
    link_delay: usize,
    states: Vec<ControlFilterState<T>>,
    reference: TappedDelayLine<T>,
    control_lines: Vec<TappedDelayLine<T>>,
    bank: FilteredReferenceBank<T>,
    monitors: Vec<TriggerMonitor>,
    gradient_len: usize,
    gradients: VecDeque<Vec<Vec<T>>>,
    pending: VecDeque<PendingFusion<T>>,
    rounds: usize,
    n: usize,
    audit: StageAudit,
}

impl<'a, T: Real> Simulation<'a, T> {
    pub fn new(
        scene: &'a AcousticScene<T>,
        comp: Option<&'a CompensationSet<T>>,
        run: &AlgorithmConfig,
        control_len: usize,
    ) -> Result<Self> {
        let k = scene.nodes();
        let mu = run.mu.resolve(k, "mu")?;
        let alpha = run.alpha.resolve(k, "alpha")?;
        let states = mu
            .iter()
            .zip(&alpha)
            .map(|(&m, &a)| {
                let a = if run.algorithm.is_constrained() { a } else { 0.0 };
                ControlFilterState::new(control_len, T::lit(m), T::lit(a))
            })
            .collect::<Result<Vec<_>>>()?;
        if run.algorithm.needs_compensation() && k > 1 {
            let c = comp.ok_or_else(|| config(format!("{} needs compensation filters", run.algorithm.name())))?;
            if c.nodes() != k {
                return Err(config(format!("compensation set for K = {} used with K = {k}", c.nodes())));
            }
        }
        let gradient_len = match (run.algorithm, comp) {
            (Algorithm::Mgdfxlms, Some(c)) => control_len + c.filter_len() - 1,
            _ => control_len,
        };
        let bank = match run.algorithm {
            Algorithm::Mefxlms => FilteredReferenceBank::full(k, control_len),
            _ => FilteredReferenceBank::self_only(k, gradient_len),
        };
        let est_len = scene.secondary_est().path_len();
        let ref_cap = control_len.max(scene.primary_len()).max(est_len);
        let monitors = if matches!(run.algorithm, Algorithm::Scdmcanc | Algorithm::Acdmcanc) {
            (0..k)
                .map(|_| TriggerMonitor::new(run.period_s, scene.fs())?.with_hysteresis(run.hysteresis_db))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            scene,
            comp,
            algorithm: run.algorithm,
            reset: run.transmitter_reset,
            link_delay: run.link_delay,
            states,
            reference: TappedDelayLine::new(ref_cap),
            control_lines: (0..k).map(|_| TappedDelayLine::new(scene.secondary_len())).collect(),
            bank,
            monitors,
            gradient_len,
            gradients: VecDeque::new(),
            pending: VecDeque::new(),
            rounds: 0,
            n: 0,
            audit: StageAudit::default(),
        })
    }

    pub fn states(&self) -> &[ControlFilterState<T>] {
        &self.states
    }

    /// Mutable access for warm starts and external resets between samples.
    pub fn states_mut(&mut self) -> &mut [ControlFilterState<T>] {
        &mut self.states
    }

    pub fn into_states(self) -> Vec<ControlFilterState<T>> {
        self.states
    }

    /// Samples processed so far.
    pub fn position(&self) -> usize {
        self.n
    }

    /// Communication rounds so far.
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Advances by one reference sample.
    pub fn step(&mut self, x: T) -> Result<StepRecord<T>> {
        let k = self.scene.nodes();
        let n = self.n;
        audit!(self.audit, Reference);
        self.reference.push(x);

        audit!(self.audit, Disturbance);
        let d = (0..k).map(|i| disturbance(self.scene, i, &self.reference)).collect::<Result<Vec<T>>>()?;

        audit!(self.audit, Control);
        for (state, line) in self.states.iter().zip(self.control_lines.iter_mut()) {
            line.push(control_output(state, &self.reference)?);
        }

        audit!(self.audit, Residual);
        let e = (0..k).map(|m| residual_error(self.scene, m, d[m], &self.control_lines)).collect::<Result<Vec<T>>>()?;
        if let Some(node) = e.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node, sample: n, quantity: "error signal" });
        }

        audit!(self.audit, FilteredReference);
        self.bank.feed(self.scene, &self.reference)?;

        audit!(self.audit, Update);
        self.update(&e)?;
        for (node, s) in self.states.iter().enumerate() {
            if !all_finite(s.weights()) {
                return Err(Error::NonFinite { node, sample: n, quantity: "control filter weight" });
            }
        }

        audit!(self.audit, Exchange);
        let events = self.exchange(&e)?;
        #[cfg(debug_assertions)]
        self.audit.finish();
        self.n += 1;
        Ok(StepRecord { disturbances: d, errors: e, events })
    }

    fn update(&mut self, e: &[T]) -> Result<()> {
        match self.algorithm {
            Algorithm::Off => {}
            Algorithm::Fxlms => {
                for (i, s) in self.states.iter_mut().enumerate() {
                    fxlms_update(s, self.bank.line(i, i)?, e[i])?;
                }
            }
            Algorithm::Wcfxlms | Algorithm::Scdmcanc | Algorithm::Acdmcanc => {
                for (i, s) in self.states.iter_mut().enumerate() {
                    wcfxlms_update(s, self.bank.line(i, i)?, e[i])?;
                }
            }
            Algorithm::Mefxlms => mefxlms_update(&mut self.states, &self.bank, e)?,
            Algorithm::Mgdfxlms => self.mgdfxlms(e)?,
        }
        Ok(())
    }

    fn mgdfxlms(&mut self, e: &[T]) -> Result<()> {
        let k = self.states.len();
        let len = self.gradient_len;
        let grads = (0..k)
            .map(|i| {
                let g = self.states[i].mu() * e[i];
                Ok(self.bank.line(i, i)?.recent(len).iter().map(|&x| g * x).collect())
            })
            .collect::<Result<Vec<Vec<T>>>>()?;
        self.gradients.push_back(grads);
        if self.gradients.len() > self.link_delay + 1 {
            self.gradients.pop_front();
        }
        let delayed = (self.gradients.len() == self.link_delay + 1).then(|| &self.gradients[0]);
        let current = self.gradients.back().expect("just pushed");
        for (i, state) in self.states.iter_mut().enumerate() {
            let received: Vec<_> = match (delayed, self.comp) {
                (Some(g), Some(comp)) => (0..k)
                    .filter(|&m| m != i)
                    .map(|m| {
                        comp.filter(m, i)
                            .map(|c| (g[m].as_slice(), c))
                            .ok_or_else(|| config(format!("missing compensation filter ({m}, {i})")))
                    })
                    .collect::<Result<_>>()?,
                _ => Vec::new(),
            };
            mgdfxlms_update(state, &current[i], &received)?;
        }
        self.rounds += 1;
        Ok(())
    }

    fn exchange(&mut self, e: &[T]) -> Result<Vec<CommEvent<T>>> {
        let n = self.n;
        let mut events = Vec::new();
        if self.monitors.is_empty() {
            return Ok(events);
        }
        let mut fired = Vec::new();
        for (i, (mon, &ei)) in self.monitors.iter_mut().zip(e).enumerate() {
            if let Some((_, true)) = mon.observe(ei.as_f64()) {
                fired.push(i);
            }
        }
        let single;
        let comp = match self.comp {
            Some(c) => c,
            None if self.states.len() == 1 => {
                single = CompensationSet::identity(1, 1);
                &single
            }
            None => return Err(config("weight-difference fusion needs compensation filters")),
        };
        if self.link_delay == 0 {
            if fired.is_empty() {
                return Ok(events);
            }
            match self.algorithm {
                Algorithm::Acdmcanc => {
                    for &r in &fired {
                        events.push(execute_async_event(&mut self.states, r, comp, self.reset, n)?);
                    }
                }
                _ => events.push(execute_sync_event(&mut self.states, &fired, comp, n)?),
            }
            self.rounds += events.len();
            return Ok(events);
        }

        // Delayed links: payloads leave now and are fused `link_delay` samples later.
        if !fired.is_empty() {
            let phis: Vec<Vec<T>> = self.states.iter().map(weight_difference).collect();
            let (tag, groups): (EventTag, Vec<Vec<usize>>) = match self.algorithm {
                Algorithm::Acdmcanc => (EventTag::Async, fired.iter().map(|&r| vec![r]).collect()),
                _ => (EventTag::Sync, vec![fired.clone()]),
            };
            for nodes in groups {
                if tag == EventTag::Async && self.reset == TransmitterReset::Reset {
                    for (m, s) in self.states.iter_mut().enumerate() {
                        if m != nodes[0] {
                            s.reset_center();
                        }
                    }
                }
                self.pending.push_back(PendingFusion {
                    due: n + self.link_delay,
                    nodes,
                    sample: n,
                    tag,
                    payloads: phis.clone(),
                });
            }
        }
        while self.pending.front().is_some_and(|p| p.due <= n) {
            let p = self.pending.pop_front().expect("checked");
            let receivers: Vec<usize> = match p.tag {
                EventTag::Async => p.nodes.clone(),
                EventTag::Sync => (0..self.states.len()).collect(),
            };
            let mut fused = Vec::with_capacity(receivers.len());
            for &r in &receivers {
                let own = weight_difference(&self.states[r]);
                let received = (0..self.states.len())
                    .filter(|&m| m != r)
                    .map(|m| {
                        comp.filter(m, r)
                            .map(|c| (p.payloads[m].as_slice(), c))
                            .ok_or_else(|| config(format!("missing compensation filter ({m}, {r})")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                fused.push(mwd_combine(&self.states[r], &own, &received)?);
            }
            for (&r, f) in receivers.iter().zip(&fused) {
                self.states[r].snap_to(f);
            }
            events.push(CommEvent {
                sample: p.sample,
                requester: p.nodes[0],
                triggered: p.nodes,
                payloads: p.payloads,
                tag: p.tag,
            });
        }
        self.rounds += events.len();
        Ok(events)
    }
}

/// Runs `run` over an already built scene and noise source.
///
/// A file-backed source with the stop policy ends the run early and cleanly.
pub fn run_with<T: Real>(
    config: &SimConfig,
    scene: &AcousticScene<T>,
    comp: Option<&CompensationSet<T>>,
    mut noise: NoiseSource,
) -> Result<RunLog<T>> {
    config.validate()?;
    if scene.nodes() != config.nodes {
        return Err(crate::error::config(format!(
            "scene has K = {} but configuration asks for {}",
            scene.nodes(),
            config.nodes
        )));
    }
    let total = config.sample_count()?;
    let k = scene.nodes();
    let mut sim = Simulation::new(scene, comp, &config.run, config.control_len)?;
    let mut errors = vec![Vec::with_capacity(total); k];
    let mut disturbances = vec![Vec::with_capacity(total); k];
    let mut events = Vec::new();
    let mut weight_norms = Vec::new();
    for n in 0..total {
        let Some(x) = noise.next_sample() else { break };
        let rec = sim.step(T::lit(x))?;
        for i in 0..k {
            errors[i].push(rec.errors[i]);
            disturbances[i].push(rec.disturbances[i]);
        }
        events.extend(rec.events);
        if (n + 1) % config.trace_stride == 0 {
            weight_norms.push((n + 1, norms(sim.states())));
        }
    }
    let done = sim.position();
    if weight_norms.last().map(|w| w.0) != Some(done) {
        weight_norms.push((done, norms(sim.states())));
    }
    let event_count = sim.rounds();
    Ok(RunLog {
        fs: config.fs,
        errors,
        disturbances,
        events,
        event_count,
        weight_norms,
        final_states: sim.into_states(),
    })
}

fn norms<T: Real>(states: &[ControlFilterState<T>]) -> Vec<f64> {
    states.iter().map(|s| norm_sq(s.weights()).as_f64().sqrt()).collect()
}

/// Scene and compensation filters for a configuration.
pub fn prepare<T: Real>(config: &SimConfig) -> Result<(AcousticScene<T>, Option<CompensationSet<T>>)> {
    config.validate()?;
    let scene: AcousticScene<T> = config.scene.build(config.nodes, config.fs, config.compensation_len)?;
    let comp = if config.run.algorithm.needs_compensation() {
        Some(estimate_compensation(&scene, config.compensation_len)?)
    } else {
        None
    };
    Ok((scene, comp))
}

/// Builds everything from `config` and runs it.
pub fn run_scenario<T: Real>(config: &SimConfig) -> Result<RunLog<T>> {
    let (scene, comp) = prepare::<T>(config)?;
    let noise = config.noise.build(config.fs)?;
    run_with(config, &scene, comp.as_ref(), noise)
}
