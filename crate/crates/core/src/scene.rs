//! Acoustic environment: primary paths, true and estimated secondary-path
//! matrices, disturbance and residual-error generation, and synthetic path
//! generation.
//!
//! Secondary-path matrices are sensor-major: entry `[m][k]` is the path from
//! secondary source `k` to error sensor `m`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::compensation::CompensationSet;
use crate::error::{config, Error, Result};
use crate::scalar::{dot, Real};
use crate::signal::{convolve_full, fir_step, ImpulseResponse, TappedDelayLine};

/// `K x K` matrix of impulse responses, stored row-major (`[m][k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PathMatrix<T> {
    k: usize,
    paths: Vec<ImpulseResponse<T>>,
}

impl<T: Real> PathMatrix<T> {
    /// Builds from sensor-major rows. All paths must share one length.
    pub fn from_rows(rows: Vec<Vec<ImpulseResponse<T>>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(config("path matrix needs at least one node"));
        }
        if rows.iter().any(|r| r.len() != k) {
            return Err(config("path matrix must be square"));
        }
        let paths: Vec<_> = rows.into_iter().flatten().collect();
        let len = paths[0].len();
        if paths.iter().any(|p| p.len() != len) {
            return Err(config("all paths in a matrix must share one length"));
        }
        Ok(Self { k, paths })
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.k
    }

    /// Path from source `k` to sensor `m`.
    #[inline]
    pub fn get(&self, m: usize, k: usize) -> &ImpulseResponse<T> {
        &self.paths[m * self.k + k]
    }

    pub fn path_len(&self) -> usize {
        self.paths[0].len()
    }

    /// `((m, k), path)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &ImpulseResponse<T>)> {
        let k = self.k;
        self.paths.iter().enumerate().map(move |(i, p)| ((i / k, i % k), p))
    }

    fn map(&self, mut f: impl FnMut(usize, usize, &ImpulseResponse<T>) -> ImpulseResponse<T>) -> Self {
        let k = self.k;
        Self { k, paths: self.paths.iter().enumerate().map(|(i, p)| f(i / k, i % k, p)).collect() }
    }
}

/// The acoustic environment shared by every node. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticScene<T> {
    fs: f64,
    primary: Vec<ImpulseResponse<T>>,
    secondary: PathMatrix<T>,
    secondary_est: PathMatrix<T>,
}

impl<T: Real> AcousticScene<T> {
    pub fn new(
        fs: f64,
        primary: Vec<ImpulseResponse<T>>,
        secondary: PathMatrix<T>,
        secondary_est: PathMatrix<T>,
    ) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(config("sampling frequency must be positive"));
        }
        let k = secondary.nodes();
        if primary.len() != k || secondary_est.nodes() != k {
            return Err(config(format!(
                "inconsistent node counts: {} primary paths, {k}x{k} secondary, {n}x{n} estimates",
                primary.len(),
                n = secondary_est.nodes()
            )));
        }
        Ok(Self { fs, primary, secondary, secondary_est })
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.primary.len()
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn primary(&self, k: usize) -> &ImpulseResponse<T> {
        &self.primary[k]
    }

    pub fn primaries(&self) -> &[ImpulseResponse<T>] {
        &self.primary
    }

    pub fn secondary(&self) -> &PathMatrix<T> {
        &self.secondary
    }

    pub fn secondary_est(&self) -> &PathMatrix<T> {
        &self.secondary_est
    }

    /// `L_s`, the common length of the true secondary paths.
    pub fn secondary_len(&self) -> usize {
        self.secondary.path_len()
    }

    pub fn primary_len(&self) -> usize {
        self.primary.iter().map(ImpulseResponse::len).max().unwrap_or(0)
    }

    /// `(sum_k |s_kk|^2, sum_{m!=k} |s_mk|^2)` over the true paths.
    pub fn coupling_energy(&self) -> (f64, f64) {
        let mut own = 0.0;
        let mut cross = 0.0;
        for ((m, k), p) in self.secondary.iter() {
            let e = p.energy().as_f64();
            if m == k {
                own += e;
            } else {
                cross += e;
            }
        }
        (own, cross)
    }

    /// Replaces the estimated secondary paths.
    pub fn with_estimates(&self, secondary_est: PathMatrix<T>) -> Result<Self> {
        Self::new(self.fs, self.primary.clone(), self.secondary.clone(), secondary_est)
    }

    pub fn cast<U: Real>(&self) -> AcousticScene<U> {
        AcousticScene {
            fs: self.fs,
            primary: self.primary.iter().map(ImpulseResponse::cast).collect(),
            secondary: PathMatrix {
                k: self.secondary.k,
                paths: self.secondary.paths.iter().map(ImpulseResponse::cast).collect(),
            },
            secondary_est: PathMatrix {
                k: self.secondary_est.k,
                paths: self.secondary_est.paths.iter().map(ImpulseResponse::cast).collect(),
            },
        }
    }
}

/// `d_k(n)`: the reference history filtered by primary path `k`.
#[inline]
pub fn disturbance<T: Real>(scene: &AcousticScene<T>, k: usize, reference: &TappedDelayLine<T>) -> Result<T> {
    fir_step(reference, scene.primary(k))
}

/// `e_m(n) = d_m(n) - sum_k (y_k * s_mk)(n)`.
///
/// The crosstalk from the other nodes is the `k != m` part of the sum; it is
/// never stored separately.
#[inline]
pub fn residual_error<T: Real>(
    scene: &AcousticScene<T>,
    m: usize,
    d_m: T,
    control_lines: &[TappedDelayLine<T>],
) -> Result<T> {
    if control_lines.len() != scene.nodes() {
        return Err(config(format!("{} control lines for {} nodes", control_lines.len(), scene.nodes())));
    }
    let ls = scene.secondary_len();
    let mut anti = T::zero();
    for (k, line) in control_lines.iter().enumerate() {
        if line.capacity() < ls {
            return Err(config(format!(
                "control line {k} capacity {} shorter than secondary path length {ls}",
                line.capacity()
            )));
        }
        anti += dot(scene.secondary().get(m, k).taps(), line.recent(ls));
    }
    Ok(d_m - anti)
}

/// Parameters for synthetic primary and secondary paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathSynthesisSpec {
    pub seed: u64,
    /// `L_s`.
    pub secondary_len: usize,
    /// Secondary-path onset delays are drawn from `[delay_min, delay_max]`;
    /// self paths from the lower half, cross paths from the upper half.
    pub delay_min: usize,
    pub delay_max: usize,
    /// Exponential decay constant in samples.
    pub decay: f64,
    /// Amplitude ratio of the aggregate crosstalk reaching a sensor to its
    /// self path. Each cross path gets norm `rho / sqrt(K - 1)` relative to
    /// the self path norm.
    pub cross_attenuation: f64,
    /// L2 norm of every self path.
    pub secondary_gain: f64,
    pub primary_len: usize,
    pub primary_delay_min: usize,
    pub primary_delay_max: usize,
    pub primary_decay: f64,
    /// L2 norm of every primary path.
    pub primary_gain: f64,
}

impl Default for PathSynthesisSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            secondary_len: 64,
            delay_min: 2,
            delay_max: 12,
            decay: 8.0,
            cross_attenuation: 0.5,
            secondary_gain: 1.0,
            primary_len: 96,
            primary_delay_min: 20,
            primary_delay_max: 30,
            primary_decay: 12.0,
            primary_gain: 1.0,
        }
    }
}

impl PathSynthesisSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(config(m));
        if self.secondary_len == 0 || self.primary_len == 0 {
            return fail("path lengths must be positive".into());
        }
        if self.delay_min > self.delay_max || self.delay_max >= self.secondary_len {
            return fail(format!(
                "secondary delay range [{}, {}] must satisfy delay_min <= delay_max < L_s = {}",
                self.delay_min, self.delay_max, self.secondary_len
            ));
        }
        if self.primary_delay_min > self.primary_delay_max || self.primary_delay_max >= self.primary_len {
            return fail(format!(
                "primary delay range [{}, {}] must fit in {} taps",
                self.primary_delay_min, self.primary_delay_max, self.primary_len
            ));
        }
        if !(self.decay > 0.0 && self.primary_decay > 0.0) {
            return fail("decay constants must be positive".into());
        }
        if !(self.cross_attenuation > 0.0 && self.cross_attenuation <= 1.0) {
            return fail(format!("cross_attenuation {} outside (0, 1]", self.cross_attenuation));
        }
        if !(self.secondary_gain > 0.0 && self.primary_gain > 0.0)
            || !self.secondary_gain.is_finite()
            || !self.primary_gain.is_finite()
        {
            return fail("path gains must be positive and finite".into());
        }
        Ok(())
    }

    fn self_delays(&self) -> (usize, usize) {
        (self.delay_min, (self.delay_min + self.delay_max) / 2)
    }

    fn cross_delays(&self) -> (usize, usize) {
        ((self.delay_min + self.delay_max).div_ceil(2), self.delay_max)
    }

    fn cross_norm(&self, k: usize) -> f64 {
        if k < 2 {
            self.cross_attenuation * self.secondary_gain
        } else {
            self.cross_attenuation * self.secondary_gain / ((k - 1) as f64).sqrt()
        }
    }
}

// Independent random streams per path so that paths do not depend on the
// generation order.
const STREAM_PRIMARY: u64 = 1 << 40;
const STREAM_SECONDARY: u64 = 2 << 40;
const STREAM_COMPENSATION: u64 = 3 << 40;
const STREAM_MISMATCH: u64 = 4 << 40;

fn path_rng(seed: u64, role: u64, m: usize, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(role | ((m as u64) << 20) | k as u64);
    rng
}

/// Random onset in `delays`, then exponentially decaying zero-mean Gaussian
/// taps, scaled to L2 norm `norm`.
fn decaying_path(rng: &mut ChaCha8Rng, len: usize, delays: (usize, usize), decay: f64, norm: f64) -> Vec<f64> {
    let delay = rng.random_range(delays.0..=delays.1);
    let mut taps = vec![0.0; len];
    for (i, t) in taps.iter_mut().enumerate().skip(delay) {
        let g: f64 = StandardNormal.sample(rng);
        *t = g * (-((i - delay) as f64) / decay).exp();
    }
    let e = taps.iter().map(|x| x * x).sum::<f64>().sqrt();
    if e > 0.0 {
        taps.iter_mut().for_each(|x| *x *= norm / e);
    }
    taps
}

fn to_ir<T: Real>(taps: Vec<f64>) -> Result<ImpulseResponse<T>> {
    ImpulseResponse::new(taps.into_iter().map(T::lit).collect())
}

fn synth_primaries<T: Real>(spec: &PathSynthesisSpec, k: usize) -> Result<Vec<ImpulseResponse<T>>> {
    (0..k)
        .map(|i| {
            let mut rng = path_rng(spec.seed, STREAM_PRIMARY, i, 0);
            to_ir(decaying_path(
                &mut rng,
                spec.primary_len,
                (spec.primary_delay_min, spec.primary_delay_max),
                spec.primary_decay,
                spec.primary_gain,
            ))
        })
        .collect()
}

/// Builds a self-dominant synthetic scene with exact estimates (`s_hat = s`).
pub fn synthesize_scene<T: Real>(spec: &PathSynthesisSpec, k: usize, fs: f64) -> Result<AcousticScene<T>> {
    if k == 0 {
        return Err(config("node count K must be at least 1"));
    }
    spec.validate()?;
    let primary = synth_primaries(spec, k)?;
    let cross_norm = spec.cross_norm(k);
    let rows = (0..k)
        .map(|m| {
            (0..k)
                .map(|j| {
                    let mut rng = path_rng(spec.seed, STREAM_SECONDARY, m, j);
                    let (delays, norm) = if m == j {
                        (spec.self_delays(), spec.secondary_gain)
                    } else {
                        (spec.cross_delays(), cross_norm)
                    };
                    to_ir(decaying_path(&mut rng, spec.secondary_len, delays, spec.decay, norm))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let secondary = PathMatrix::from_rows(rows)?;
    AcousticScene::new(fs, primary, secondary.clone(), secondary)
}

/// A scene whose cross paths factor exactly as `s_mk = s_mm * c_mk`, together
/// with the generating compensation filters.
#[derive(Debug, Clone)]
pub struct FactorableScene<T> {
    pub scene: AcousticScene<T>,
    pub generators: CompensationSet<T>,
}

/// Draws self paths of length `L_s - L_c + 1` and compensation filters of
/// length `L_c`, then sets each cross path to their full convolution, which
/// has exactly `L_s` taps.
pub fn factorable_scene<T: Real>(
    spec: &PathSynthesisSpec,
    k: usize,
    compensation_len: usize,
    fs: f64,
) -> Result<FactorableScene<T>> {
    if k == 0 {
        return Err(config("node count K must be at least 1"));
    }
    spec.validate()?;
    if compensation_len == 0 || compensation_len > spec.secondary_len {
        return Err(config(format!(
            "compensation length {compensation_len} incompatible with L_s = {}",
            spec.secondary_len
        )));
    }
    let self_len = spec.secondary_len + 1 - compensation_len;
    let (dmin, dmax) = spec.self_delays();
    if dmax >= self_len {
        return Err(config(format!(
            "L_s = {} too short: self paths need {} taps for their delay but only {self_len} remain after L_c - 1 = {}",
            spec.secondary_len,
            dmax + 1,
            compensation_len - 1
        )));
    }
    let primary = synth_primaries(spec, k)?;
    let selfs: Vec<ImpulseResponse<T>> = (0..k)
        .map(|m| {
            let mut rng = path_rng(spec.seed, STREAM_SECONDARY, m, m);
            to_ir(decaying_path(&mut rng, self_len, (dmin, dmax), spec.decay, spec.secondary_gain))
        })
        .collect::<Result<_>>()?;
    let c_norm = spec.cross_norm(k) / spec.secondary_gain;
    let c_delay = (0, compensation_len.saturating_sub(1) / 4);
    let c_decay = (compensation_len as f64 / 4.0).max(1.0);
    let mut filters = Vec::new();
    for m in 0..k {
        for j in (0..k).filter(|&j| j != m) {
            let mut rng = path_rng(spec.seed, STREAM_COMPENSATION, m, j);
            let c = to_ir(decaying_path(&mut rng, compensation_len, c_delay, c_decay, c_norm))?;
            filters.push(((m, j), c));
        }
    }
    let generators = CompensationSet::exact(k, compensation_len, filters)?;
    let scene = compose_factorable(fs, primary, selfs, &generators, spec.secondary_len)?;
    Ok(FactorableScene { scene, generators })
}

/// Scene with `s_mk = s_mm * c_mk` for `m != k`, exact estimates, and every
/// path zero padded to `secondary_len`, which must hold the full convolution.
pub fn compose_factorable<T: Real>(
    fs: f64,
    primary: Vec<ImpulseResponse<T>>,
    self_paths: Vec<ImpulseResponse<T>>,
    compensation: &CompensationSet<T>,
    secondary_len: usize,
) -> Result<AcousticScene<T>> {
    let k = self_paths.len();
    if compensation.nodes() != k {
        return Err(config("compensation set and self paths disagree on K"));
    }
    let mut rows = Vec::with_capacity(k);
    for m in 0..k {
        let mut row = Vec::with_capacity(k);
        for j in 0..k {
            if m == j {
                row.push(self_paths[m].resized(secondary_len)?);
                continue;
            }
            let c =
                compensation.filter(m, j).ok_or_else(|| config(format!("missing compensation filter ({m}, {j})")))?;
            let s = convolve_full(&self_paths[m], c);
            if s.len() > secondary_len {
                return Err(config(format!("L_s = {secondary_len} cannot hold s_mm * c_mk of length {}", s.len())));
            }
            row.push(s.resized(secondary_len)?);
        }
        rows.push(row);
    }
    let secondary = PathMatrix::from_rows(rows)?;
    AcousticScene::new(fs, primary, secondary.clone(), secondary)
}

/// Adds seeded estimation error to every `s_hat_mk`:
/// `s_hat = s + g * r` with `|r| = 1` and `g = |s| * 10^(mismatch_db / 20)`.
/// `mismatch_db = -inf` means no mismatch and returns `s_hat = s`.
pub fn perturb_estimates<T: Real>(scene: &AcousticScene<T>, mismatch_db: f64, seed: u64) -> Result<AcousticScene<T>> {
    if mismatch_db.is_nan() || mismatch_db == f64::INFINITY {
        return Err(config(format!("mismatch level {mismatch_db} dB is not usable")));
    }
    if mismatch_db == f64::NEG_INFINITY {
        return scene.with_estimates(scene.secondary().clone());
    }
    let ratio = 10f64.powf(mismatch_db / 20.0);
    let est = scene.secondary().map(|m, k, s| {
        let mut rng = path_rng(seed, STREAM_MISMATCH, m, k);
        let mut r: Vec<f64> = (0..s.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        let g = s.norm().as_f64() * ratio / rn;
        r.iter_mut().for_each(|x| *x *= g);
        let taps = s.taps().iter().zip(&r).map(|(a, b)| *a + T::lit(*b)).collect();
        ImpulseResponse::new(taps).expect("finite perturbation of finite path")
    });
    scene.with_estimates(est)
}

impl<T: Real> AcousticScene<T> {
    /// Checks that every path is finite; scenes from archives go through this.
    pub fn validate_finite(&self) -> Result<()> {
        let all = self.primary.iter().chain(self.secondary.paths.iter()).chain(self.secondary_est.paths.iter());
        for p in all {
            if !crate::scalar::all_finite(p.taps()) {
                return Err(Error::Input("scene contains non-finite taps".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::convolve_slices;

    fn spec() -> PathSynthesisSpec {
        PathSynthesisSpec::default()
    }

    #[test]
    fn single_node_scene() {
        let s: AcousticScene<f64> = synthesize_scene(&spec(), 1, 16000.0).unwrap();
        assert_eq!(s.nodes(), 1);
        assert_eq!(s.secondary().nodes(), 1);
        assert_eq!(s.coupling_energy().1, 0.0);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let a: AcousticScene<f64> = synthesize_scene(&spec(), 3, 16000.0).unwrap();
        let b: AcousticScene<f64> = synthesize_scene(&spec(), 3, 16000.0).unwrap();
        assert_eq!(a, b);
        let c: AcousticScene<f64> = synthesize_scene(&PathSynthesisSpec { seed: 2, ..spec() }, 3, 16000.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn coupling_energy_bounded_by_rho() {
        for k in 1..=6 {
            for rho in [1e-6, 0.1, 0.5, 0.9, 1.0] {
                let sp = PathSynthesisSpec { cross_attenuation: rho, ..spec() };
                let s: AcousticScene<f64> = synthesize_scene(&sp, k, 16000.0).unwrap();
                let (own, cross) = s.coupling_energy();
                assert!(cross <= rho * rho * own * (1.0 + 1e-9), "k={k} rho={rho}");
            }
        }
    }

    #[test]
    fn self_paths_start_earlier() {
        let s: AcousticScene<f64> = synthesize_scene(&spec(), 4, 16000.0).unwrap();
        let onset = |p: &ImpulseResponse<f64>| p.taps().iter().position(|&t| t != 0.0).unwrap();
        for ((m, k), p) in s.secondary().iter() {
            if m != k {
                assert!(onset(p) >= onset(s.secondary().get(m, m)));
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(synthesize_scene::<f64>(&spec(), 0, 16000.0).is_err());
        let bad = PathSynthesisSpec { delay_max: 64, ..spec() };
        assert!(synthesize_scene::<f64>(&bad, 2, 16000.0).is_err());
        let bad = PathSynthesisSpec { cross_attenuation: 0.0, ..spec() };
        assert!(synthesize_scene::<f64>(&bad, 2, 16000.0).is_err());
    }

    #[test]
    fn factorable_identity_holds() {
        let f: FactorableScene<f64> = factorable_scene(&spec(), 3, 9, 16000.0).unwrap();
        let sec = f.scene.secondary();
        for m in 0..3 {
            for k in (0..3).filter(|&k| k != m) {
                let c = f.generators.filter(m, k).unwrap();
                let conv = convolve_slices(sec.get(m, m).taps(), c.taps());
                // s_mm is zero beyond the self length so the tail of conv is 0
                for (i, v) in conv.iter().enumerate() {
                    let target = sec.get(m, k).taps().get(i).copied().unwrap_or(0.0);
                    assert!((v - target).abs() <= 1e-15);
                }
            }
        }
    }

    #[test]
    fn factorable_unit_compensation() {
        // L_c = 1 with a single positive tap normalised to rho: cross = rho * self.
        let sp = PathSynthesisSpec { cross_attenuation: 1.0, ..spec() };
        let f: FactorableScene<f64> = factorable_scene(&sp, 2, 1, 16000.0).unwrap();
        let c = f.generators.filter(0, 1).unwrap().taps()[0];
        assert_eq!(c.abs(), 1.0);
        let sec = f.scene.secondary();
        for (a, b) in sec.get(0, 1).taps().iter().zip(sec.get(0, 0).taps()) {
            assert_eq!(*a, c * b);
        }
    }

    #[test]
    fn factorable_with_identity_compensation() {
        let s0 = ImpulseResponse::new(vec![0.0, 1.0, -0.5]).unwrap();
        let s1 = ImpulseResponse::new(vec![0.3, 0.2]).unwrap();
        let p = vec![ImpulseResponse::unit_impulse(4), ImpulseResponse::unit_impulse(4)];
        let set = CompensationSet::identity(2, 1);
        let scene = compose_factorable(16000.0, p, vec![s0, s1], &set, 4).unwrap();
        let sec = scene.secondary();
        assert_eq!(sec.get(0, 1), sec.get(0, 0));
        assert_eq!(sec.get(1, 0), sec.get(1, 1));
    }

    #[test]
    fn factorable_length_precondition() {
        assert!(factorable_scene::<f64>(&spec(), 2, 60, 16000.0).is_err());
        assert!(factorable_scene::<f64>(&spec(), 2, 65, 16000.0).is_err());
    }

    #[test]
    fn perturbation_levels() {
        let s: AcousticScene<f64> = synthesize_scene(&spec(), 2, 16000.0).unwrap();
        let none = perturb_estimates(&s, f64::NEG_INFINITY, 3).unwrap();
        assert_eq!(none.secondary_est(), none.secondary());
        let twice = perturb_estimates(&none, f64::NEG_INFINITY, 4).unwrap();
        assert_eq!(twice, none);
        let p = perturb_estimates(&s, -20.0, 3).unwrap();
        for ((m, k), est) in p.secondary_est().iter() {
            let truth = p.secondary().get(m, k);
            let diff: f64 = est.taps().iter().zip(truth.taps()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((diff / truth.norm() - 0.1).abs() <= 1e-12);
        }
    }

    #[test]
    fn residual_error_basics() {
        let s: AcousticScene<f64> = synthesize_scene(&spec(), 2, 16000.0).unwrap();
        let lines = vec![TappedDelayLine::new(64), TappedDelayLine::new(64)];
        assert_eq!(residual_error(&s, 0, 0.37, &lines).unwrap(), 0.37);
        let short = vec![TappedDelayLine::new(8), TappedDelayLine::new(64)];
        assert!(residual_error(&s, 0, 0.0, &short).is_err());
    }

    #[test]
    fn perfect_cancellation_single_node() {
        let s = AcousticScene::new(
            16000.0,
            vec![ImpulseResponse::unit_impulse(1)],
            PathMatrix::from_rows(vec![vec![ImpulseResponse::new(vec![0.0, 2.0]).unwrap()]]).unwrap(),
            PathMatrix::from_rows(vec![vec![ImpulseResponse::new(vec![0.0, 2.0]).unwrap()]]).unwrap(),
        )
        .unwrap();
        let mut y = TappedDelayLine::new(2);
        y.push(0.25);
        y.push(9.0);
        // y * s at n = 2 * y(n-1) = 0.5
        assert_eq!(residual_error(&s, 0, 0.5, &[y]).unwrap(), 0.0);
    }

    #[test]
    fn residual_matches_batch_convolution() {
        let s: AcousticScene<f64> = synthesize_scene(&spec(), 2, 16000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100;
        let y: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch: Vec<Vec<f64>> = (0..2)
            .map(|m| {
                let mut out = d.clone();
                for (k, yk) in y.iter().enumerate() {
                    let c = convolve_slices(yk, s.secondary().get(m, k).taps());
                    for i in 0..n {
                        out[i] -= c[i];
                    }
                }
                out
            })
            .collect();
        let mut lines = vec![TappedDelayLine::new(64), TappedDelayLine::new(64)];
        for i in 0..n {
            lines[0].push(y[0][i]);
            lines[1].push(y[1][i]);
            for m in 0..2 {
                let e = residual_error(&s, m, d[i], &lines).unwrap();
                assert!((e - batch[m][i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn residual_is_linear() {
        let s: AcousticScene<f64> = synthesize_scene(&spec(), 2, 16000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = vec![TappedDelayLine::new(64), TappedDelayLine::new(64)];
        let mut b = a.clone();
        let mut sum = a.clone();
        for _ in 0..80 {
            for k in 0..2 {
                let (x, z): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                a[k].push(x);
                b[k].push(z);
                sum[k].push(x + z);
            }
        }
        let ea = residual_error(&s, 1, 0.3, &a).unwrap();
        let eb = residual_error(&s, 1, -0.8, &b).unwrap();
        let es = residual_error(&s, 1, -0.5, &sum).unwrap();
        assert!((ea + eb - es).abs() <= 1e-12);
    }

    #[test]
    fn disturbance_identity_delay_and_oracle() {
        let mk = |p: Vec<f64>| {
            AcousticScene::new(
                16000.0,
                vec![ImpulseResponse::new(p).unwrap()],
                PathMatrix::from_rows(vec![vec![ImpulseResponse::unit_impulse(1)]]).unwrap(),
                PathMatrix::from_rows(vec![vec![ImpulseResponse::unit_impulse(1)]]).unwrap(),
            )
            .unwrap()
        };
        let mut line = TappedDelayLine::new(96);
        line.push(0.3);
        line.push(0.7);
        assert_eq!(disturbance(&mk(vec![1.0]), 0, &line).unwrap(), 0.7);
        assert_eq!(disturbance(&mk(vec![0.0, 1.0]), 0, &line).unwrap(), 0.3);
        assert!(disturbance(&mk(vec![0.0; 97]), 0, &line).is_err());

        let s: AcousticScene<f64> = synthesize_scene(&spec(), 1, 16000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = convolve_slices(&x, s.primary(0).taps());
        let mut line = TappedDelayLine::new(96);
        for (i, &v) in x.iter().enumerate() {
            line.push(v);
            assert!((disturbance(&s, 0, &line).unwrap() - batch[i]).abs() <= 1e-12);
        }
    }
}
