//! Offline compensation filters `c_mk` with `s_hat_mk ~= s_hat_mm * c_mk`,
//! and their application to exchanged gradients and weight differences.

use crate::error::{config, Error, Result};
use crate::scalar::{all_finite, Real};
use crate::scene::AcousticScene;
use crate::signal::{convolve_slices, ImpulseResponse};

/// Relative Tikhonov weight applied to the normal equations.
pub const RIDGE: f64 = 1e-14;

/// The `K(K-1)` compensation filters of a scene plus their fit residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensationSet<T> {
    k: usize,
    len: usize,
    // row-major K x K, diagonal unused
    filters: Vec<Option<ImpulseResponse<T>>>,
    residuals: Vec<f64>,
}

impl<T: Real> CompensationSet<T> {
    /// Builds a set from `((m, k), c_mk)` entries with zero residuals.
    pub fn exact(k: usize, len: usize, entries: Vec<((usize, usize), ImpulseResponse<T>)>) -> Result<Self> {
        let n = entries.len();
        let residuals = vec![0.0; n];
        Self::with_residuals(k, len, entries.into_iter().zip(residuals).map(|((mk, c), r)| (mk, c, r)).collect())
    }

    pub fn with_residuals(
        k: usize,
        len: usize,
        entries: Vec<((usize, usize), ImpulseResponse<T>, f64)>,
    ) -> Result<Self> {
        if len == 0 {
            return Err(config("compensation length must be positive"));
        }
        let mut filters = vec![None; k * k];
        let mut residuals = vec![0.0; k * k];
        for ((m, j), c, r) in entries {
            if m >= k || j >= k || m == j {
                return Err(config(format!("invalid compensation pair ({m}, {j}) for K = {k}")));
            }
            if c.len() != len {
                return Err(config(format!("compensation filter ({m}, {j}) has {} taps, expected {len}", c.len())));
            }
            if !r.is_finite() {
                return Err(Error::Input(format!("non-finite residual for pair ({m}, {j})")));
            }
            filters[m * k + j] = Some(c);
            residuals[m * k + j] = r;
        }
        let count = filters.iter().filter(|f| f.is_some()).count();
        if count != k * (k - 1) {
            return Err(config(format!("compensation set has {count} filters, expected K(K-1) = {}", k * (k - 1))));
        }
        Ok(Self { k, len, filters, residuals })
    }

    pub fn nodes(&self) -> usize {
        self.k
    }

    /// `L_c`.
    pub fn filter_len(&self) -> usize {
        self.len
    }

    /// `c_mk`, mapping the self path of sensor `m` onto the path from source `k`.
    pub fn filter(&self, m: usize, k: usize) -> Option<&ImpulseResponse<T>> {
        self.filters.get(m * self.k + k).and_then(Option::as_ref)
    }

    pub fn residual(&self, m: usize, k: usize) -> Option<f64> {
        self.filter(m, k).map(|_| self.residuals[m * self.k + k])
    }

    /// `((m, k), c_mk, residual)` for all off-diagonal pairs in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &ImpulseResponse<T>, f64)> {
        let k = self.k;
        self.filters
            .iter()
            .enumerate()
            .filter_map(move |(i, f)| f.as_ref().map(|f| ((i / k, i % k), f, self.residuals[i])))
    }

    /// Every `c_mk` set to the unit impulse.
    pub fn identity(k: usize, len: usize) -> Self {
        let entries = (0..k)
            .flat_map(|m| (0..k).filter(move |&j| j != m).map(move |j| (m, j)))
            .map(|mk| (mk, ImpulseResponse::unit_impulse(len)))
            .collect();
        Self::exact(k, len, entries).expect("identity set is well formed")
    }

    pub fn cast<U: Real>(&self) -> CompensationSet<U> {
        CompensationSet {
            k: self.k,
            len: self.len,
            filters: self.filters.iter().map(|f| f.as_ref().map(ImpulseResponse::cast)).collect(),
            residuals: self.residuals.clone(),
        }
    }
}

/// Least-squares fit of every `c_mk` (length `compensation_len`) to the
/// estimated paths: `min |s_hat_mk - s_hat_mm * c|`.
///
/// Solved through the Toeplitz normal equations of `s_hat_mm` with a ridge of
/// `RIDGE * r_mm[0]` on the diagonal.
pub fn estimate_compensation<T: Real>(scene: &AcousticScene<T>, compensation_len: usize) -> Result<CompensationSet<T>> {
    if compensation_len == 0 {
        return Err(config("compensation length must be positive"));
    }
    let est = scene.secondary_est();
    for (_, p) in est.iter() {
        if !all_finite(p.taps()) {
            return Err(Error::Input("estimated secondary paths contain non-finite taps".into()));
        }
    }
    let k = scene.nodes();
    let mut entries = Vec::with_capacity(k * k.saturating_sub(1));
    for m in 0..k {
        let own = est.get(m, m).taps();
        let acf = correlate(own, own, compensation_len);
        if acf[0] == T::zero() {
            if k > 1 {
                return Err(Error::Singular { m, k: (m + 1) % k });
            }
            continue;
        }
        let ridge = T::lit(RIDGE) * acf[0];
        let normal: Vec<T> = (0..compensation_len * compensation_len)
            .map(|idx| {
                let (i, j) = (idx / compensation_len, idx % compensation_len);
                let v = acf[i.abs_diff(j)];
                if i == j {
                    v + ridge
                } else {
                    v
                }
            })
            .collect();
        let factor = cholesky(normal, compensation_len).ok_or(Error::Singular { m, k: (m + 1) % k })?;
        for j in (0..k).filter(|&j| j != m) {
            let target = est.get(m, j).taps();
            let rhs = correlate(target, own, compensation_len);
            let c = cholesky_solve(&factor, compensation_len, rhs);
            let residual = fit_residual(target, own, &c);
            entries.push(((m, j), ImpulseResponse::new(c)?, residual));
        }
    }
    CompensationSet::with_residuals(k, compensation_len, entries)
}

/// `|target - own * c|_2`, with both sides zero padded to the longer length.
pub fn fit_residual<T: Real>(target: &[T], own: &[T], c: &[T]) -> f64 {
    let conv = convolve_slices(own, c);
    let n = conv.len().max(target.len());
    (0..n)
        .map(|i| {
            let a = target.get(i).copied().unwrap_or_else(T::zero);
            let b = conv.get(i).copied().unwrap_or_else(T::zero);
            (a - b).as_f64().powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Maps a vector exchanged by node `m` into node `k`'s filter coordinates.
///
/// This is the adjoint of convolution by `c_mk`: tap `i` of the result is
/// `sum_j c[j] * v[i + j]`, with `v` zero beyond its length. Because
/// `x'_km(n - i) = sum_j c_mk[j] x'_mm(n - i - j)` whenever `s_hat_mk =
/// s_hat_mm * c_mk`, a gradient of length `out_len + L_c - 1` maps exactly onto
/// the centralized cross term.
pub fn apply_compensation<T: Real>(v: &[T], c: &ImpulseResponse<T>, out_len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); out_len];
    accumulate_compensated(&mut out, v, c);
    out
}

/// `out += apply_compensation(v, c, out.len())` without the temporary.
#[inline]
pub fn accumulate_compensated<T: Real>(out: &mut [T], v: &[T], c: &ImpulseResponse<T>) {
    for (j, &cj) in c.taps().iter().enumerate() {
        if cj == T::zero() || j >= v.len() {
            continue;
        }
        for (o, &x) in out.iter_mut().zip(&v[j..]) {
            *o += cj * x;
        }
    }
}

// r[lag] = sum_n a[n + lag] * b[n], lag in 0..lags
fn correlate<T: Real>(a: &[T], b: &[T], lags: usize) -> Vec<T> {
    (0..lags).map(|lag| a.iter().skip(lag).zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)).collect()
}

/// Lower-triangular Cholesky factor of a dense SPD matrix (row-major).
fn cholesky<T: Real>(mut a: Vec<T>, n: usize) -> Option<Vec<T>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= a[j * n + p] * a[j * n + p];
        }
        if !(d > T::zero()) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= a[i * n + p] * a[j * n + p];
            }
            a[i * n + j] = s / d;
        }
    }
    Some(a)
}

fn cholesky_solve<T: Real>(l: &[T], n: usize, mut b: Vec<T>) -> Vec<T> {
    for i in 0..n {
        for p in 0..i {
            let v = l[i * n + p] * b[p];
            b[i] -= v;
        }
        b[i] = b[i] / l[i * n + i];
    }
    for i in (0..n).rev() {
        for p in i + 1..n {
            let v = l[p * n + i] * b[p];
            b[i] -= v;
        }
        b[i] = b[i] / l[i * n + i];
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{factorable_scene, synthesize_scene, AcousticScene, PathMatrix, PathSynthesisSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_paths_give_unit_impulse() {
        let base: AcousticScene<f64> = synthesize_scene(&PathSynthesisSpec::default(), 2, 16000.0).unwrap();
        let s0 = base.secondary().get(0, 0).clone();
        let s1 = base.secondary().get(1, 1).clone();
        let m = PathMatrix::from_rows(vec![vec![s0.clone(), s0], vec![s1.clone(), s1]]).unwrap();
        let scene = base.with_estimates(m).unwrap();
        let set = estimate_compensation(&scene, 5).unwrap();
        for (_, c, r) in set.iter() {
            assert!((c.taps()[0] - 1.0).abs() <= 1e-8);
            assert!(c.taps()[1..].iter().all(|t| t.abs() <= 1e-8));
            assert!(r <= 1e-10);
        }
    }

    #[test]
    fn recovers_factorable_generators() {
        let f = factorable_scene::<f64>(&PathSynthesisSpec::default(), 3, 9, 16000.0).unwrap();
        let set = estimate_compensation(&f.scene, 9).unwrap();
        for ((m, k), c, r) in set.iter() {
            let truth = f.generators.filter(m, k).unwrap();
            let err = c.taps().iter().zip(truth.taps()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-8, "({m},{k}) err {err}");
            assert!(r <= 1e-10, "({m},{k}) residual {r}");
        }
    }

    #[test]
    fn short_filters_fit_worse() {
        let f = factorable_scene::<f64>(&PathSynthesisSpec::default(), 2, 9, 16000.0).unwrap();
        let full = estimate_compensation(&f.scene, 9).unwrap();
        let short = estimate_compensation(&f.scene, 3).unwrap();
        for ((m, k), _, r) in short.iter() {
            assert!(r > full.residual(m, k).unwrap());
        }
    }

    #[test]
    fn residual_matches_recomputation() {
        let scene: AcousticScene<f64> = synthesize_scene(&PathSynthesisSpec::default(), 3, 16000.0).unwrap();
        let set = estimate_compensation(&scene, 17).unwrap();
        for ((m, k), c, r) in set.iter() {
            let conv = crate::signal::convolve_full(scene.secondary_est().get(m, m), c);
            let t = scene.secondary_est().get(m, k).resized(conv.len()).unwrap();
            let direct = t.taps().iter().zip(conv.taps()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((direct - r).abs() <= 1e-12);
        }
    }

    #[test]
    fn least_squares_optimality() {
        let scene: AcousticScene<f64> = synthesize_scene(&PathSynthesisSpec::default(), 2, 16000.0).unwrap();
        let set = estimate_compensation(&scene, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for ((m, k), c, r) in set.iter() {
            let own = scene.secondary_est().get(m, m).taps();
            let target = scene.secondary_est().get(m, k).taps();
            for _ in 0..20 {
                let mut p = c.taps().to_vec();
                let i = rng.random_range(0..p.len());
                p[i] += if rng.random_bool(0.5) { 1e-3 } else { -1e-3 };
                assert!(fit_residual(target, own, &p) >= r);
            }
        }
    }

    #[test]
    fn zero_self_path_is_singular() {
        let z = ImpulseResponse::<f64>::zeros(4);
        let one = ImpulseResponse::unit_impulse(4);
        let m = PathMatrix::from_rows(vec![vec![z.clone(), one.clone()], vec![one.clone(), one]]).unwrap();
        let scene = AcousticScene::new(16000.0, vec![z.clone(), z], m.clone(), m).unwrap();
        assert!(matches!(estimate_compensation(&scene, 3), Err(Error::Singular { m: 0, k: 1 })));
    }

    #[test]
    fn compensation_application() {
        let unit = ImpulseResponse::unit_impulse(3);
        let v = [1.0, 2.0, 3.0];
        assert_eq!(apply_compensation(&v, &unit, 3), v.to_vec());
        // one-sample delay in c_mk advances the exchanged vector by one tap
        let shift = ImpulseResponse::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(apply_compensation(&v, &shift, 3), vec![2.0, 3.0, 0.0]);
        assert_eq!(apply_compensation(&[0.0; 3], &shift, 3), vec![0.0; 3]);
        // an extended vector fills the tail
        assert_eq!(apply_compensation(&[1.0, 2.0, 3.0, 4.0], &shift, 3), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn set_shape_checks() {
        assert!(CompensationSet::<f64>::exact(2, 3, vec![]).is_err());
        let c = ImpulseResponse::<f64>::unit_impulse(3);
        assert!(CompensationSet::exact(2, 3, vec![((0, 0), c.clone()), ((1, 0), c.clone())]).is_err());
        assert!(CompensationSet::exact(2, 4, vec![((0, 1), c.clone()), ((1, 0), c.clone())]).is_err());
        let ok = CompensationSet::exact(2, 3, vec![((0, 1), c.clone()), ((1, 0), c)]).unwrap();
        assert_eq!(ok.iter().count(), 2);
        assert_eq!(CompensationSet::<f64>::identity(4, 2).iter().count(), 12);
    }
}
