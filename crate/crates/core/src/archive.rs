//! Single-file archives for scenes and compensation sets.
//!
//! Layout: the 8-byte magic `DMCANC\0\x01`, a little-endian `u64` manifest
//! length, the JSON manifest, then every tap array as little-endian `f64`
//! in manifest order. Values pass through `f64`, so `f64` and `f32` data
//! round-trip bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compensation::CompensationSet;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scene::{AcousticScene, PathMatrix};
use crate::signal::ImpulseResponse;

const MAGIC: &[u8; 8] = b"DMCANC\0\x01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchiveKind {
    Scene,
    Compensation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Blob {
    name: String,
    len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    kind: ArchiveKind,
    nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fs: Option<f64>,
    /// `L_s` for scenes, `L_c` for compensation sets.
    path_len: usize,
    blobs: Vec<Blob>,
}

fn write_archive(path: &Path, manifest: &Manifest, data: &[Vec<f64>]) -> Result<()> {
    let json = serde_json::to_vec(manifest).map_err(|e| Error::Archive(e.to_string()))?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for blob in data {
        for v in blob {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_archive(path: &Path, expected: ArchiveKind) -> Result<(Manifest, Vec<Vec<f64>>)> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| Error::Archive("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Archive(format!("{} is not a dmcanc archive", path.display())));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(Error::Archive("manifest length is implausible".into()));
    }
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let manifest: Manifest = serde_json::from_slice(&json).map_err(|e| Error::Archive(e.to_string()))?;
    if manifest.kind != expected {
        return Err(Error::Archive(format!("expected a {expected:?} archive, found {:?}", manifest.kind)));
    }
    let mut data = Vec::with_capacity(manifest.blobs.len());
    let mut buf = [0u8; 8];
    for blob in &manifest.blobs {
        let mut v = Vec::with_capacity(blob.len);
        for _ in 0..blob.len {
            input.read_exact(&mut buf).map_err(|_| Error::Archive(format!("blob {} is truncated", blob.name)))?;
            v.push(f64::from_le_bytes(buf));
        }
        data.push(v);
    }
    if input.read(&mut buf)? != 0 {
        return Err(Error::Archive("trailing bytes after the last blob".into()));
    }
    Ok((manifest, data))
}

fn taps_f64<T: Real>(h: &ImpulseResponse<T>) -> Vec<f64> {
    h.taps().iter().map(|x| x.as_f64()).collect()
}

fn ir<T: Real>(v: Vec<f64>) -> Result<ImpulseResponse<T>> {
    ImpulseResponse::new(v.into_iter().map(T::lit).collect())
}

/// Writes primary, true and estimated secondary paths.
pub fn save_scene<T: Real>(path: impl AsRef<Path>, scene: &AcousticScene<T>) -> Result<()> {
    let k = scene.nodes();
    let mut blobs = Vec::new();
    let mut data = Vec::new();
    for (i, p) in scene.primaries().iter().enumerate() {
        blobs.push(Blob { name: format!("p_{i}"), len: p.len(), residual: None });
        data.push(taps_f64(p));
    }
    for (prefix, matrix) in [("s", scene.secondary()), ("s_hat", scene.secondary_est())] {
        for ((m, kk), h) in matrix.iter() {
            blobs.push(Blob { name: format!("{prefix}_{m}_{kk}"), len: h.len(), residual: None });
            data.push(taps_f64(h));
        }
    }
    let manifest =
        Manifest { kind: ArchiveKind::Scene, nodes: k, fs: Some(scene.fs()), path_len: scene.secondary_len(), blobs };
    write_archive(path.as_ref(), &manifest, &data)
}

pub fn load_scene<T: Real>(path: impl AsRef<Path>) -> Result<AcousticScene<T>> {
    let (manifest, data) = read_archive(path.as_ref(), ArchiveKind::Scene)?;
    let k = manifest.nodes;
    if k == 0 || manifest.blobs.len() != k + 2 * k * k {
        return Err(Error::Archive(format!("scene archive for K = {k} holds {} paths", manifest.blobs.len())));
    }
    let fs = manifest.fs.ok_or_else(|| Error::Archive("scene archive lacks fs".into()))?;
    let mut data = data.into_iter();
    let primary = (0..k).map(|_| ir(data.next().expect("counted"))).collect::<Result<Vec<_>>>()?;
    let mut matrix = || -> Result<PathMatrix<T>> {
        let rows = (0..k)
            .map(|_| (0..k).map(|_| ir(data.next().expect("counted"))).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        PathMatrix::from_rows(rows)
    };
    let secondary = matrix()?;
    let est = matrix()?;
    if secondary.path_len() != manifest.path_len {
        return Err(Error::Archive("manifest L_s disagrees with the stored paths".into()));
    }
    AcousticScene::new(fs, primary, secondary, est)
}

/// Writes the `K(K-1)` filters with their fit residuals.
pub fn save_compensation<T: Real>(path: impl AsRef<Path>, set: &CompensationSet<T>) -> Result<()> {
    let mut blobs = Vec::new();
    let mut data = Vec::new();
    for ((m, k), c, residual) in set.iter() {
        blobs.push(Blob { name: format!("c_{m}_{k}"), len: c.len(), residual: Some(residual) });
        data.push(taps_f64(c));
    }
    let manifest =
        Manifest { kind: ArchiveKind::Compensation, nodes: set.nodes(), fs: None, path_len: set.filter_len(), blobs };
    write_archive(path.as_ref(), &manifest, &data)
}

pub fn load_compensation<T: Real>(path: impl AsRef<Path>) -> Result<CompensationSet<T>> {
    let (manifest, data) = read_archive(path.as_ref(), ArchiveKind::Compensation)?;
    let mut entries = Vec::with_capacity(data.len());
    for (blob, taps) in manifest.blobs.iter().zip(data) {
        let (m, k) =
            parse_pair(&blob.name).ok_or_else(|| Error::Archive(format!("unexpected blob name {}", blob.name)))?;
        let residual = blob.residual.ok_or_else(|| Error::Archive(format!("blob {} lacks its residual", blob.name)))?;
        entries.push(((m, k), ir(taps)?, residual));
    }
    CompensationSet::with_residuals(manifest.nodes, manifest.path_len, entries)
}

fn parse_pair(name: &str) -> Option<(usize, usize)> {
    let mut parts = name.strip_prefix("c_")?.split('_');
    let m = parts.next()?.parse().ok()?;
    let k = parts.next()?.parse().ok()?;
    parts.next().is_none().then_some((m, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compensation::estimate_compensation;
    use crate::scene::{perturb_estimates, synthesize_scene, PathSynthesisSpec};

    fn scene() -> AcousticScene<f64> {
        let spec = PathSynthesisSpec { seed: 11, ..PathSynthesisSpec::default() };
        let s = synthesize_scene(&spec, 3, 16000.0).unwrap();
        perturb_estimates(&s, -25.0, 4).unwrap()
    }

    fn bits<T: Real>(h: &ImpulseResponse<T>) -> Vec<u64> {
        h.taps().iter().map(|x| x.as_f64().to_bits()).collect()
    }

    #[test]
    fn scene_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.dmc");
        let s = scene();
        save_scene(&path, &s).unwrap();
        let back: AcousticScene<f64> = load_scene(&path).unwrap();
        assert_eq!(back.fs(), s.fs());
        for k in 0..3 {
            assert_eq!(bits(back.primary(k)), bits(s.primary(k)));
        }
        for ((a, h), (_, g)) in s.secondary().iter().zip(back.secondary().iter()) {
            assert_eq!(bits(h), bits(g), "path {a:?}");
        }
        for ((_, h), (_, g)) in s.secondary_est().iter().zip(back.secondary_est().iter()) {
            assert_eq!(bits(h), bits(g));
        }
    }

    #[test]
    fn f32_scene_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene32.dmc");
        let s: AcousticScene<f32> = scene().cast();
        save_scene(&path, &s).unwrap();
        let back: AcousticScene<f32> = load_scene(&path).unwrap();
        for ((_, h), (_, g)) in s.secondary().iter().zip(back.secondary().iter()) {
            assert_eq!(h.taps(), g.taps());
        }
    }

    #[test]
    fn compensation_round_trip_keeps_residuals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("comp.dmc");
        let set = estimate_compensation(&scene(), 9).unwrap();
        save_compensation(&path, &set).unwrap();
        let back: CompensationSet<f64> = load_compensation(&path).unwrap();
        assert_eq!(back.filter_len(), 9);
        for ((mk, c, r), (mk2, c2, r2)) in set.iter().zip(back.iter()) {
            assert_eq!(mk, mk2);
            assert_eq!(bits(c), bits(c2));
            assert_eq!(r.to_bits(), r2.to_bits());
        }
    }

    #[test]
    fn rejects_wrong_kind_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.dmc");
        save_scene(&path, &scene()).unwrap();
        assert!(matches!(load_compensation::<f64>(&path), Err(Error::Archive(_))));

        let junk = dir.path().join("junk");
        std::fs::write(&junk, b"not an archive at all").unwrap();
        assert!(matches!(load_scene::<f64>(&junk), Err(Error::Archive(_))));

        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut");
        std::fs::write(&cut, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_scene::<f64>(&cut), Err(Error::Archive(_))));
    }
}
