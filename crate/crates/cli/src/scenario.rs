//! Scenario files: one scene and noise source shared by a campaign of
//! algorithm runs.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dmcanc::{AlgorithmConfig, NoiseConfig, SceneConfig, SimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Value;

use crate::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Write every n-th sample to the run log.
    pub log_stride: usize,
    /// Length of the trailing segment used for spectra.
    pub spectrum_seconds: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, log_stride: 1, spectrum_seconds: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub fs: f64,
    pub nodes: usize,
    pub control_len: usize,
    pub compensation_len: usize,
    pub duration_s: f64,
    #[serde(default = "default_anse_window")]
    pub anse_window: usize,
    #[serde(default = "default_trace_stride")]
    pub trace_stride: usize,
    /// Pre-trained compensation archive; estimated from the scene when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compensation: Option<PathBuf>,
    #[serde(default)]
    pub output: OutputConfig,
    pub scene: SceneConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub campaign: Vec<AlgorithmConfig>,
}

fn default_anse_window() -> usize {
    dmcanc::metrics::DEFAULT_ANSE_WINDOW
}

fn default_trace_stride() -> usize {
    1000
}

/// Command-line adjustments applied before the file is validated.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub duration_s: Option<f64>,
    pub nodes: Option<usize>,
    /// `key.path=value` pairs; list entries are addressed by index.
    pub pairs: Vec<String>,
}

impl ScenarioFile {
    pub fn load(path: &Path, overrides: &Overrides) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut doc: Value = text
            .parse::<toml::Table>()
            .map(Value::Table)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        apply_overrides(&mut doc, overrides)?;
        let mut file: ScenarioFile =
            doc.try_into().map_err(|e: toml::de::Error| ConfigError(format!("{}: {}", path.display(), e.message())))?;
        file.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        file.validate()?;
        Ok(file)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut self.scene.path);
        fix(&mut self.noise.path);
        fix(&mut self.compensation);
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.campaign.is_empty() {
            bail!(ConfigError("campaign: at least one entry is required".into()));
        }
        if self.output.log_stride == 0 {
            bail!(ConfigError("output.log_stride must be positive".into()));
        }
        let mut ids = HashSet::new();
        for (i, entry) in self.campaign.iter().enumerate() {
            let id = entry.run_id();
            if !ids.insert(id.clone()) {
                bail!(ConfigError(format!("campaign.{i}: run id `{id}` is used twice; set a distinct `label`")));
            }
            self.sim_config(i).validate().map_err(|e| ConfigError(format!("campaign.{i}: {e}")))?;
        }
        Ok(())
    }

    /// Fully resolved configuration of campaign entry `i`.
    pub fn sim_config(&self, i: usize) -> SimConfig {
        SimConfig {
            fs: self.fs,
            nodes: self.nodes,
            control_len: self.control_len,
            compensation_len: self.compensation_len,
            duration_s: self.duration_s,
            anse_window: self.anse_window,
            trace_stride: self.trace_stride,
            scene: self.scene.clone(),
            noise: self.noise.clone(),
            run: self.campaign[i].clone(),
        }
    }

    /// Resolved settings of entry `i` as TOML, echoed into output headers.
    pub fn resolved_toml(&self, i: usize) -> String {
        #[derive(Serialize)]
        struct Resolved<'a> {
            compensation: Option<&'a Path>,
            output: &'a OutputConfig,
            #[serde(flatten)]
            sim: SimConfig,
        }
        let resolved =
            Resolved { compensation: self.compensation.as_deref(), output: &self.output, sim: self.sim_config(i) };
        toml::to_string(&resolved).expect("resolved configuration serializes")
    }
}

pub fn config_hash(resolved: &str) -> String {
    let digest = Sha256::digest(resolved.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn apply_overrides(doc: &mut Value, o: &Overrides) -> anyhow::Result<()> {
    if let Some(seed) = o.seed {
        set(doc, "scene.synthesis.seed", Value::Integer(seed as i64))?;
        set(doc, "noise.seed", Value::Integer(seed as i64))?;
    }
    if let Some(d) = o.duration_s {
        set(doc, "duration_s", Value::Float(d))?;
    }
    if let Some(k) = o.nodes {
        set(doc, "nodes", Value::Integer(k as i64))?;
    }
    for pair in &o.pairs {
        let (key, raw) =
            pair.split_once('=').ok_or_else(|| ConfigError(format!("override `{pair}` is not key=value")))?;
        set(doc, key.trim(), parse_value(raw.trim()))?;
    }
    Ok(())
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set(doc: &mut Value, key: &str, value: Value) -> anyhow::Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.entry(part.to_string()).or_insert_with(|| Value::Table(Default::default()))
            }
            Value::Array(a) => {
                let idx: usize =
                    part.parse().map_err(|_| ConfigError(format!("override `{key}`: `{part}` is not a list index")))?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| {
                    ConfigError(format!("override `{key}`: index {idx} out of range ({len} entries)"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => bail!(ConfigError(format!("override `{key}`: `{part}` is not inside a table or list"))),
        };
    }
    unreachable!("loop returns on the last key segment")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
fs = 16000
nodes = 2
control_len = 16
compensation_len = 5
duration_s = 0.5

[scene]
source = "synthesize"

[[campaign]]
algorithm = "acdmcanc"
mu = 1e-4
alpha = 50
"#;

    fn load(text: &str, o: &Overrides) -> anyhow::Result<ScenarioFile> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.toml");
        std::fs::write(&p, text).unwrap();
        ScenarioFile::load(&p, o)
    }

    fn is_config(e: &anyhow::Error) -> bool {
        e.downcast_ref::<ConfigError>().is_some()
    }

    #[test]
    fn minimal_file_fills_defaults() {
        let f = load(MINIMAL, &Overrides::default()).unwrap();
        assert_eq!(f.anse_window, 5000);
        assert_eq!(f.campaign[0].period_s, 0.3);
        assert_eq!(f.noise.low_hz, 100.0);
        let resolved = f.resolved_toml(0);
        assert!(resolved.contains("transmitter_reset = \"reset\""));
        assert!(resolved.contains("[scene.synthesis]"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let err = load(&MINIMAL.replace("nodes = 2", "nodes = 2\nnodez = 3"), &Overrides::default()).unwrap_err();
        assert!(is_config(&err));
        assert!(err.to_string().contains("nodez"), "{err}");
        let err = load(&format!("{MINIMAL}bogus = 1\n"), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let o = Overrides {
            seed: Some(9),
            duration_s: Some(1.0),
            nodes: Some(3),
            pairs: vec![
                "campaign.0.mu=2e-4".into(),
                "scene.synthesis.cross_attenuation = 0.25".into(),
                "campaign.0.label=fast".into(),
            ],
        };
        let f = load(MINIMAL, &o).unwrap();
        assert_eq!(f.nodes, 3);
        assert_eq!(f.duration_s, 1.0);
        assert_eq!(f.scene.synthesis.seed, 9);
        assert_eq!(f.noise.seed, 9);
        assert_eq!(f.scene.synthesis.cross_attenuation, 0.25);
        assert_eq!(f.campaign[0].mu, dmcanc::PerNode::All(2e-4));
        assert_eq!(f.campaign[0].run_id(), "fast");
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        for pair in ["campaign.4.mu=1", "duration_s.x=1", "noequals"] {
            let o = Overrides { pairs: vec![pair.into()], ..Default::default() };
            assert!(is_config(&load(MINIMAL, &o).unwrap_err()), "{pair}");
        }
    }

    #[test]
    fn duplicate_run_ids_rejected() {
        let text = format!("{MINIMAL}\n[[campaign]]\nalgorithm = \"acdmcanc\"\nmu = 1e-4\n");
        assert!(is_config(&load(&text, &Overrides::default()).unwrap_err()));
    }

    #[test]
    fn fractional_sample_count_rejected() {
        let o = Overrides { duration_s: Some(1.0 / 3.0), ..Default::default() };
        assert!(is_config(&load(MINIMAL, &o).unwrap_err()));
    }

    #[test]
    fn hash_tracks_resolved_config() {
        let a = load(MINIMAL, &Overrides::default()).unwrap();
        let b = load(MINIMAL, &Overrides { seed: Some(2), ..Default::default() }).unwrap();
        assert_eq!(config_hash(&a.resolved_toml(0)), config_hash(&a.resolved_toml(0)));
        assert_ne!(config_hash(&a.resolved_toml(0)), config_hash(&b.resolved_toml(0)));
        assert_eq!(config_hash("").len(), 64);
    }
}
