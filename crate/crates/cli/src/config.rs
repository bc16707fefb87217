//! Run configuration: command-line flags over an optional JSON file over
//! built-in defaults, plus the manifest written next to every output.

use std::fs;
use std::path::{Path, PathBuf};

use omerf::benchmark::BenchmarkPlan;
use omerf::omerf::OmerfConfig;
use omerf::{OmerfError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub dgp: Option<u32>,
    pub n_groups: usize,
    pub n_per_group: usize,
    pub categories: u32,
    pub train_ratio: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            dgp: None,
            n_groups: 10,
            n_per_group: 100,
            categories: 3,
            train_ratio: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub grid_points: usize,
    pub importance_repeats: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            grid_points: 20,
            importance_repeats: 1,
        }
    }
}

/// Everything a run can be configured with. In a config file every field is
/// optional; in a manifest every field is filled in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub simulate: SimulateConfig,
    pub omerf: OmerfConfig,
    pub benchmark: BenchmarkPlan,
    pub explain: ExplainConfig,
}

impl RunConfig {
    /// Read a config file, or the `config` section of a manifest.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| OmerfError::io(path, e))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("tool").is_some() {
            if let Some(inner) = value.get_mut("config").map(serde_json::Value::take) {
                value = inner;
            }
        }
        serde_json::from_value(value)
            .map_err(|e| OmerfError::validation(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("omerf-out"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Command arguments that are not part of the config (input paths, model kind).
    pub inputs: serde_json::Map<String, serde_json::Value>,
    pub outputs: Vec<String>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, inputs: serde_json::Map<String, serde_json::Value>, config: &RunConfig) -> Self {
        Manifest {
            tool: "omerf".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            inputs,
            outputs: Vec::new(),
            config: config.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| OmerfError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"seed": 9, "omerf": {"toll": 0.01}, "benchmark": {"replications": 3}}"#).unwrap();
        let c = RunConfig::from_file(&p).unwrap();
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.omerf.toll, 0.01);
        assert_eq!(c.omerf.itmax, 100);
        assert_eq!(c.benchmark.replications, 3);
        assert_eq!(c.simulate, SimulateConfig::default());
    }

    #[test]
    fn manifest_round_trips_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { seed: Some(4), threads: Some(2), ..Default::default() };
        let m = Manifest::new("simulate", Default::default(), &cfg);
        m.write(dir.path()).unwrap();
        let back = RunConfig::from_file(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"sed": 9}"#).unwrap();
        assert!(RunConfig::from_file(&p).is_err());
    }
}
