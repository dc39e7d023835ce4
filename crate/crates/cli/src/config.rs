//! Effective run configuration: defaults, an optional JSON file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xattn::detector::{ModelConfig, TrainParams};
use xattn::evalharness::default_fractions;
use xattn::saliency::ExplainOptions;
use xattn::scenegen::ScenegenParams;
use xattn::{Error, Result};

pub const CONFIG_ECHO: &str = "config.echo.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Base seed for scene generation, training and the random baseline.
    pub seed: u64,
    /// Scenes written by `gen-data`.
    pub n_scenes: usize,
    pub scenes: ScenegenParams,
    pub model: ModelConfig,
    pub train: TrainParams,
    pub explain: ExplainOptions,
    pub fractions: Vec<f64>,
    pub per_camera_masking: bool,
    pub dataset: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Report directory served by `/api/perturbation`.
    pub report: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub addr: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_scenes: 200,
            scenes: ScenegenParams::default(),
            model: ModelConfig::default(),
            train: TrainParams::default(),
            explain: ExplainOptions::default(),
            fractions: default_fractions(),
            per_camera_masking: false,
            dataset: None,
            weights: None,
            out: None,
            report: None,
            jobs: None,
            addr: "127.0.0.1:8080".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
            _ => e.into(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn require_dataset(&self) -> Result<&Path> {
        require(&self.dataset, "--dataset")
    }

    pub fn require_weights(&self) -> Result<&Path> {
        require(&self.weights, "--weights")
    }

    pub fn require_out(&self) -> Result<&Path> {
        require(&self.out, "--out")
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_ECHO), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::InvalidParams(format!("{flag} is required")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 7, "model": {"n_layers": 2}, "train": {"steps": 10}}"#).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.n_layers, 2);
        assert_eq!(cfg.model.n_heads, ModelConfig::default().n_heads);
        assert_eq!(cfg.train.steps, 10);
        assert_eq!(cfg.fractions.len(), 21);
    }

    #[test]
    fn echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            seed: 3,
            ..Default::default()
        };
        cfg.echo(dir.path()).unwrap();
        assert_eq!(RunConfig::load(&dir.path().join(CONFIG_ECHO)).unwrap(), cfg);
    }

    #[test]
    fn malformed_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, "{seed: }").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert_eq!(err.code(), "parse");
        assert!(err.to_string().contains("bad.json"));
    }
}
