use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::generator::GuardConfig;
use crate::pipeline::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardThresholds {
    pub min_fraction: f64,
    pub min_households: usize,
    /// k-anonymity level enforced on the training data.
    pub k: usize,
}

impl Default for GuardThresholds {
    fn default() -> Self {
        let g = GuardConfig::default();
        GuardThresholds { min_fraction: g.min_fraction, min_households: g.min_households, k: 3 }
    }
}

impl GuardThresholds {
    pub fn guard_config(&self) -> GuardConfig {
        GuardConfig { min_fraction: self.min_fraction, min_households: self.min_households }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub address: String,
    pub port: u16,
    /// Accepted bearer tokens.
    pub tokens: Vec<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { address: "127.0.0.1".into(), port: 8080, tokens: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    pub data_path: PathBuf,
    pub holdout_path: PathBuf,
    pub artifact_path: PathBuf,
    pub report_dir: PathBuf,
    pub guards: GuardThresholds,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
    pub server: ServerConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            seed: 0,
            data_path: "data/train.csv".into(),
            holdout_path: "data/holdout.csv".into(),
            artifact_path: "model.fday".into(),
            report_dir: "report".into(),
            guards: GuardThresholds::default(),
            pipeline: PipelineConfig::default(),
            eval: EvalConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: AppConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.guards;
        if !(g.min_fraction > 0.0 && g.min_fraction < 1.0) {
            return Err(Error::Config(format!("guards.min_fraction {} must lie in (0, 1)", g.min_fraction)));
        }
        if g.min_households == 0 {
            return Err(Error::Config("guards.min_households must be positive".into()));
        }
        if g.k < 2 {
            return Err(Error::Config(format!("guards.k must be at least 2, got {}", g.k)));
        }
        if self.pipeline.component_candidates.contains(&0) || self.pipeline.gmm.components == 0 {
            return Err(Error::Config("mixture sizes must be positive".into()));
        }
        self.pipeline.train.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Pipeline settings with the guard `k` and the run seed applied.
    pub fn pipeline_config(&self, seed: u64) -> PipelineConfig {
        let mut p = self.pipeline.clone().with_seed(seed);
        p.k_anonymity = self.guards.k;
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_toml() {
        let cfg = AppConfig::from_toml(
            r#"
            seed = 4
            artifact_path = "m.fday"
            [guards]
            min_households = 5
            [pipeline]
            component_candidates = [2, 5]
            [pipeline.train]
            epochs = 3
            [server]
            tokens = ["abc"]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.guards.min_households, 5);
        assert_eq!(cfg.guards.min_fraction, 0.01);
        assert_eq!(cfg.pipeline.train.epochs, 3);
        assert_eq!(cfg.pipeline.component_candidates, vec![2, 5]);
        assert_eq!(cfg.server.tokens, vec!["abc".to_string()]);
        assert_eq!(cfg.pipeline_config(9).train.seed, 9);
    }

    #[test]
    fn rejects_bad_thresholds_and_unknown_keys() {
        assert!(AppConfig::from_toml("[guards]\nk = 1").is_err());
        assert!(AppConfig::from_toml("[guards]\nmin_fraction = 0.0").is_err());
        assert!(AppConfig::from_toml("bogus = 1").is_err());
        assert!(AppConfig::from_toml("[pipeline]\ncomponent_candidates = [0, 2]").is_err());
        assert!(matches!(AppConfig::load(Path::new("/nonexistent/x.toml")), Err(Error::MissingFile(_))));
    }
}
