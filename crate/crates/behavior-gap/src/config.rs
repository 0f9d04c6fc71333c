//! Run configuration: one TOML file describing the corpus, provider,
//! metric constants, and stage settings. Secrets (API base URL and key)
//! come from environment variables only and never enter the config hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Task;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model_id: String,
    /// Script file for the scripted provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
}

/// Metric constants, defaulting to the standard values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Constants {
    pub c: f64,
    pub d_max: usize,
    pub alignment_threshold: f64,
    pub bootstrap_resamples: usize,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            c: crate::metrics::DEFAULT_TURN_COUNT_C,
            d_max: crate::metrics::DEFAULT_D_MAX,
            alignment_threshold: crate::metrics::DEFAULT_ALIGNMENT_THRESHOLD,
            bootstrap_resamples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSettings {
    pub max_react_steps: usize,
    pub guidelines: String,
    pub temperature: f64,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings {
            max_react_steps: crate::agent::DEFAULT_MAX_REACT_STEPS,
            guidelines: String::new(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    /// Directory of per-domain entity files.
    pub db: Option<PathBuf>,
    /// Directory of knowledge-base documents.
    pub kb: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub constants: Constants,
    #[serde(default)]
    pub agent: AgentSettings,
    #[serde(default)]
    pub paths: DataPaths,
    /// Externally reported numbers that need live model access: recorded in
    /// the report as configured targets, next to whatever this run measured.
    #[serde(default)]
    pub targets: BTreeMap<String, f64>,
}

fn default_max_parallel() -> usize {
    4
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Invalid {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.check().map_err(|reason| ConfigError::Invalid {
            path: path.to_path_buf(),
            reason,
        })?;
        Ok(config)
    }

    /// Make every relative path absolute with respect to `base` (the config
    /// file's directory), so a run behaves the same from any working
    /// directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.corpus);
        resolve(&mut self.out_dir);
        resolve(&mut self.cache_dir);
        if let Some(script) = &mut self.provider.script {
            resolve(script);
        }
        if let Some(db) = &mut self.paths.db {
            resolve(db);
        }
        if let Some(kb) = &mut self.paths.kb {
            resolve(kb);
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.agent.max_react_steps == 0 {
            return Err("agent.max_react_steps must be at least 1".to_string());
        }
        if !(0.0..=2.0).contains(&self.agent.temperature) {
            return Err("agent.temperature must be in [0, 2]".to_string());
        }
        if self.constants.bootstrap_resamples == 0 {
            return Err("constants.bootstrap_resamples must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.constants.alignment_threshold)
            || self.constants.alignment_threshold == 0.0
        {
            return Err("constants.alignment_threshold must be in (0, 1]".to_string());
        }
        if self.provider.kind == ProviderKind::Scripted && self.provider.script.is_none() {
            return Err("scripted provider requires provider.script".to_string());
        }
        Ok(())
    }

    /// Short stable hash of the effective configuration. Output artifacts
    /// carry it; artifacts from different hashes never mix. Filesystem
    /// locations are excluded so a run directory can be moved or copied
    /// without invalidating its artifacts.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("serializable config");
        let map = value.as_object_mut().expect("config is a map");
        map.remove("corpus");
        map.remove("out_dir");
        map.remove("cache_dir");
        map.remove("paths");
        if let Some(provider) = map.get_mut("provider").and_then(|p| p.as_object_mut()) {
            provider.remove("script");
        }
        let canonical = serde_json::to_vec(&value).expect("serializable config");
        let mut hasher = Sha256::new();
        hasher.update(&canonical);
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
