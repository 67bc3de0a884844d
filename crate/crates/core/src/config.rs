//! Declarative run configuration loaded from TOML.
//!
//! ```toml
//! mode = "parallel"
//! prompt_mode = "pegs_all"
//! store = "store"
//!
//! [thresholds]
//! dedup = 0.85
//! flag = 0.5
//! failover = 0.6
//!
//! [[providers]]
//! provider_id = "gpt4"
//! kind = "mock"
//! script = "scripts/gpt4.json"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{
    ConsensusError, Embedder, MergeOptions, PrecomputedEmbedder, TrigramEmbedder,
    DEFAULT_DEDUP_THRESHOLD, DEFAULT_FLAG_THRESHOLD,
};
use crate::ingest::MIN_CHUNK_TOKENS;
use crate::orchestrator::{
    ExecutionMode, OrchestrationPlan, OrchestratorError, DEFAULT_COMPLEXITY_CUTOFF,
    DEFAULT_FAILOVER_THRESHOLD, DEFAULT_MAX_IN_FLIGHT,
};
use crate::prompting::{PlanMode, PromptTemplates, TemplateError};
use crate::providers::{validate_profiles, Provider, ProviderError, ProviderProfile};

pub const DEFAULT_CHUNK_TOKENS: usize = 1500;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Embedding(#[from] ConsensusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub dedup: f64,
    pub flag: f64,
    pub failover: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            dedup: DEFAULT_DEDUP_THRESHOLD,
            flag: DEFAULT_FLAG_THRESHOLD,
            failover: DEFAULT_FAILOVER_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Routing {
    pub cost_routing: bool,
    pub complexity_cutoff: f64,
}

impl Default for Routing {
    fn default() -> Self {
        Self {
            cost_routing: false,
            complexity_cutoff: DEFAULT_COMPLEXITY_CUTOFF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub providers: Vec<ProviderProfile>,
    pub mode: ExecutionMode,
    pub prompt_mode: PlanMode,
    pub thresholds: Thresholds,
    pub routing: Routing,
    pub chunk_max_tokens: usize,
    pub max_in_flight: usize,
    pub store: Option<PathBuf>,
    pub auth_token: Option<String>,
    /// Directory with `pegs.txt`, `generic.txt` and `schema.txt` overrides.
    pub prompt_dir: Option<PathBuf>,
    /// JSON table of precomputed embeddings; the trigram embedding otherwise.
    pub embeddings: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            providers: Vec::new(),
            mode: ExecutionMode::default(),
            prompt_mode: PlanMode::default(),
            thresholds: Thresholds::default(),
            routing: Routing::default(),
            chunk_max_tokens: DEFAULT_CHUNK_TOKENS,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            store: None,
            auth_token: None,
            prompt_dir: None,
            embeddings: None,
            base_dir: PathBuf::from("."),
        }
    }
}

fn open_unit(name: &str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!(
            "thresholds.{name} must be strictly between 0 and 1, got {value}"
        )))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config: RunConfig = toml::from_str(text)?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        open_unit("dedup", self.thresholds.dedup)?;
        open_unit("flag", self.thresholds.flag)?;
        open_unit("failover", self.thresholds.failover)?;
        if !(0.0..=1.0).contains(&self.routing.complexity_cutoff) {
            return Err(ConfigError::Invalid(format!(
                "routing.complexity_cutoff must be within [0, 1], got {}",
                self.routing.complexity_cutoff
            )));
        }
        if self.max_in_flight == 0 {
            return Err(ConfigError::Invalid(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if self.chunk_max_tokens < MIN_CHUNK_TOKENS {
            return Err(ConfigError::Invalid(format!(
                "chunk_max_tokens must be at least {MIN_CHUNK_TOKENS}"
            )));
        }
        validate_profiles(&self.providers)?;
        Ok(())
    }

    /// `path` resolved against the config directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn store_path(&self) -> Option<PathBuf> {
        self.store.as_deref().map(|p| self.resolve(p))
    }

    pub fn build_providers(&self) -> Result<Vec<Provider>, ConfigError> {
        self.providers
            .iter()
            .map(|p| Ok(Provider::from_profile(p.clone(), &self.base_dir)?))
            .collect()
    }

    pub fn templates(&self) -> Result<PromptTemplates, ConfigError> {
        match &self.prompt_dir {
            Some(dir) => Ok(PromptTemplates::from_dir(&self.resolve(dir))?),
            None => Ok(PromptTemplates::default()),
        }
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>, ConfigError> {
        match &self.embeddings {
            Some(path) => Ok(Arc::new(PrecomputedEmbedder::load(&self.resolve(path))?)),
            None => Ok(Arc::new(TrigramEmbedder)),
        }
    }

    pub fn plan(&self, providers: Vec<Provider>) -> Result<OrchestrationPlan, ConfigError> {
        Ok(OrchestrationPlan::new(self.mode, providers)?
            .with_failover_threshold(self.thresholds.failover)?
            .with_cost_routing(self.routing.cost_routing, self.routing.complexity_cutoff)?
            .with_max_in_flight(self.max_in_flight)?)
    }

    pub fn merge_options(&self, namespace: &str) -> MergeOptions {
        MergeOptions {
            dedup_threshold: self.thresholds.dedup,
            flag_threshold: self.thresholds.flag,
            id_namespace: namespace.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [[providers]]
        provider_id = "a"
        kind = "mock"
        script = "a.json"
    "#;

    #[test]
    fn defaults_apply() {
        let c = RunConfig::from_toml_str(MINIMAL, Path::new("/cfg")).unwrap();
        assert_eq!(c.thresholds, Thresholds::default());
        assert_eq!(c.thresholds.dedup, 0.85);
        assert_eq!(c.thresholds.flag, 0.5);
        assert_eq!(c.thresholds.failover, 0.6);
        assert_eq!(c.mode, ExecutionMode::Parallel);
        assert_eq!(c.prompt_mode, PlanMode::PegsAll);
        assert_eq!(c.providers[0].weight, 1.0);
        assert_eq!(c.resolve(Path::new("x")), PathBuf::from("/cfg/x"));
    }

    #[test]
    fn out_of_range_threshold_is_rejected() {
        let text = format!("{MINIMAL}\n[thresholds]\nflag = 1.5\n");
        let err = RunConfig::from_toml_str(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("thresholds.flag"), "{err}");
        let text = format!("{MINIMAL}\n[thresholds]\ndedup = 0.0\n");
        assert!(RunConfig::from_toml_str(&text, Path::new(".")).is_err());
    }

    #[test]
    fn provider_rules_are_enforced() {
        let text = r#"
            [[providers]]
            provider_id = "a"
            kind = "mock"
            weight = 3.0
        "#;
        assert!(matches!(
            RunConfig::from_toml_str(text, Path::new(".")),
            Err(ConfigError::Provider(ProviderError::InvalidWeight { .. }))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("mode = \"parallel\"", Path::new(".")),
            Err(ConfigError::Provider(ProviderError::NoProviders))
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("flag_threshold = 0.4\n{MINIMAL}");
        assert!(RunConfig::from_toml_str(&text, Path::new(".")).is_err());
    }
}
