//! Analysis configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::endpoints::{ApiCatalog, ServiceCategory};
use crate::engine::EngineConfig;
use crate::ingest::{NetworkStringSet, DEFAULT_NETWORK_STRINGS};
use crate::triage::{ScoreWeights, DEFAULT_LOOP_ITERATION_CAP, DEFAULT_MIN_INVOCATIONS, DEFAULT_SCORE_THRESHOLD};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub network_strings: Vec<String>,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection { network_strings: DEFAULT_NETWORK_STRINGS.iter().map(|s| s.to_string()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriageSection {
    pub score_threshold: f64,
    pub min_invocations: usize,
    pub loop_iteration_cap: usize,
    pub weights: ScoreWeights,
}

impl Default for TriageSection {
    fn default() -> Self {
        TriageSection {
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            min_invocations: DEFAULT_MIN_INVOCATIONS,
            loop_iteration_cap: DEFAULT_LOOP_ITERATION_CAP,
            weights: ScoreWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtraApi {
    pub name: String,
    pub category: ServiceCategory,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogSection {
    pub extra_apis: Vec<ExtraApi>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub step_depth: usize,
    pub max_states: usize,
    pub max_steps: usize,
    pub loop_unroll_cap: usize,
    /// Maximum backward traces per end point.
    pub trace_cap: usize,
    /// Step limit when replaying a solved request concretely.
    pub replay_steps: usize,
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        EngineSection {
            step_depth: e.step_depth,
            max_states: e.max_states,
            max_steps: e.max_steps,
            loop_unroll_cap: e.loop_unroll_cap,
            trace_cap: 64,
            replay_steps: 1_000_000,
        }
    }
}

impl EngineSection {
    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            step_depth: self.step_depth,
            max_states: self.max_states,
            max_steps: self.max_steps,
            loop_unroll_cap: self.loop_unroll_cap,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ingest: IngestSection,
    pub triage: TriageSection,
    pub catalog: CatalogSection,
    pub engine: EngineSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn network_strings(&self) -> NetworkStringSet {
        NetworkStringSet::new(self.ingest.network_strings.iter().cloned())
    }

    pub fn catalog(&self) -> ApiCatalog {
        ApiCatalog::builtin().with_extra(self.catalog.extra_apis.iter().map(|e| (e.name.as_str(), e.category)))
    }
}
