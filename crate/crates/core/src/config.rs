//! System configuration: one TOML document, `${VAR}` environment references,
//! paths relative to the file that names them.

use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::catalog::SegmentMode;
use crate::memory::MemorySettings;
use crate::optimizer::OptimizerConfig;
use crate::planner::PlannerConfig;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("environment variable {0} is referenced by the configuration but not set")]
    MissingVar(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectorKind {
    /// A directory of CSV, JSON and text files.
    Files,
    /// A SQLite database file or a `.sql` script.
    Sqlite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectorConfig {
    pub name: String,
    pub kind: ConnectorKind,
    pub locator: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Http,
    Record,
    Replay,
    #[default]
    Mock,
}

impl ProviderMode {
    pub fn name(self) -> &'static str {
        match self {
            ProviderMode::Http => "http",
            ProviderMode::Record => "record",
            ProviderMode::Replay => "replay",
            ProviderMode::Mock => "mock",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    /// Chat-completions base URL for http and record modes.
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    /// Rule script for mock mode, and the upstream of record mode when no
    /// endpoint is set.
    pub mock_script: Option<PathBuf>,
    pub timeout_secs: u64,
    pub retries: u32,
    /// Embedding endpoint; the seeded hash embedder when unset.
    pub embedding_endpoint: Option<String>,
    pub embedding_model: Option<String>,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            mode: ProviderMode::Mock,
            endpoint: None,
            api_key: None,
            mock_script: None,
            timeout_secs: 60,
            retries: 2,
            embedding_endpoint: None,
            embedding_model: None,
            embedding_dim: crate::provider::MOCK_EMBEDDING_DIM,
            embedding_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Catalog store; in memory when unset.
    pub catalog: Option<PathBuf>,
    /// Memory store; in memory when unset.
    pub memory: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
    /// Overrides for the built-in prompt templates.
    pub prompts: Option<PathBuf>,
    pub models: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub short_term_cap: usize,
    pub theta: f64,
    pub top_k: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        let d = MemorySettings::default();
        MemoryConfig { short_term_cap: d.short_term_cap, theta: d.theta, top_k: d.top_k }
    }
}

impl MemoryConfig {
    pub fn settings(&self) -> MemorySettings {
        MemorySettings { short_term_cap: self.short_term_cap, theta: self.theta, top_k: self.top_k }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogConfig {
    pub segment_mode: SegmentMode,
    /// Profile automatically before the first question when the catalog is empty.
    pub auto_profile: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    pub connectors: Vec<ConnectorConfig>,
    pub provider: ProviderConfig,
    pub paths: PathsConfig,
    pub optimizer: OptimizerConfig,
    pub planner: PlannerConfig,
    pub memory: MemoryConfig,
    pub catalog: CatalogConfig,
}

/// Replaces every `${NAME}` with the variable's value.
pub fn expand_env(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, ConfigError> {
    let re = Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex");
    let mut missing = None;
    let out = re.replace_all(text, |c: &regex::Captures| match lookup(&c[1]) {
        Some(v) => v,
        None => {
            missing.get_or_insert_with(|| c[1].to_string());
            String::new()
        }
    });
    match missing {
        Some(name) => Err(ConfigError::MissingVar(name)),
        None => Ok(out.into_owned()),
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl SystemConfig {
    pub fn load(path: &Path) -> Result<SystemConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        SystemConfig::parse(&text, base)
    }

    /// Parses with environment expansion and resolves relative paths
    /// against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<SystemConfig, ConfigError> {
        let expanded = expand_env(text, |k| std::env::var(k).ok())?;
        let mut cfg: SystemConfig = toml::from_str(&expanded).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for c in &mut cfg.connectors {
            resolve(base, &mut c.locator);
        }
        let p = &mut cfg.paths;
        for path in
            [&mut p.catalog, &mut p.memory, &mut p.fixtures, &mut p.prompts, &mut p.models].into_iter().flatten()
        {
            resolve(base, path);
        }
        if let Some(s) = &mut cfg.provider.mock_script {
            resolve(base, s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Value ranges and the paths that must already exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let eps = self.optimizer.epsilon;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(ConfigError::Invalid(format!("optimizer.epsilon must lie in (0, 1), got {eps}")));
        }
        if self.planner.max_iterations == 0 {
            return Err(ConfigError::Invalid("planner.max_iterations must be at least 1".into()));
        }
        if self.planner.n_per_kind == 0 {
            return Err(ConfigError::Invalid("planner.n_per_kind must be at least 1".into()));
        }
        if self.optimizer.sampling.max_sample == 0 || self.optimizer.sampling.epsilon_ci <= 0.0 {
            return Err(ConfigError::Invalid("optimizer.sampling needs max_sample > 0 and epsilon_ci > 0".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.connectors {
            if !names.insert(c.name.as_str()) {
                return Err(ConfigError::Invalid(format!("connector '{}' is declared twice", c.name)));
            }
        }
        let must_exist = |what: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::Io { path: p.display().to_string(), message: format!("{what} does not exist") })
            }
        };
        if let Some(m) = &self.paths.models {
            must_exist("model registry", m)?;
        }
        if let Some(p) = &self.paths.prompts {
            must_exist("prompt directory", p)?;
        }
        match self.provider.mode {
            ProviderMode::Replay => {
                let f = self
                    .paths
                    .fixtures
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("replay mode needs paths.fixtures".into()))?;
                must_exist("fixture directory", f)?;
            }
            ProviderMode::Record => {
                if self.paths.fixtures.is_none() {
                    return Err(ConfigError::Invalid("record mode needs paths.fixtures".into()));
                }
                if self.provider.endpoint.is_none() && self.provider.mock_script.is_none() {
                    return Err(ConfigError::Invalid(
                        "record mode needs provider.endpoint or provider.mock_script".into(),
                    ));
                }
            }
            ProviderMode::Http => {
                if self.provider.endpoint.is_none() {
                    return Err(ConfigError::Invalid("http mode needs provider.endpoint".into()));
                }
            }
            ProviderMode::Mock => {}
        }
        if let Some(s) = &self.provider.mock_script {
            must_exist("mock script", s)?;
        }
        Ok(())
    }
}
