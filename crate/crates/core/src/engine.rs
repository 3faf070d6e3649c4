//! Wires a configuration into connectors, providers, catalog, memory and
//! planner.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use crate::catalog::{Catalog, CatalogError, FileConnector, ProfileOutcome, SqlConnector};
use crate::config::{ConfigError, ConnectorKind, ProviderMode, SystemConfig};
use crate::executor::{ExecutionTrace, PhysicalPlan};
use crate::memory::MemoryStore;
use crate::models::{ModelRegistry, ModelSpec, RegistryError};
use crate::optimizer::OptimizerTrace;
use crate::plan::{validate_grammar, PlanNode, ValidationError};
use crate::planner::{AnswerTable, ExecutionFailure, FailureReport, Planner};
use crate::prompts::{PromptError, Prompts};
use crate::provider::{
    ChatProvider, Embedder, FixtureStore, HashEmbedder, HttpEmbedder, HttpProvider, MockProvider, ProviderError,
    RecordingProvider, ReplayProvider, RetryingProvider,
};
use crate::table::Table;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Tiers used when the configuration names no registry file.
pub fn default_registry() -> ModelRegistry {
    ModelRegistry::new(vec![
        ModelSpec::new("mock-small", 1e-7, 4e-7, 0.80, 1),
        ModelSpec::new("mock-medium", 5e-7, 1.5e-6, 0.90, 2),
        ModelSpec::new("mock-large", 3e-6, 1.2e-5, 0.97, 3),
    ])
    .expect("static registry is valid")
}

/// Outcome of running a plan file directly.
#[derive(Debug, Clone)]
pub struct PlanRun {
    pub table: Table,
    pub plan: PlanNode,
    pub physical: PhysicalPlan,
    pub optimizer: OptimizerTrace,
    pub execution: ExecutionTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunPlanError {
    Invalid(Vec<ValidationError>),
    Execution(ExecutionFailure),
}

impl std::fmt::Display for RunPlanError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunPlanError::Invalid(errors) => {
                for (i, e) in errors.iter().enumerate() {
                    if i > 0 {
                        writeln!(f)?;
                    }
                    write!(f, "node {}: {e}", e.node_id)?;
                }
                Ok(())
            }
            RunPlanError::Execution(e) => write!(f, "{}", e.message),
        }
    }
}

pub struct Engine {
    pub config: SystemConfig,
    pub catalog: Catalog,
    pub memory: MemoryStore,
    pub registry: ModelRegistry,
    pub prompts: Prompts,
    pub chat: Option<Arc<dyn ChatProvider>>,
    pub embedder: Arc<dyn Embedder>,
}

fn build_chat(cfg: &SystemConfig) -> Result<Option<Arc<dyn ChatProvider>>, EngineError> {
    let p = &cfg.provider;
    let timeout = Duration::from_secs(p.timeout_secs.max(1));
    let mock = || -> Result<Option<Arc<dyn ChatProvider>>, EngineError> {
        Ok(match &p.mock_script {
            Some(s) => Some(Arc::new(MockProvider::from_script_file(s)?)),
            None => None,
        })
    };
    let http = || -> Arc<dyn ChatProvider> {
        let inner = HttpProvider::new(p.endpoint.clone().unwrap_or_default(), p.api_key.clone(), timeout);
        Arc::new(RetryingProvider::new(inner, p.retries, Duration::from_millis(500)))
    };
    let fixtures = || -> Result<Arc<FixtureStore>, EngineError> {
        let dir = cfg.paths.fixtures.clone().ok_or_else(|| ConfigError::Invalid("paths.fixtures is not set".into()))?;
        Ok(Arc::new(FixtureStore::open(dir)?))
    };
    Ok(match p.mode {
        ProviderMode::Mock => mock()?,
        ProviderMode::Http => Some(http()),
        ProviderMode::Replay => Some(Arc::new(ReplayProvider::strict(fixtures()?))),
        ProviderMode::Record => {
            let upstream = if p.endpoint.is_some() { Some(http()) } else { mock()? };
            let upstream =
                upstream.ok_or_else(|| ConfigError::Invalid("record mode has no upstream provider".into()))?;
            Some(Arc::new(RecordingProvider::new(fixtures()?, upstream)))
        }
    })
}

fn build_embedder(cfg: &SystemConfig) -> Arc<dyn Embedder> {
    let p = &cfg.provider;
    match &p.embedding_endpoint {
        Some(url) => Arc::new(HttpEmbedder::new(
            url.clone(),
            p.api_key.clone(),
            p.embedding_model.clone().unwrap_or_default(),
            p.embedding_dim,
            Duration::from_secs(p.timeout_secs.max(1)),
        )),
        None => Arc::new(HashEmbedder::new(p.embedding_dim, p.embedding_seed)),
    }
}

impl Engine {
    pub fn from_path(path: &Path) -> Result<Engine, EngineError> {
        Engine::open(SystemConfig::load(path)?)
    }

    pub fn open(config: SystemConfig) -> Result<Engine, EngineError> {
        let chat = build_chat(&config)?;
        Engine::with_provider(config, chat)
    }

    /// Builds everything except the chat provider, which the caller supplies.
    pub fn with_provider(config: SystemConfig, chat: Option<Arc<dyn ChatProvider>>) -> Result<Engine, EngineError> {
        let embedder = build_embedder(&config);
        let registry = match &config.paths.models {
            Some(p) => ModelRegistry::load(p)?,
            None => default_registry(),
        };
        let prompts = Prompts::load(config.paths.prompts.as_deref())?;
        let mut catalog = Catalog::open(config.paths.catalog.as_deref(), embedder.clone())?
            .with_prompts(prompts.clone())
            .with_segment_mode(config.catalog.segment_mode);
        for c in &config.connectors {
            catalog = match c.kind {
                ConnectorKind::Files => {
                    if !c.locator.is_dir() {
                        return Err(ConfigError::Io {
                            path: c.locator.display().to_string(),
                            message: format!("connector '{}': not a readable directory", c.name),
                        }
                        .into());
                    }
                    catalog.with_connector(Arc::new(FileConnector::new(&c.name, &c.locator)))
                }
                ConnectorKind::Sqlite => catalog.with_connector(Arc::new(
                    SqlConnector::open(&c.name, &c.locator).map_err(CatalogError::Connector)?,
                )),
            };
        }
        let mut memory = MemoryStore::open(config.paths.memory.as_deref(), embedder.clone())?
            .with_settings(config.memory.settings())
            .with_prompts(prompts.clone());
        if let Some(chat) = &chat {
            catalog = catalog.with_llm(chat.clone(), registry.cheapest().model_name.clone());
            memory = memory
                .with_classifier(chat.clone(), registry.cheapest().model_name.clone())
                .with_summarizer(chat.clone(), registry.top().model_name.clone());
        }
        Ok(Engine { config, catalog, memory, registry, prompts, chat, embedder })
    }

    pub fn profile(&self) -> Result<Vec<ProfileOutcome>, CatalogError> {
        self.catalog.profile_all()
    }

    /// Profiles once when the catalog is empty and auto-profiling is on.
    pub fn ensure_profiled(&self) -> Result<(), CatalogError> {
        if self.config.catalog.auto_profile && self.catalog.profiles().is_empty() {
            self.profile()?;
        }
        Ok(())
    }

    pub fn planner(&self) -> Planner<'_> {
        let mut p = Planner::new(&self.catalog, &self.memory, &self.registry, &self.prompts)
            .with_config(self.config.planner.clone())
            .with_optimizer(self.config.optimizer.clone(), true);
        if let Some(chat) = &self.chat {
            p = p.with_chat(chat.as_ref());
        }
        p
    }

    /// Answers a question; `max_iterations` overrides the configuration.
    pub fn ask(&self, query: &str, max_iterations: Option<u32>) -> Result<AnswerTable, FailureReport> {
        let mut planner = self.planner();
        if let Some(n) = max_iterations {
            planner.config.max_iterations = n.max(1);
        }
        planner.run_task(query)
    }

    /// Grammar check, then optimization (unless disabled) and execution.
    pub fn run_plan(&self, plan: &PlanNode, optimize: bool) -> Result<PlanRun, RunPlanError> {
        let errors = validate_grammar(plan, &self.catalog);
        if !errors.is_empty() {
            return Err(RunPlanError::Invalid(errors));
        }
        let mut planner = self.planner();
        planner.optimize = optimize;
        let (physical, optimizer, execution, table) = planner.execute(plan).map_err(RunPlanError::Execution)?;
        Ok(PlanRun { table, plan: plan.clone(), physical, optimizer, execution })
    }
}
