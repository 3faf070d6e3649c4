//! Registered language models: fees per token and a scalar quality score.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_name: String,
    /// Currency per input token.
    pub fee_in: f64,
    /// Currency per output token.
    pub fee_out: f64,
    pub quality: f64,
    /// 1 is the cheapest tier.
    pub tier: u32,
}

impl ModelSpec {
    pub fn new(model_name: impl Into<String>, fee_in: f64, fee_out: f64, quality: f64, tier: u32) -> Self {
        ModelSpec { model_name: model_name.into(), fee_in, fee_out, quality, tier }
    }

    /// Fee for the given token totals.
    pub fn cost(&self, input_tokens: f64, output_tokens: f64) -> f64 {
        input_tokens * self.fee_in + output_tokens * self.fee_out
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistryError {
    #[error("EmptyRegistry: no models registered")]
    Empty,
    #[error("invalid model registry: {0}")]
    Invalid(String),
    #[error("cannot read model registry {path}: {message}")]
    Io { path: String, message: String },
}

/// Models ordered by tier; quality strictly increases with tier.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ModelRegistry {
    models: Vec<ModelSpec>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RegistryDoc {
    List(Vec<ModelSpec>),
    Table { models: Vec<ModelSpec> },
}

impl ModelRegistry {
    pub fn new(mut models: Vec<ModelSpec>) -> Result<Self, RegistryError> {
        if models.is_empty() {
            return Err(RegistryError::Empty);
        }
        models.sort_by_key(|m| m.tier);
        for m in &models {
            if !(m.fee_in >= 0.0 && m.fee_out >= 0.0) {
                return Err(RegistryError::Invalid(format!("{} has a negative fee", m.model_name)));
            }
            if !(m.quality > 0.0 && m.quality <= 1.0) {
                return Err(RegistryError::Invalid(format!(
                    "{} quality {} is outside (0, 1]",
                    m.model_name, m.quality
                )));
            }
        }
        for w in models.windows(2) {
            if w[0].tier == w[1].tier {
                return Err(RegistryError::Invalid(format!("two models share tier {}", w[0].tier)));
            }
            if w[1].quality <= w[0].quality {
                return Err(RegistryError::Invalid(format!(
                    "quality must increase with tier: {} ({}) vs {} ({})",
                    w[0].model_name, w[0].quality, w[1].model_name, w[1].quality
                )));
            }
        }
        Ok(ModelRegistry { models })
    }

    /// Reads a JSON list, or a TOML file with `[[models]]` entries.
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let io = |e: std::io::Error| RegistryError::Io { path: path.display().to_string(), message: e.to_string() };
        let text = std::fs::read_to_string(path).map_err(io)?;
        let doc: RegistryDoc = if path.extension().and_then(|e| e.to_str()) == Some("toml") {
            toml::from_str(&text).map_err(|e| RegistryError::Invalid(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| RegistryError::Invalid(e.to_string()))?
        };
        match doc {
            RegistryDoc::List(m) | RegistryDoc::Table { models: m } => ModelRegistry::new(m),
        }
    }

    /// Cheapest first.
    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn cheapest(&self) -> &ModelSpec {
        &self.models[0]
    }

    pub fn top(&self) -> &ModelSpec {
        self.models.last().expect("registry is never empty")
    }

    pub fn get(&self, name: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.model_name == name)
    }

    /// Position of a model in tier order.
    pub fn rank_of(&self, name: &str) -> Option<usize> {
        self.models.iter().position(|m| m.model_name == name)
    }
}
