//! Chat and embedding providers.
//!
//! Every LLM interaction in the system goes through [`ChatProvider`]; every
//! vectorization goes through [`Embedder`]. Backends: an OpenAI-style HTTP
//! client, a deterministic rule/script mock, and a fixture store that records
//! and replays chat exchanges byte-for-byte.

mod embed;
mod fixture;
mod http;
mod mock;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use embed::{cosine, dot, normalize, HashEmbedder, SparseVector, MOCK_EMBEDDING_DIM};
pub use fixture::{
    normalize_prompt, Fixture, FixtureStore, RecordingProvider, ReplayProvider, MEMORY_BEGIN, MEMORY_END,
};
pub use http::{network_calls, HttpEmbedder, HttpProvider};
pub use mock::{MockProvider, MockRule, Responder, UnavailableProvider, ROW_MARKER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f32,
}

impl ChatRequest {
    /// Agent and validator calls always run at temperature 0.
    pub fn new(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        ChatRequest { model: model.into(), prompt: prompt.into(), max_output_tokens: 1024, temperature: 0.0 }
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
}

impl ChatResponse {
    /// Response whose usage follows the `ceil(chars / 4)` rule.
    pub fn counted(prompt: &str, text: String) -> Self {
        let usage = Usage { input_tokens: token_count(prompt), output_tokens: token_count(&text) };
        ChatResponse { text, usage }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("ProviderError: {0}")]
    Unavailable(String),
    #[error("ProviderError: HTTP {0}")]
    Http(String),
    #[error("UnknownFixture({key}) for model {model}")]
    UnknownFixture { key: String, model: String },
    #[error("ProviderError: invalid request: {0}")]
    InvalidRequest(String),
    #[error("ProviderError: fixture store: {0}")]
    Store(String),
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Unit-norm vectors, one per input text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;

    fn embed_one(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        Ok(self.embed(&[text.to_string()])?.pop().expect("one vector per text"))
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for Arc<T> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).chat(request)
    }
}

impl<T: Embedder + ?Sized> Embedder for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        (**self).embed(texts)
    }
}

/// Provider-independent token estimate: `ceil(characters / 4)`.
pub fn token_count(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Retries transient failures with exponential backoff. Unknown fixtures and
/// invalid requests are not retried.
pub struct RetryingProvider<P> {
    inner: P,
    retries: u32,
    base_delay: Duration,
}

impl<P: ChatProvider> RetryingProvider<P> {
    pub fn new(inner: P, retries: u32, base_delay: Duration) -> Self {
        RetryingProvider { inner, retries, base_delay }
    }
}

impl<P: ChatProvider> ChatProvider for RetryingProvider<P> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let mut attempt = 0;
        loop {
            match self.inner.chat(request) {
                Err(e @ (ProviderError::Unavailable(_) | ProviderError::Http(_))) if attempt < self.retries => {
                    log::warn!("provider call failed ({e}); retry {} of {}", attempt + 1, self.retries);
                    std::thread::sleep(self.base_delay * 2u32.pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    #[test]
    fn token_rule() {
        assert_eq!(token_count(""), 0);
        assert_eq!(token_count("abcd"), 1);
        assert_eq!(token_count("abcde"), 2);
        assert_eq!(token_count(&"x".repeat(400)), 100);
    }

    struct Flaky(AtomicU32);

    impl ChatProvider for Flaky {
        fn chat(&self, r: &ChatRequest) -> Result<ChatResponse, ProviderError> {
            if self.0.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(ProviderError::Unavailable("flaky".into()))
            } else {
                Ok(ChatResponse::counted(&r.prompt, "ok".into()))
            }
        }
    }

    #[test]
    fn retries_twice_then_succeeds() {
        let p = RetryingProvider::new(Flaky(AtomicU32::new(0)), 2, Duration::from_millis(1));
        assert_eq!(p.chat(&ChatRequest::new("m", "hi")).unwrap().text, "ok");
        let p = RetryingProvider::new(Flaky(AtomicU32::new(0)), 1, Duration::from_millis(1));
        assert!(p.chat(&ChatRequest::new("m", "hi")).is_err());
    }
}
