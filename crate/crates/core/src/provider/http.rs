use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::{json, Value as Json};

use super::{normalize, token_count, ChatProvider, ChatRequest, ChatResponse, Embedder, ProviderError, Usage};

static NETWORK_CALLS: AtomicU64 = AtomicU64::new(0);

/// Number of HTTP requests issued by any provider in this process.
pub fn network_calls() -> u64 {
    NETWORK_CALLS.load(Ordering::SeqCst)
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::AgentBuilder::new().timeout(timeout).build()
}

fn post(agent: &ureq::Agent, url: &str, api_key: Option<&str>, body: Json) -> Result<Json, ProviderError> {
    NETWORK_CALLS.fetch_add(1, Ordering::SeqCst);
    let mut req = agent.post(url).set("Content-Type", "application/json");
    if let Some(key) = api_key {
        req = req.set("Authorization", &format!("Bearer {key}"));
    }
    match req.send_json(body) {
        Ok(resp) => resp.into_json::<Json>().map_err(|e| ProviderError::Http(format!("invalid JSON body: {e}"))),
        Err(ureq::Error::Status(code, resp)) => {
            let text = resp.into_string().unwrap_or_default();
            let head: String = text.chars().take(200).collect();
            if code == 429 || code >= 500 {
                Err(ProviderError::Unavailable(format!("HTTP {code}: {head}")))
            } else {
                Err(ProviderError::Http(format!("{code}: {head}")))
            }
        }
        Err(e) => Err(ProviderError::Unavailable(e.to_string())),
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpProvider {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        HttpProvider { base_url: base_url.into().trim_end_matches('/').to_string(), api_key, agent: agent(timeout) }
    }
}

impl ChatProvider for HttpProvider {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        });
        let url = format!("{}/chat/completions", self.base_url);
        let resp = post(&self.agent, &url, self.api_key.as_deref(), body)?;
        let text = resp
            .pointer("/choices/0/message/content")
            .and_then(Json::as_str)
            .ok_or_else(|| ProviderError::Http("response has no choices[0].message.content".into()))?
            .to_string();
        // Token accounting is provider-independent; reported usage is ignored
        // so costs match across backends.
        let usage = Usage { input_tokens: token_count(&request.prompt), output_tokens: token_count(&text) };
        Ok(ChatResponse { text, usage })
    }
}

/// OpenAI-compatible embeddings client.
pub struct HttpEmbedder {
    base_url: String,
    api_key: Option<String>,
    model: String,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        dim: usize,
        timeout: Duration,
    ) -> Self {
        HttpEmbedder {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            dim,
            agent: agent(timeout),
        }
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let url = format!("{}/embeddings", self.base_url);
        let resp = post(&self.agent, &url, self.api_key.as_deref(), json!({"model": self.model, "input": texts}))?;
        let data = resp
            .get("data")
            .and_then(Json::as_array)
            .ok_or_else(|| ProviderError::Http("embedding response has no data array".into()))?;
        let mut out = vec![Vec::new(); texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item.get("index").and_then(Json::as_u64).map(|i| i as usize).unwrap_or(pos);
            let mut v: Vec<f64> = item
                .get("embedding")
                .and_then(Json::as_array)
                .ok_or_else(|| ProviderError::Http("embedding item without vector".into()))?
                .iter()
                .map(|x| x.as_f64().unwrap_or(0.0))
                .collect();
            if v.len() != self.dim {
                return Err(ProviderError::Http(format!("expected {}-dim embedding, got {}", self.dim, v.len())));
            }
            normalize(&mut v);
            if idx < out.len() {
                out[idx] = v;
            }
        }
        if out.iter().any(Vec::is_empty) {
            return Err(ProviderError::Http("embedding response is missing vectors".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_endpoint_is_unavailable_and_counted() {
        let before = network_calls();
        let p = HttpProvider::new("http://127.0.0.1:9", None, Duration::from_millis(300));
        assert!(matches!(p.chat(&ChatRequest::new("m", "hi")), Err(ProviderError::Unavailable(_))));
        assert!(network_calls() > before);
    }
}
