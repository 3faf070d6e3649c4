use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError};

/// Per-row prompts end with this marker followed by the row's values; row-level
/// responders only look at the text after the last marker.
pub const ROW_MARKER: &str = "\n---\n";

/// Deterministic response rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Responder {
    Fixed {
        text: String,
    },
    /// First line of the prompt.
    EchoFirstLine,
    /// `yes` when the pattern matches the row section, else `no`.
    YesIf {
        pattern: String,
    },
    /// First capture group of the pattern over the row section; empty when absent.
    Extract {
        pattern: String,
    },
}

/// A script rule: fires when the model matches (if given), every `contains`
/// substring occurs in the prompt, and the optional regex matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
    pub respond: Responder,
}

impl MockRule {
    pub fn when(contains: &[&str], respond: Responder) -> Self {
        MockRule { model: None, contains: contains.iter().map(|s| s.to_string()).collect(), regex: None, respond }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

type ResponseFn = Arc<dyn Fn(&ChatRequest) -> Option<String> + Send + Sync>;

enum Action {
    Script(CompiledResponder),
    Func(ResponseFn),
}

enum CompiledResponder {
    Fixed(String),
    EchoFirstLine,
    YesIf(Regex),
    Extract(Regex),
}

struct Entry {
    model: Option<String>,
    contains: Vec<String>,
    regex: Option<Regex>,
    action: Action,
}

/// Rule-driven mock chat model. Rules are tried in order; first match wins.
/// Usage follows the `ceil(chars / 4)` rule exactly.
#[derive(Default)]
pub struct MockProvider {
    entries: Vec<Entry>,
    calls: AtomicU64,
}

fn row_section(prompt: &str) -> &str {
    match prompt.rfind(ROW_MARKER) {
        Some(i) => &prompt[i + ROW_MARKER.len()..],
        None => prompt,
    }
}

fn compile(pattern: &str) -> Result<Regex, ProviderError> {
    Regex::new(pattern).map_err(|e| ProviderError::InvalidRequest(format!("bad mock pattern {pattern:?}: {e}")))
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mock that answers every prompt with its first line.
    pub fn echo_first_line() -> Self {
        MockProvider::new().rule(MockRule::when(&[], Responder::EchoFirstLine)).expect("static rule")
    }

    pub fn from_rules(rules: impl IntoIterator<Item = MockRule>) -> Result<Self, ProviderError> {
        rules.into_iter().try_fold(MockProvider::new(), MockProvider::rule)
    }

    pub fn from_script_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Store(format!("cannot read mock script {}: {e}", path.display())))?;
        let script: MockScript = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Store(format!("invalid mock script {}: {e}", path.display())))?;
        MockProvider::from_rules(script.rules)
    }

    pub fn rule(mut self, rule: MockRule) -> Result<Self, ProviderError> {
        let action = Action::Script(match rule.respond {
            Responder::Fixed { text } => CompiledResponder::Fixed(text),
            Responder::EchoFirstLine => CompiledResponder::EchoFirstLine,
            Responder::YesIf { pattern } => CompiledResponder::YesIf(compile(&pattern)?),
            Responder::Extract { pattern } => CompiledResponder::Extract(compile(&pattern)?),
        });
        self.entries.push(Entry {
            model: rule.model,
            contains: rule.contains,
            regex: rule.regex.as_deref().map(compile).transpose()?,
            action,
        });
        Ok(self)
    }

    /// Adds a closure rule; returning `None` falls through to later rules.
    pub fn with_fn(mut self, f: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        self.entries.push(Entry { model: None, contains: vec![], regex: None, action: Action::Func(Arc::new(f)) });
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn respond(&self, request: &ChatRequest) -> Option<String> {
        for e in &self.entries {
            if e.model.as_deref().is_some_and(|m| m != request.model) {
                continue;
            }
            if !e.contains.iter().all(|c| request.prompt.contains(c.as_str())) {
                continue;
            }
            if e.regex.as_ref().is_some_and(|r| !r.is_match(&request.prompt)) {
                continue;
            }
            let text = match &e.action {
                Action::Func(f) => match f(request) {
                    Some(t) => t,
                    None => continue,
                },
                Action::Script(CompiledResponder::Fixed(t)) => t.clone(),
                Action::Script(CompiledResponder::EchoFirstLine) => {
                    request.prompt.lines().next().unwrap_or_default().to_string()
                }
                Action::Script(CompiledResponder::YesIf(re)) => {
                    if re.is_match(row_section(&request.prompt)) { "yes" } else { "no" }.to_string()
                }
                Action::Script(CompiledResponder::Extract(re)) => re
                    .captures(row_section(&request.prompt))
                    .and_then(|c| c.get(1))
                    .map(|m| m.as_str().to_string())
                    .unwrap_or_default(),
            };
            return Some(text);
        }
        None
    }
}

impl ChatProvider for MockProvider {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        if request.prompt.is_empty() {
            return Err(ProviderError::InvalidRequest("empty prompt".into()));
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = self.respond(request).ok_or_else(|| {
            let head: String = request.prompt.chars().take(80).collect();
            ProviderError::Unavailable(format!("no mock rule matches prompt starting {head:?}"))
        })?;
        Ok(ChatResponse::counted(&request.prompt, text))
    }
}

/// A provider that is always down.
#[derive(Debug, Default)]
pub struct UnavailableProvider {
    calls: AtomicU64,
}

impl UnavailableProvider {
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for UnavailableProvider {
    fn chat(&self, _request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(ProviderError::Unavailable("provider is down".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::token_count;

    #[test]
    fn echo_first_line() {
        let m = MockProvider::echo_first_line();
        let r = m.chat(&ChatRequest::new("m", "first line\nsecond")).unwrap();
        assert_eq!(r.text, "first line");
        assert_eq!(r.usage.input_tokens, token_count("first line\nsecond"));
        assert_eq!(r.usage.output_tokens, 3);
    }

    #[test]
    fn row_rules_only_see_row_section() {
        let m = MockProvider::from_rules([
            MockRule::when(&["Keep rows"], Responder::YesIf { pattern: "(?i)positive".into() }),
            MockRule::when(&["Extract"], Responder::Extract { pattern: r"text: (\w+) is".into() }),
        ])
        .unwrap();
        let ask = |p: &str| m.chat(&ChatRequest::new("m", p)).unwrap().text;
        assert_eq!(ask("Keep rows that are positive\n---\ntext: a positive review"), "yes");
        assert_eq!(ask("Keep rows that are positive\n---\ntext: awful"), "no");
        assert_eq!(ask("Extract city\n---\ntext: Paris is lovely"), "Paris");
        assert_eq!(ask("Extract city\n---\ntext: nothing"), "");
    }

    #[test]
    fn model_filter_and_fallthrough() {
        let m = MockProvider::new()
            .rule(MockRule {
                model: Some("large".into()),
                ..MockRule::when(&[], Responder::Fixed { text: "L".into() })
            })
            .unwrap()
            .with_fn(|r| r.prompt.contains("skip").then(|| "F".to_string()))
            .rule(MockRule::when(&[], Responder::Fixed { text: "D".into() }))
            .unwrap();
        assert_eq!(m.chat(&ChatRequest::new("large", "x")).unwrap().text, "L");
        assert_eq!(m.chat(&ChatRequest::new("small", "skip")).unwrap().text, "F");
        assert_eq!(m.chat(&ChatRequest::new("small", "x")).unwrap().text, "D");
        assert_eq!(m.calls(), 3);
    }

    #[test]
    fn unmatched_prompt_is_provider_error() {
        let m = MockProvider::new();
        assert!(matches!(m.chat(&ChatRequest::new("m", "x")), Err(ProviderError::Unavailable(_))));
    }

    #[test]
    fn script_round_trips_through_json() {
        let script = MockScript { rules: vec![MockRule::when(&["a"], Responder::YesIf { pattern: "b".into() })] };
        let text = serde_json::to_string(&script).unwrap();
        assert_eq!(text, r#"{"rules":[{"contains":["a"],"respond":{"kind":"yes_if","pattern":"b"}}]}"#);
        let back: MockScript = serde_json::from_str(&text).unwrap();
        assert_eq!(back.rules, script.rules);
    }
}
