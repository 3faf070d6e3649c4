use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError, Usage};

/// Prompt templates wrap the memory transcript in these marker lines.
pub const MEMORY_BEGIN: &str = "<<MEMORY>>";
pub const MEMORY_END: &str = "<</MEMORY>>";

fn sha_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Canonical prompt text for fixture keys: trailing whitespace removed from
/// every line and the memory transcript replaced by a digest of its
/// whitespace-normalized content.
pub fn normalize_prompt(prompt: &str) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut memory: Option<Vec<String>> = None;
    for line in prompt.lines() {
        let line = line.trim_end();
        match &mut memory {
            Some(buf) => {
                if line.trim() == MEMORY_END {
                    let digest = sha_hex(&buf.join("\n"));
                    out.push(format!("[memory digest {}]", &digest[..16]));
                    memory = None;
                } else {
                    let collapsed = line.split_whitespace().collect::<Vec<_>>().join(" ");
                    if !collapsed.is_empty() {
                        buf.push(collapsed);
                    }
                }
            }
            None if line.trim() == MEMORY_BEGIN => memory = Some(Vec::new()),
            None => out.push(line.to_string()),
        }
    }
    if let Some(buf) = memory {
        // unterminated section: keep content verbatim
        out.push(MEMORY_BEGIN.to_string());
        out.extend(buf);
    }
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    out.join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub key: String,
    pub model: String,
    /// Normalized prompt, stored for review and `fixtures verify`.
    pub prompt: String,
    pub response: String,
    pub usage: Usage,
}

impl Fixture {
    pub fn key_for(model: &str, prompt: &str) -> String {
        sha_hex(&format!("{model}\n{}", normalize_prompt(prompt)))
    }
}

/// One JSON document per fixture key under a directory. Reads are cached and
/// concurrent; writes are serialized.
pub struct FixtureStore {
    dir: PathBuf,
    cache: RwLock<HashMap<String, Option<Fixture>>>,
    write_lock: Mutex<()>,
}

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ProviderError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| ProviderError::Store(format!("{}: {e}", dir.display())))?;
        Ok(FixtureStore { dir, cache: RwLock::new(HashMap::new()), write_lock: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<Fixture>, ProviderError> {
        if let Some(hit) = self.cache.read().expect("fixture cache poisoned").get(key) {
            return Ok(hit.clone());
        }
        let path = self.path(key);
        let found = match fs::read_to_string(&path) {
            Ok(text) => Some(
                serde_json::from_str::<Fixture>(&text)
                    .map_err(|e| ProviderError::Store(format!("{}: {e}", path.display())))?,
            ),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(ProviderError::Store(format!("{}: {e}", path.display()))),
        };
        self.cache.write().expect("fixture cache poisoned").insert(key.to_string(), found.clone());
        Ok(found)
    }

    pub fn put(&self, fixture: &Fixture) -> Result<(), ProviderError> {
        let _guard = self.write_lock.lock().expect("fixture writer poisoned");
        let path = self.path(&fixture.key);
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(fixture).expect("fixture serializes") + "\n";
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| ProviderError::Store(format!("{}: {e}", path.display())))?;
        self.cache.write().expect("fixture cache poisoned").insert(fixture.key.clone(), Some(fixture.clone()));
        Ok(())
    }

    /// All fixture documents, sorted by key.
    pub fn all(&self) -> Result<Vec<Fixture>, ProviderError> {
        let mut out = Vec::new();
        let entries =
            fs::read_dir(&self.dir).map_err(|e| ProviderError::Store(format!("{}: {e}", self.dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| ProviderError::Store(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text =
                fs::read_to_string(&path).map_err(|e| ProviderError::Store(format!("{}: {e}", path.display())))?;
            out.push(
                serde_json::from_str::<Fixture>(&text)
                    .map_err(|e| ProviderError::Store(format!("{}: {e}", path.display())))?,
            );
        }
        out.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(out)
    }

    /// Fixtures whose stored key does not match their model and prompt.
    pub fn verify(&self) -> Result<Vec<String>, ProviderError> {
        Ok(self.all()?.into_iter().filter(|f| Fixture::key_for(&f.model, &f.prompt) != f.key).map(|f| f.key).collect())
    }
}

/// Pure lookup against recorded fixtures. In strict mode an unknown request
/// is an error; otherwise it is forwarded to the fallback provider.
pub struct ReplayProvider {
    store: Arc<FixtureStore>,
    strict: bool,
    fallback: Option<Arc<dyn ChatProvider>>,
}

impl ReplayProvider {
    pub fn strict(store: Arc<FixtureStore>) -> Self {
        ReplayProvider { store, strict: true, fallback: None }
    }

    pub fn with_fallback(store: Arc<FixtureStore>, fallback: Arc<dyn ChatProvider>) -> Self {
        ReplayProvider { store, strict: false, fallback: Some(fallback) }
    }
}

impl ChatProvider for ReplayProvider {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let key = Fixture::key_for(&request.model, &request.prompt);
        if let Some(f) = self.store.get(&key)? {
            return Ok(ChatResponse { text: f.response, usage: f.usage });
        }
        match (&self.fallback, self.strict) {
            (Some(p), false) => p.chat(request),
            _ => Err(ProviderError::UnknownFixture { key, model: request.model.clone() }),
        }
    }
}

/// Forwards to an upstream provider and persists every exchange.
pub struct RecordingProvider {
    store: Arc<FixtureStore>,
    inner: Arc<dyn ChatProvider>,
}

impl RecordingProvider {
    pub fn new(store: Arc<FixtureStore>, inner: Arc<dyn ChatProvider>) -> Self {
        RecordingProvider { store, inner }
    }
}

impl ChatProvider for RecordingProvider {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let response = self.inner.chat(request)?;
        self.store.put(&Fixture {
            key: Fixture::key_for(&request.model, &request.prompt),
            model: request.model.clone(),
            prompt: normalize_prompt(&request.prompt),
            response: response.text.clone(),
            usage: response.usage,
        })?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::MockProvider;

    #[test]
    fn normalization_strips_trailing_space_and_digests_memory() {
        let a = format!("Task: x  \n{MEMORY_BEGIN}\n- error  one\n\n{MEMORY_END}\nEnd\n\n");
        let b = format!("Task: x\n{MEMORY_BEGIN}\n   - error one   \n{MEMORY_END}\nEnd");
        let c = format!("Task: x\n{MEMORY_BEGIN}\n- error two\n{MEMORY_END}\nEnd");
        assert_eq!(normalize_prompt(&a), normalize_prompt(&b));
        assert_ne!(normalize_prompt(&a), normalize_prompt(&c));
        assert!(normalize_prompt(&a).starts_with("Task: x\n[memory digest "));
    }

    #[test]
    fn record_then_strict_replay() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FixtureStore::open(dir.path()).unwrap());
        let upstream = Arc::new(MockProvider::echo_first_line());
        let rec = RecordingProvider::new(store.clone(), upstream.clone());
        let req = ChatRequest::new("m", "hello world\nmore");
        let recorded = rec.chat(&req).unwrap();

        let fresh = Arc::new(FixtureStore::open(dir.path()).unwrap());
        let replay = ReplayProvider::strict(fresh.clone());
        assert_eq!(replay.chat(&req).unwrap(), recorded);
        assert!(matches!(
            replay.chat(&ChatRequest::new("m", "novel prompt")),
            Err(ProviderError::UnknownFixture { .. })
        ));
        assert_eq!(upstream.calls(), 1);
        assert_eq!(fresh.verify().unwrap(), Vec::<String>::new());
        assert_eq!(fresh.all().unwrap().len(), 1);
    }

    #[test]
    fn lenient_replay_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FixtureStore::open(dir.path()).unwrap());
        let replay = ReplayProvider::with_fallback(store, Arc::new(MockProvider::echo_first_line()));
        assert_eq!(replay.chat(&ChatRequest::new("m", "abc")).unwrap().text, "abc");
    }
}
