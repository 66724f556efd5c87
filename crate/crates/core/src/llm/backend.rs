//! LLM backends: a live OpenAI-compatible HTTP client, a deterministic
//! record/replay store, and a scripted queue for tests. Every backend is
//! safe to share across search workers and counts its own traffic.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum LlmError {
    #[error("no value bound for placeholder `{0}`")]
    MissingPlaceholderValue(String),
    #[error("llm unavailable: {0}")]
    Unavailable(String),
    #[error("no recorded response for prompt digest {0}")]
    ReplayMiss(String),
}

/// Cryptographic digest of an exact prompt string; the replay-store key.
pub fn prompt_digest(prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    hex::encode(hasher.finalize())
}

/// Monotonic counters kept by every backend.
#[derive(Debug, Default)]
pub struct CallCounters {
    calls: AtomicU64,
    failures: AtomicU64,
}

impl CallCounters {
    fn record(&self, ok: bool) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if !ok {
            self.failures.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn failures(&self) -> u64 {
        self.failures.load(Ordering::Relaxed)
    }
}

/// A completion service. Implementations must be deterministic given their
/// configuration, except for the live HTTP client.
pub trait LlmBackend: Send + Sync {
    /// Produces the completion for `prompt`. Callers treat any error as
    /// "fall back to the symbolic operator".
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;

    /// Traffic counters for this backend.
    fn counters(&self) -> &CallCounters;
}

/// Pops pre-queued responses in order; an exhausted queue reports the
/// backend as unavailable. Doubles as a never-called sentinel when
/// constructed empty.
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
    counters: CallCounters,
}

impl ScriptedBackend {
    pub fn new(responses: Vec<String>) -> ScriptedBackend {
        ScriptedBackend {
            queue: Mutex::new(responses.into()),
            counters: CallCounters::default(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("queue lock").len()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
        let popped = self.queue.lock().expect("queue lock").pop_front();
        match popped {
            Some(response) => {
                self.counters.record(true);
                Ok(response)
            }
            None => {
                self.counters.record(false);
                Err(LlmError::Unavailable("scripted queue exhausted".into()))
            }
        }
    }

    fn counters(&self) -> &CallCounters {
        &self.counters
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ReplayRecord {
    digest: String,
    response: String,
}

/// Prompt-digest → response map with line-delimited JSON persistence.
#[derive(Debug, Default, Clone)]
pub struct ReplayStore {
    records: BTreeMap<String, String>,
}

impl ReplayStore {
    pub fn new() -> ReplayStore {
        ReplayStore::default()
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<ReplayStore> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut records = BTreeMap::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string())
            })?;
            records.insert(record.digest, record.response);
        }
        Ok(ReplayStore { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        for (digest, response) in &self.records {
            let record = ReplayRecord {
                digest: digest.clone(),
                response: response.clone(),
            };
            writeln!(file, "{}", serde_json::to_string(&record).expect("record serializes"))?;
        }
        Ok(())
    }

    pub fn insert_for_prompt(&mut self, prompt: &str, response: impl Into<String>) {
        self.records.insert(prompt_digest(prompt), response.into());
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, response: impl Into<String>) {
        self.records.insert(digest.into(), response.into());
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Deterministic stand-in for a live model: answers from a recorded store,
/// keyed by prompt digest.
pub struct ReplayBackend {
    store: ReplayStore,
    counters: CallCounters,
}

impl ReplayBackend {
    pub fn new(store: ReplayStore) -> ReplayBackend {
        ReplayBackend {
            store,
            counters: CallCounters::default(),
        }
    }
}

impl LlmBackend for ReplayBackend {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let digest = prompt_digest(prompt);
        match self.store.records.get(&digest) {
            Some(response) => {
                self.counters.record(true);
                Ok(response.clone())
            }
            None => {
                self.counters.record(false);
                Err(LlmError::ReplayMiss(digest))
            }
        }
    }

    fn counters(&self) -> &CallCounters {
        &self.counters
    }
}

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpSettings {
    /// Full URL of the chat-completions endpoint, e.g.
    /// `http://localhost:8000/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. The key
    /// itself never appears in configuration or artifacts.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_inflight: usize,
}

impl Default for HttpSettings {
    fn default() -> Self {
        HttpSettings {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.7,
            max_tokens: 256,
            timeout_secs: 30,
            max_retries: 3,
            max_inflight: 8,
        }
    }
}

/// Counting semaphore bounding concurrent in-flight requests.
struct Gate {
    available: Mutex<usize>,
    signal: Condvar,
}

impl Gate {
    fn new(permits: usize) -> Gate {
        Gate {
            available: Mutex::new(permits.max(1)),
            signal: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut available = self.available.lock().expect("gate lock");
        while *available == 0 {
            available = self.signal.wait(available).expect("gate wait");
        }
        *available -= 1;
    }

    fn release(&self) {
        *self.available.lock().expect("gate lock") += 1;
        self.signal.notify_one();
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

/// Live client for any OpenAI-compatible `POST /v1/chat/completions`
/// endpoint. Sends a single user message per request, retries with
/// exponential backoff, and never exceeds `max_inflight` concurrent calls.
pub struct HttpBackend {
    settings: HttpSettings,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    gate: Gate,
    counters: CallCounters,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Result<HttpBackend, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build()
            .map_err(|e| LlmError::Unavailable(format!("client construction failed: {e}")))?;
        let api_key = std::env::var(&settings.api_key_env).ok();
        Ok(HttpBackend {
            gate: Gate::new(settings.max_inflight),
            settings,
            client,
            api_key,
            counters: CallCounters::default(),
        })
    }

    fn attempt(&self, prompt: &str) -> Result<String, String> {
        let body = ChatRequest {
            model: &self.settings.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
        };
        let mut request = self.client.post(&self.settings.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| e.to_string())?;
        if !response.status().is_success() {
            return Err(format!("status {}", response.status()));
        }
        let parsed: ChatResponse = response.json().map_err(|e| e.to_string())?;
        parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| "empty choices".into())
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self.gate.acquire();
        let result = (|| {
            let mut last_error = String::new();
            for attempt in 0..=self.settings.max_retries {
                if attempt > 0 {
                    let backoff = Duration::from_millis(200u64.saturating_mul(1 << (attempt - 1)));
                    std::thread::sleep(backoff);
                }
                match self.attempt(prompt) {
                    Ok(text) => return Ok(text),
                    Err(e) => last_error = e,
                }
            }
            Err(LlmError::Unavailable(last_error))
        })();
        self.gate.release();
        self.counters.record(result.is_ok());
        result
    }

    fn counters(&self) -> &CallCounters {
        &self.counters
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_backend_pops_in_order() {
        let backend = ScriptedBackend::new(vec!["x1 * x2".into(), "second".into()]);
        assert_eq!(backend.complete("p").unwrap(), "x1 * x2");
        assert_eq!(backend.complete("p").unwrap(), "second");
        assert!(matches!(
            backend.complete("p"),
            Err(LlmError::Unavailable(_))
        ));
        assert_eq!(backend.counters().calls(), 3);
        assert_eq!(backend.counters().failures(), 1);
    }

    #[test]
    fn replay_round_trip_and_miss() {
        let mut store = ReplayStore::new();
        store.insert_for_prompt("hello", "world");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        store.save(&path).unwrap();
        let loaded = ReplayStore::load(&path).unwrap();
        let backend = ReplayBackend::new(loaded);
        assert_eq!(backend.complete("hello").unwrap(), "world");
        match backend.complete("other") {
            Err(LlmError::ReplayMiss(digest)) => {
                assert_eq!(digest, prompt_digest("other"));
            }
            other => panic!("expected ReplayMiss, got {other:?}"),
        }
    }

    #[test]
    fn digests_are_stable_hex() {
        let d = prompt_digest("abc");
        assert_eq!(d.len(), 64);
        assert_eq!(d, prompt_digest("abc"));
        assert_ne!(d, prompt_digest("abd"));
    }
}
