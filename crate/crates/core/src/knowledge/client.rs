use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HptError, Result};

/// Environment variable holding the live-endpoint credential.
pub const API_KEY_VAR: &str = "HPT_LLM_API_KEY";
/// Optional override of the chat-completions URL.
pub const ENDPOINT_VAR: &str = "HPT_LLM_ENDPOINT";
/// Optional override of the model identifier.
pub const MODEL_VAR: &str = "HPT_LLM_MODEL";

const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

/// Hex SHA-256 of the instruction text; the fixture and cache key.
pub fn instruction_hash(instruction: &str) -> String {
    hex::encode(Sha256::digest(instruction.as_bytes()))
}

/// Anything that turns an instruction into a response.
pub trait LlmBackend: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, instruction: &str) -> Result<String>;
}

/// Stored responses keyed by [`instruction_hash`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixtureStore {
    responses: BTreeMap<String, String>,
}

impl FixtureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn insert(&mut self, instruction: &str, response: &str) {
        self.responses
            .insert(instruction_hash(instruction), response.to_string());
    }

    pub fn get(&self, instruction: &str) -> Option<&str> {
        self.responses
            .get(&instruction_hash(instruction))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl LlmBackend for FixtureStore {
    fn model(&self) -> &str {
        "fixture"
    }

    fn complete(&self, instruction: &str) -> Result<String> {
        self.get(instruction).map(str::to_string).ok_or_else(|| {
            HptError::Backend(format!(
                "no fixture for instruction {} ({:.60}...)",
                instruction_hash(instruction),
                instruction
            ))
        })
    }
}

/// Wraps a backend and keeps every answer, so a run can be replayed from
/// fixtures later.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<FixtureStore>,
}

impl<B: LlmBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            recorded: Mutex::new(FixtureStore::new()),
        }
    }

    pub fn into_fixtures(self) -> FixtureStore {
        self.recorded
            .into_inner()
            .expect("fixture recorder poisoned")
    }
}

impl<B: LlmBackend> LlmBackend for RecordingBackend<B> {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, instruction: &str) -> Result<String> {
        let response = self.inner.complete(instruction)?;
        self.recorded
            .lock()
            .expect("fixture recorder poisoned")
            .insert(instruction, &response);
        Ok(response)
    }
}

/// OpenAI-compatible chat-completions endpoint.
pub struct LiveBackend {
    endpoint: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
    retries: usize,
}

impl LiveBackend {
    pub const RETRIES: usize = 3;
    pub const TIMEOUT: Duration = Duration::from_secs(60);

    /// Reads the credential (and optional endpoint/model overrides) from the
    /// environment.
    pub fn from_env() -> Result<Self> {
        let api_key = std::env::var(API_KEY_VAR)
            .map_err(|_| HptError::Backend(format!("{API_KEY_VAR} is not set")))?;
        let endpoint = std::env::var(ENDPOINT_VAR).unwrap_or_else(|_| DEFAULT_ENDPOINT.into());
        let model = std::env::var(MODEL_VAR).unwrap_or_else(|_| DEFAULT_MODEL.into());
        Ok(Self::new(endpoint, model, api_key))
    }

    pub fn new(endpoint: String, model: String, api_key: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Self::TIMEOUT))
            .build()
            .into();
        Self {
            endpoint,
            model,
            api_key,
            agent,
            retries: Self::RETRIES,
        }
    }

    fn request(&self, instruction: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": instruction}],
        });
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| HptError::Backend(e.to_string()))?;
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| HptError::Backend(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| HptError::ResponseParse {
                message: "no choices[0].message.content".into(),
                raw: value.to_string(),
            })
    }
}

impl LlmBackend for LiveBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, instruction: &str) -> Result<String> {
        let mut last = None;
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 << attempt));
            }
            match self.request(instruction) {
                Ok(text) => return Ok(text),
                Err(e @ HptError::Backend(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub hash: String,
    pub instruction: String,
    pub response: String,
}

/// Front end over a backend: caches by instruction hash, rejects empty
/// answers and logs every exchange that reached the backend.
pub struct LlmClient {
    backend: Box<dyn LlmBackend>,
    cache: Mutex<BTreeMap<String, String>>,
    log: Mutex<Vec<LogEntry>>,
}

impl LlmClient {
    pub fn new(backend: Box<dyn LlmBackend>) -> Self {
        Self {
            backend,
            cache: Mutex::new(BTreeMap::new()),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn fixtures(store: FixtureStore) -> Self {
        Self::new(Box::new(store))
    }

    pub fn model(&self) -> &str {
        self.backend.model()
    }

    pub fn complete(&self, instruction: &str) -> Result<String> {
        let hash = instruction_hash(instruction);
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(&hash) {
            return Ok(hit.clone());
        }
        let response = self.backend.complete(instruction)?;
        if response.trim().is_empty() {
            return Err(HptError::Backend(format!(
                "empty response for instruction {hash}"
            )));
        }
        self.log.lock().expect("log poisoned").push(LogEntry {
            hash: hash.clone(),
            instruction: instruction.to_string(),
            response: response.clone(),
        });
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(hash, response.clone());
        Ok(response)
    }

    /// Exchanges in arrival order; with concurrent workers the order varies.
    pub fn log(&self) -> Vec<LogEntry> {
        self.log.lock().expect("log poisoned").clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn hash_is_sha256_hex() {
        assert_eq!(
            instruction_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn fixture_returns_stored_string() {
        let mut store = FixtureStore::new();
        store.insert("q", "stored answer");
        let client = LlmClient::fixtures(store);
        assert_eq!(client.complete("q").unwrap(), "stored answer");
        assert!(matches!(
            client.complete("other"),
            Err(HptError::Backend(_))
        ));
    }

    #[test]
    fn empty_response_is_an_error() {
        let mut store = FixtureStore::new();
        store.insert("q", "  ");
        assert!(LlmClient::fixtures(store).complete("q").is_err());
    }

    struct Counting(AtomicUsize);

    impl LlmBackend for Counting {
        fn model(&self) -> &str {
            "counting"
        }
        fn complete(&self, instruction: &str) -> Result<String> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(instruction.to_uppercase())
        }
    }

    #[test]
    fn repeated_instruction_hits_cache() {
        let client = LlmClient::new(Box::new(Counting(AtomicUsize::new(0))));
        assert_eq!(client.complete("x").unwrap(), "X");
        assert_eq!(client.complete("x").unwrap(), "X");
        assert_eq!(client.log().len(), 1);
    }

    #[test]
    fn recorder_replays_as_fixtures() {
        let rec = RecordingBackend::new(Counting(AtomicUsize::new(0)));
        rec.complete("hello").unwrap();
        let store = rec.into_fixtures();
        assert_eq!(store.complete("hello").unwrap(), "HELLO");
        let back: FixtureStore = serde_json::from_str(&store.to_json().unwrap()).unwrap();
        assert_eq!(back, store);
    }
}
