//! Minimal chat-completion client abstraction with record/replay fixtures.
//!
//! Fixtures are JSON files keyed by the SHA-256 of `(system, prompt)`, so a
//! replayed run needs no network access and returns identical text for
//! identical prompts regardless of request order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::seeds::sha256_hex;

pub const ENV_ENDPOINT: &str = "SCREENKIT_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "SCREENKIT_LLM_API_KEY";
pub const ENV_MODEL: &str = "SCREENKIT_LLM_MODEL";

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no fixture recorded for prompt hash {0}")]
    MissingFixture(String),
    #[error("fixture store: {0}")]
    Fixture(String),
    #[error("client configuration: {0}")]
    Config(String),
}

pub trait LlmClient: Send + Sync {
    fn send(&self, prompt: &str, system: &str) -> Result<String, LlmError>;
    fn model(&self) -> &str;
}

impl<C: LlmClient + ?Sized> LlmClient for &C {
    fn send(&self, prompt: &str, system: &str) -> Result<String, LlmError> {
        (**self).send(prompt, system)
    }
    fn model(&self) -> &str {
        (**self).model()
    }
}

impl<C: LlmClient + ?Sized> LlmClient for Box<C> {
    fn send(&self, prompt: &str, system: &str) -> Result<String, LlmError> {
        (**self).send(prompt, system)
    }
    fn model(&self) -> &str {
        (**self).model()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientMode {
    Live,
    Replay,
    Record,
}

impl FromStr for ClientMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(ClientMode::Live),
            "replay" => Ok(ClientMode::Replay),
            "record" => Ok(ClientMode::Record),
            other => Err(format!("unknown client mode {other:?}")),
        }
    }
}

pub fn prompt_hash(system: &str, prompt: &str) -> String {
    let mut bytes = Vec::with_capacity(system.len() + prompt.len() + 1);
    bytes.extend_from_slice(system.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(prompt.as_bytes());
    sha256_hex(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub prompt_hash: String,
    pub model: String,
    pub system: String,
    pub prompt: String,
    pub response: String,
}

impl Fixture {
    pub fn new(model: &str, system: &str, prompt: &str, response: &str) -> Self {
        Fixture {
            prompt_hash: prompt_hash(system, prompt),
            model: model.to_string(),
            system: system.to_string(),
            prompt: prompt.to_string(),
            response: response.to_string(),
        }
    }

    fn file_name(&self) -> String {
        format!("{}.json", self.prompt_hash)
    }
}

/// Serves recorded responses only.
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    model: String,
    fixtures: BTreeMap<String, Fixture>,
}

impl ReplayClient {
    pub fn new(model: impl Into<String>, fixtures: impl IntoIterator<Item = Fixture>) -> Self {
        ReplayClient {
            model: model.into(),
            fixtures: fixtures.into_iter().map(|f| (f.prompt_hash.clone(), f)).collect(),
        }
    }

    /// Loads every `*.json` fixture in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, LlmError> {
        let mut fixtures = Vec::new();
        let entries = fs::read_dir(dir).map_err(|e| LlmError::Fixture(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let raw = fs::read_to_string(&p).map_err(|e| LlmError::Fixture(format!("{}: {e}", p.display())))?;
            let f: Fixture =
                serde_json::from_str(&raw).map_err(|e| LlmError::Fixture(format!("{}: {e}", p.display())))?;
            fixtures.push(f);
        }
        let model = fixtures.first().map(|f| f.model.clone()).unwrap_or_else(|| "replay".to_string());
        Ok(ReplayClient::new(model, fixtures))
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl LlmClient for ReplayClient {
    fn send(&self, prompt: &str, system: &str) -> Result<String, LlmError> {
        let h = prompt_hash(system, prompt);
        self.fixtures.get(&h).map(|f| f.response.clone()).ok_or(LlmError::MissingFixture(h))
    }

    fn model(&self) -> &str {
        &self.model
    }
}

/// Forwards to another client and stores every exchange as a fixture file.
pub struct RecordingClient<C> {
    inner: C,
    dir: PathBuf,
}

impl<C: LlmClient> RecordingClient<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| LlmError::Fixture(format!("{}: {e}", dir.display())))?;
        Ok(RecordingClient { inner, dir })
    }
}

impl<C: LlmClient> LlmClient for RecordingClient<C> {
    fn send(&self, prompt: &str, system: &str) -> Result<String, LlmError> {
        let response = self.inner.send(prompt, system)?;
        let f = Fixture::new(self.inner.model(), system, prompt, &response);
        let body = serde_json::to_string_pretty(&f).map_err(|e| LlmError::Fixture(e.to_string()))?;
        fs::write(self.dir.join(f.file_name()), body + "\n").map_err(|e| LlmError::Fixture(e.to_string()))?;
        Ok(response)
    }

    fn model(&self) -> &str {
        self.inner.model()
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpClient {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    http: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpClient { endpoint: endpoint.into(), api_key, model: model.into(), http })
    }

    /// Reads endpoint, credential and model from the environment.
    pub fn from_env() -> Result<Self, LlmError> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| LlmError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).map_err(|_| LlmError::Config(format!("{ENV_MODEL} is not set")))?;
        HttpClient::new(endpoint, std::env::var(ENV_API_KEY).ok(), model)
    }
}

impl LlmClient for HttpClient {
    fn send(&self, prompt: &str, system: &str) -> Result<String, LlmError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": prompt},
            ],
        });
        let mut req = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let value: serde_json::Value = resp.json().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Transport(format!("HTTP {status}: {value}")));
        }
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Transport(format!("response without message content: {value}")))
    }

    fn model(&self) -> &str {
        &self.model
    }
}

/// Builds a client for the requested mode. Replay and record need a fixture directory.
pub fn client_for_mode(mode: ClientMode, fixtures: Option<&Path>) -> Result<Box<dyn LlmClient>, LlmError> {
    let need_dir = || fixtures.ok_or_else(|| LlmError::Config("a fixture directory is required".into()));
    Ok(match mode {
        ClientMode::Replay => Box::new(ReplayClient::load_dir(need_dir()?)?),
        ClientMode::Record => Box::new(RecordingClient::new(HttpClient::from_env()?, need_dir()?)?),
        ClientMode::Live => Box::new(HttpClient::from_env()?),
    })
}
