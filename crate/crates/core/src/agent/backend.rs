use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnRole {
    User,
    Assistant,
}

impl TurnRole {
    pub fn name(self) -> &'static str {
        match self {
            TurnRole::User => "user",
            TurnRole::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: TurnRole,
    pub content: String,
}

impl Turn {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: TurnRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: TurnRole::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system: String,
    pub turns: Vec<Turn>,
    /// Rendered reasoning graph, empty when there is none yet.
    pub dot_context: String,
}

impl CompletionRequest {
    pub fn last_user(&self) -> &str {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == TurnRole::User)
            .map_or("", |t| t.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendError {
    #[error("no fixture entry matches prompt starting {excerpt:?}")]
    Unmatched { excerpt: String },
    #[error("backend unreachable: {message}")]
    Transport { message: String },
    #[error("backend timed out")]
    Timeout,
    #[error("malformed backend response: {message}")]
    BadResponse { message: String },
    #[error("invalid backend configuration: {message}")]
    Config { message: String },
}

/// A language-model completion endpoint.
pub trait Backend: Send + Sync {
    fn name(&self) -> String;
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    /// Substring the last user turn must contain.
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub substring: Option<String>,
    /// Regular expression the last user turn must match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(default = "default_fixture_name")]
    pub name: String,
    #[serde(default = "default_strict")]
    pub strict: bool,
    pub entries: Vec<FixtureEntry>,
}

fn default_fixture_name() -> String {
    "scripted".into()
}

fn default_strict() -> bool {
    true
}

enum Matcher {
    Substring(String),
    Pattern(Regex),
}

/// Canned responses keyed by prompt content; first matching entry wins.
pub struct ScriptedBackend {
    name: String,
    strict: bool,
    entries: Vec<(Matcher, String)>,
    received: Mutex<Vec<CompletionRequest>>,
}

impl std::fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedBackend")
            .field("name", &self.name)
            .field("strict", &self.strict)
            .field("entries", &self.entries.len())
            .finish()
    }
}

impl ScriptedBackend {
    pub fn new(fixture: Fixture) -> Result<Self, BackendError> {
        let mut entries = Vec::with_capacity(fixture.entries.len());
        for (i, entry) in fixture.entries.into_iter().enumerate() {
            let matcher = match (entry.substring, entry.pattern) {
                (Some(s), None) => Matcher::Substring(s),
                (None, Some(p)) => Matcher::Pattern(Regex::new(&p).map_err(|e| BackendError::Config {
                    message: format!("entry {i}: {e}"),
                })?),
                _ => {
                    return Err(BackendError::Config {
                        message: format!("entry {i} needs exactly one of match or pattern"),
                    })
                }
            };
            entries.push((matcher, entry.response));
        }
        Ok(Self {
            name: fixture.name,
            strict: fixture.strict,
            entries,
            received: Mutex::new(Vec::new()),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let fixture: Fixture = serde_json::from_str(text).map_err(|e| BackendError::Config {
            message: e.to_string(),
        })?;
        Self::new(fixture)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Config {
            message: format!("{}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    /// Every request seen so far, in order.
    pub fn received(&self) -> Vec<CompletionRequest> {
        self.received.lock().expect("prompt log").clone()
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.received.lock().expect("prompt log").push(request.clone());
        let prompt = request.last_user();
        let hit = self.entries.iter().find(|(m, _)| match m {
            Matcher::Substring(s) => prompt.contains(s.as_str()),
            Matcher::Pattern(re) => re.is_match(prompt),
        });
        match hit {
            Some((_, response)) => Ok(response.clone()),
            None if self.strict => Err(BackendError::Unmatched {
                excerpt: prompt.chars().take(80).collect(),
            }),
            None => Ok(String::new()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full URL of the chat-completion endpoint.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_timeout_s() -> u64 {
    60
}

/// Chat-completion over HTTP: POST `{model, messages}`, read
/// `choices[0].message.content`.
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn messages(request: &CompletionRequest) -> Vec<Value> {
        let mut system = request.system.clone();
        if !request.dot_context.is_empty() {
            system.push_str("\n\nReasoning graph so far (newest first):\n");
            system.push_str(&request.dot_context);
        }
        let mut messages = vec![json!({"role": "system", "content": system})];
        messages.extend(
            request
                .turns
                .iter()
                .map(|t| json!({"role": t.role.name(), "content": t.content})),
        );
        messages
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": Self::messages(request),
        });
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(token) = &self.config.token {
            call = call.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = call.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout,
            other => BackendError::Transport {
                message: other.to_string(),
            },
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(BackendError::Transport {
                message: format!("HTTP {status}"),
            });
        }
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::BadResponse {
                message: e.to_string(),
            })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::BadResponse {
                message: "missing choices[0].message.content".into(),
            })
    }
}
