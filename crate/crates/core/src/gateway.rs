//! Chat-completion client and deterministic stand-ins.
//!
//! Everything that talks to a model goes through [`ChatModel`]. The HTTP
//! implementation speaks the common `/chat/completions` wire format; the
//! scripted and fixture models replay prepared text so that every pipeline
//! can run offline.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Default cap on messages in one conversation.
pub const DEFAULT_MAX_MESSAGES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConversationError {
    #[error("expected a {expected} message, got {got}")]
    OutOfOrder { expected: Role, got: Role },
    #[error("conversation reached its cap of {0} messages")]
    CapExceeded(usize),
}

/// Role-tagged history: one system message, then strictly alternating
/// user/assistant messages starting with user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    messages: Vec<Message>,
    max_messages: usize,
}

impl Conversation {
    pub fn new(system: impl Into<String>) -> Self {
        Self::with_cap(system, DEFAULT_MAX_MESSAGES)
    }

    pub fn with_cap(system: impl Into<String>, max_messages: usize) -> Self {
        Conversation {
            messages: vec![Message::new(Role::System, system)],
            max_messages: max_messages.max(1),
        }
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn system(&self) -> &str {
        &self.messages[0].content
    }

    pub fn last(&self) -> &Message {
        self.messages.last().expect("system message is always present")
    }

    /// Role the next appended message must carry.
    pub fn expected_role(&self) -> Role {
        match self.last().role {
            Role::System | Role::Assistant => Role::User,
            Role::User => Role::Assistant,
        }
    }

    pub fn push(&mut self, message: Message) -> Result<(), ConversationError> {
        let expected = self.expected_role();
        if message.role != expected {
            return Err(ConversationError::OutOfOrder {
                expected,
                got: message.role,
            });
        }
        if self.messages.len() >= self.max_messages {
            return Err(ConversationError::CapExceeded(self.max_messages));
        }
        self.messages.push(message);
        Ok(())
    }

    pub fn push_user(&mut self, content: impl Into<String>) -> Result<(), ConversationError> {
        self.push(Message::new(Role::User, content))
    }

    pub fn push_assistant(&mut self, content: impl Into<String>) -> Result<(), ConversationError> {
        self.push(Message::new(Role::Assistant, content))
    }

    /// Drops the last message unless it is the system prompt.
    pub(crate) fn pop(&mut self) -> Option<Message> {
        if self.messages.len() > 1 {
            self.messages.pop()
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("request timed out after {0:?}")]
    TimedOut(Duration),
    #[error("unexpected response: {0}")]
    BadResponse(String),
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("script exhausted after {0} replies")]
    ScriptExhausted(usize),
    #[error("fixture error: {0}")]
    Fixture(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::Transport(_) | GatewayError::RateLimited(_) | GatewayError::TimedOut(_)
        )
    }
}

/// Anything that turns a conversation into the next assistant message.
pub trait ChatModel: Send + Sync {
    fn complete(&self, conv: &Conversation) -> Result<String, GatewayError>;
}

impl<M: ChatModel + ?Sized> ChatModel for std::sync::Arc<M> {
    fn complete(&self, conv: &Conversation) -> Result<String, GatewayError> {
        (**self).complete(conv)
    }
}

impl<M: ChatModel + ?Sized> ChatModel for Box<M> {
    fn complete(&self, conv: &Conversation) -> Result<String, GatewayError> {
        (**self).complete(conv)
    }
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    500
}

/// Connection settings for one chat-completions endpoint. The API key is
/// never stored; `api_key_env` names the environment variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// `None` leaves sampling temperature to the endpoint's default.
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl ModelEndpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        ModelEndpoint {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            temperature: None,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        reqwest::Url::parse(&self.base_url)
            .map_err(|e| GatewayError::InvalidEndpoint(format!("{}: {e}", self.base_url)))?;
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(GatewayError::InvalidEndpoint("timeout must be positive".into()));
        }
        if let Some(t) = self.temperature {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(GatewayError::InvalidEndpoint("temperature must be >= 0".into()));
            }
        }
        if self.model.trim().is_empty() {
            return Err(GatewayError::InvalidEndpoint("model name is empty".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1u64 << attempt.min(16)))
    }
}

/// Request body in the chat-completions wire format.
pub fn request_body(endpoint: &ModelEndpoint, conv: &Conversation) -> Value {
    let mut body = json!({
        "model": endpoint.model,
        "messages": conv.messages(),
    });
    if let Some(t) = endpoint.temperature {
        body["temperature"] = json!(t);
    }
    body
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn response_content(body: &Value) -> Result<String, GatewayError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::BadResponse("missing choices[0].message.content".into()))
}

pub struct HttpChatModel {
    endpoint: ModelEndpoint,
    client: reqwest::blocking::Client,
}

impl HttpChatModel {
    pub fn new(endpoint: ModelEndpoint) -> Result<Self, GatewayError> {
        endpoint.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(endpoint.timeout())
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(HttpChatModel { endpoint, client })
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    fn attempt(&self, body: &Value) -> Result<String, GatewayError> {
        let mut request = self.client.post(self.endpoint.completions_url()).json(body);
        if let Some(var) = &self.endpoint.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| GatewayError::Auth(format!("environment variable {var} is not set")))?;
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| self.classify(e))?;
        let status = response.status();
        let text = response.text().map_err(|e| self.classify(e))?;
        match status.as_u16() {
            200..=299 => {
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| GatewayError::BadResponse(e.to_string()))?;
                response_content(&value)
            }
            401 | 403 => Err(GatewayError::Auth(format!("status {status}"))),
            429 => Err(GatewayError::RateLimited(format!("status {status}"))),
            500..=599 => Err(GatewayError::Transport(format!("status {status}"))),
            _ => Err(GatewayError::BadResponse(format!("status {status}: {text}"))),
        }
    }

    fn classify(&self, err: reqwest::Error) -> GatewayError {
        if err.is_timeout() {
            GatewayError::TimedOut(self.endpoint.timeout())
        } else {
            GatewayError::Transport(err.to_string())
        }
    }
}

impl ChatModel for HttpChatModel {
    fn complete(&self, conv: &Conversation) -> Result<String, GatewayError> {
        let body = request_body(&self.endpoint, conv);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(err) if err.is_retryable() && attempt < self.endpoint.max_retries => {
                    tracing::warn!(%err, attempt, "chat completion failed, retrying");
                    thread::sleep(self.endpoint.backoff(attempt));
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

/// Replays a fixed list of replies in order, regardless of input.
#[derive(Debug, Default)]
pub struct ScriptedModel {
    replies: Mutex<VecDeque<String>>,
    served: AtomicUsize,
}

impl ScriptedModel {
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedModel {
            replies: Mutex::new(script.into_iter().map(Into::into).collect()),
            served: AtomicUsize::new(0),
        }
    }

    pub fn served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("script lock").len()
    }
}

impl ChatModel for ScriptedModel {
    fn complete(&self, _conv: &Conversation) -> Result<String, GatewayError> {
        let next = self.replies.lock().expect("script lock").pop_front();
        match next {
            Some(reply) => {
                self.served.fetch_add(1, Ordering::SeqCst);
                Ok(reply)
            }
            None => Err(GatewayError::ScriptExhausted(self.served())),
        }
    }
}

/// Responder backed by a closure.
pub struct FnModel<F>(pub F);

impl<F> ChatModel for FnModel<F>
where
    F: Fn(&Conversation) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, conv: &Conversation) -> Result<String, GatewayError> {
        (self.0)(conv)
    }
}

/// Lists the numbered reply files (`0.txt`, `001.txt`, ...) of a fixture
/// directory in numeric order.
pub fn fixture_files(dir: &Path) -> Result<Vec<PathBuf>, GatewayError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| GatewayError::Fixture(format!("{}: {e}", dir.display())))?;
    let mut numbered = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| GatewayError::Fixture(e.to_string()))?
            .path();
        if !path.is_file() {
            continue;
        }
        let index = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<u64>().ok());
        if let Some(index) = index {
            numbered.push((index, path));
        }
    }
    numbered.sort();
    Ok(numbered.into_iter().map(|(_, p)| p).collect())
}

/// Scripted model loaded from a directory of numbered reply files. Each
/// file's contents are returned verbatim.
pub struct FixtureModel {
    inner: ScriptedModel,
    dir: PathBuf,
}

impl FixtureModel {
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref();
        let replies = fixture_files(dir)?
            .into_iter()
            .map(|path| {
                fs::read_to_string(&path)
                    .map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FixtureModel {
            inner: ScriptedModel::new(replies),
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn remaining(&self) -> usize {
        self.inner.remaining()
    }
}

impl ChatModel for FixtureModel {
    fn complete(&self, conv: &Conversation) -> Result<String, GatewayError> {
        self.inner.complete(conv)
    }
}

/// One row of a model endpoint table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelSpec {
    Http(ModelEndpoint),
    Scripted { replies: Vec<String> },
    /// Directory of numbered reply files, read when the model is built.
    Fixture { dir: PathBuf },
}

impl ModelSpec {
    /// A fresh model instance; scripted and fixture models restart from
    /// their first reply.
    pub fn build(&self) -> Result<std::sync::Arc<dyn ChatModel>, GatewayError> {
        Ok(match self {
            ModelSpec::Http(endpoint) => std::sync::Arc::new(HttpChatModel::new(endpoint.clone())?),
            ModelSpec::Scripted { replies } => std::sync::Arc::new(ScriptedModel::new(replies.clone())),
            ModelSpec::Fixture { dir } => std::sync::Arc::new(FixtureModel::from_dir(dir)?),
        })
    }
}
