//! Provider-agnostic chat-completion gateway with tool calling, disk
//! caching, and retry handling. The agent, the classifiers, and the judge
//! all go through this one interface, so a scripted provider makes the
//! entire pipeline deterministic in tests.
//!
//! ```
//! use behavior_gap::gateway::{
//!     ChatRequest, ChatResponse, Gateway, Message, ResponseFormat,
//!     RetryPolicy, ScriptedExchange, ScriptedProvider,
//! };
//!
//! let script = vec![ScriptedExchange::substring(
//!     "hello",
//!     ChatResponse::text("hi there"),
//! )];
//! let gateway = Gateway::new(Box::new(ScriptedProvider::new(script)), None);
//! let request = ChatRequest {
//!     model_id: "scripted".into(),
//!     system_prompt: "you are a greeter".into(),
//!     messages: vec![Message::user("hello")],
//!     tool_schemas: vec![],
//!     temperature: 0.0,
//!     response_format: ResponseFormat::FreeText,
//! };
//! let reply = gateway
//!     .complete_chat(&request, &RetryPolicy::default())
//!     .unwrap();
//! assert_eq!(reply.content.as_deref(), Some("hi there"));
//! ```

mod cache;
mod http;
mod scripted;

pub use cache::{CacheEntry, DiskCache};
pub use http::HttpProvider;
pub use scripted::{ScriptMatch, ScriptedExchange, ScriptedProvider};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    /// JSON object of arguments. serde_json maps are sorted, so
    /// serialization is canonical regardless of construction order.
    pub arguments: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
            tool_call_id: None,
            tool_calls: Vec::new(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
            tool_call_id: None,
            tool_calls: Vec::new(),
        }
    }

    pub fn tool(tool_call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Message {
            role: Role::Tool,
            content: content.into(),
            tool_call_id: Some(tool_call_id.into()),
            tool_calls: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    FreeText,
    Structured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub system_prompt: String,
    pub messages: Vec<Message>,
    pub tool_schemas: Vec<ToolSchema>,
    pub temperature: f64,
    pub response_format: ResponseFormat,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        // A tool message must answer a tool call issued by a preceding
        // assistant message.
        let mut open_calls: Vec<String> = Vec::new();
        for msg in &self.messages {
            match msg.role {
                Role::Assistant => {
                    open_calls.extend(msg.tool_calls.iter().map(|c| c.id.clone()));
                }
                Role::Tool => {
                    let id = msg.tool_call_id.as_deref().unwrap_or("");
                    if !open_calls.iter().any(|c| c == id) {
                        return Err(GatewayError::InvalidRequest(format!(
                            "tool message with call id `{id}` has no preceding assistant tool call"
                        )));
                    }
                }
                Role::User => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provider_meta: BTreeMap<String, String>,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        ChatResponse {
            content: Some(content.into()),
            tool_calls: Vec::new(),
            usage: Usage::default(),
            provider_meta: BTreeMap::new(),
        }
    }

    fn validate_against(&self, request: &ChatRequest) -> Result<(), GatewayError> {
        let has_content = self.content.as_deref().is_some_and(|c| !c.is_empty());
        if !has_content && self.tool_calls.is_empty() {
            return Err(GatewayError::Provider(
                "provider returned neither content nor tool calls".to_string(),
            ));
        }
        for call in &self.tool_calls {
            if !request.tool_schemas.iter().any(|s| s.name == call.name) {
                return Err(GatewayError::Provider(format!(
                    "provider called tool `{}` which is not in the request schema",
                    call.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempts: {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("structured output could not be decoded: {detail}; raw: {raw}")]
    Format { detail: String, raw: String },
    #[error("no scripted exchange matches the request (system prompt head: {0:?})")]
    Unscripted(String),
    #[error("cache error at {path}: {source}")]
    Cache {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
    fn id(&self) -> String;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_parallel: usize,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_ms: 250,
            max_parallel: 4,
        }
    }
}

/// Stable content hash over every request field that affects the response.
/// Map entries serialize sorted, so semantically identical requests hash
/// identically regardless of construction order.
pub fn cache_key(request: &ChatRequest) -> String {
    let canonical = serde_json::to_vec(request).expect("serializable request");
    let mut hasher = Sha256::new();
    hasher.update(&canonical);
    hex_encode(&hasher.finalize())
}

pub(crate) fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// Counting semaphore bounding in-flight provider calls.
struct Semaphore {
    permits: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cond.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.cond.notify_one();
    }
}

/// The chat gateway: one provider, optional write-once disk cache, retry
/// with exponential backoff, and bounded parallelism.
pub struct Gateway {
    provider: Box<dyn Provider>,
    cache: Option<DiskCache>,
    semaphore: Semaphore,
    network_calls: AtomicU64,
}

impl Gateway {
    pub fn new(provider: Box<dyn Provider>, cache: Option<DiskCache>) -> Self {
        Gateway {
            provider,
            cache,
            semaphore: Semaphore::new(RetryPolicy::default().max_parallel),
            network_calls: AtomicU64::new(0),
        }
    }

    pub fn with_max_parallel(mut self, max_parallel: usize) -> Self {
        self.semaphore = Semaphore::new(max_parallel);
        self
    }

    pub fn provider_id(&self) -> String {
        self.provider.id()
    }

    /// Number of provider calls actually issued (cache hits excluded).
    pub fn network_call_count(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn complete_chat(
        &self,
        request: &ChatRequest,
        policy: &RetryPolicy,
    ) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let key = cache_key(request);
        if let Some(cache) = &self.cache {
            if let Some(cached) = cache.get(&key)? {
                return Ok(cached);
            }
        }

        self.semaphore.acquire();
        let result = self.complete_with_retries(request, policy);
        self.semaphore.release();
        let response = result?;

        response.validate_against(request)?;
        if let Some(cache) = &self.cache {
            cache.put(&key, request, &response)?;
        }
        Ok(response)
    }

    fn complete_with_retries(
        &self,
        request: &ChatRequest,
        policy: &RetryPolicy,
    ) -> Result<ChatResponse, GatewayError> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            match self.provider.complete(request) {
                Ok(response) => return Ok(response),
                Err(GatewayError::Transient(detail)) => {
                    if attempts > policy.max_retries {
                        return Err(GatewayError::Transport { attempts, detail });
                    }
                    let delay = policy.backoff_ms.saturating_mul(1 << (attempts - 1).min(8));
                    std::thread::sleep(std::time::Duration::from_millis(delay));
                }
                Err(other) => return Err(other),
            }
        }
    }
}
