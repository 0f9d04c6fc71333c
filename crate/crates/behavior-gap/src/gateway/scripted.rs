//! Deterministic scripted provider. Each entry matches a predicate over
//! the request (substring or hash of system prompt + last message) and
//! replays a canned response. An unmatched request is always an error,
//! never a silent default, so test scripts fail loudly when the pipeline
//! drifts.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{hex_encode, ChatRequest, ChatResponse, GatewayError, Provider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ScriptMatch {
    /// Substring of `system_prompt + "\n" + last message content`.
    Substring(String),
    /// Hex SHA-256 of the same probe text.
    Hash(String),
    /// Matches every request. Useful as a script tail.
    Any,
    /// Conjunction of matchers, e.g. a system-prompt marker plus a
    /// last-message substring.
    AllOf(Vec<ScriptMatch>),
}

impl ScriptMatch {
    fn matches(&self, probe: &str, hash: &str) -> bool {
        match self {
            ScriptMatch::Substring(needle) => probe.contains(needle.as_str()),
            ScriptMatch::Hash(h) => h == hash,
            ScriptMatch::Any => true,
            ScriptMatch::AllOf(parts) => parts.iter().all(|p| p.matches(probe, hash)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedExchange {
    #[serde(rename = "match")]
    pub matcher: ScriptMatch,
    pub response: ChatResponse,
    /// When true the entry is consumed by its first match; otherwise it can
    /// answer any number of requests.
    #[serde(default)]
    pub once: bool,
}

impl ScriptedExchange {
    pub fn substring(needle: impl Into<String>, response: ChatResponse) -> Self {
        ScriptedExchange {
            matcher: ScriptMatch::Substring(needle.into()),
            response,
            once: false,
        }
    }

    pub fn any(response: ChatResponse) -> Self {
        ScriptedExchange {
            matcher: ScriptMatch::Any,
            response,
            once: false,
        }
    }

    pub fn once(mut self) -> Self {
        self.once = true;
        self
    }
}

fn probe_text(request: &ChatRequest) -> String {
    let last = request
        .messages
        .last()
        .map(|m| m.content.as_str())
        .unwrap_or("");
    format!("{}\n{}", request.system_prompt, last)
}

pub fn probe_hash(request: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(probe_text(request).as_bytes());
    hex_encode(&hasher.finalize())
}

pub struct ScriptedProvider {
    entries: Mutex<Vec<ScriptedExchange>>,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<ScriptedExchange>) -> Self {
        ScriptedProvider {
            entries: Mutex::new(entries),
        }
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        Ok(ScriptedProvider::new(serde_json::from_str(json)?))
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let probe = probe_text(request);
        let hash = probe_hash(request);
        let mut entries = self.entries.lock().unwrap();
        let position = entries.iter().position(|e| e.matcher.matches(&probe, &hash));
        match position {
            Some(i) => {
                let response = entries[i].response.clone();
                if entries[i].once {
                    entries.remove(i);
                }
                Ok(response)
            }
            None => Err(GatewayError::Unscripted(
                probe.chars().take(120).collect::<String>(),
            )),
        }
    }

    fn id(&self) -> String {
        "scripted".to_string()
    }
}
