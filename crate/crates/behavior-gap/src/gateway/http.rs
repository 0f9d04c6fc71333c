//! Remote provider speaking the common chat-completions wire shape:
//! `POST {base}/chat/completions` with `{model, messages, tools,
//! tool_choice, response_format}`. Base URL and API key come from
//! environment variables so secrets never enter configs or cache keys.

use serde_json::{json, Value};

use super::{
    ChatRequest, ChatResponse, GatewayError, Provider, ResponseFormat, Role, ToolCall, Usage,
};

pub const BASE_URL_ENV: &str = "BGAP_API_BASE";
pub const API_KEY_ENV: &str = "BGAP_API_KEY";

pub struct HttpProvider {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    /// When set, the request is forced to produce a plain-text final answer
    /// by omitting tools. Used by the agent's forced-final step.
    pub tool_choice_none_on_empty_schemas: bool,
}

impl HttpProvider {
    pub fn from_env() -> Result<Self, GatewayError> {
        let base_url = std::env::var(BASE_URL_ENV).map_err(|_| {
            GatewayError::InvalidRequest(format!("environment variable {BASE_URL_ENV} is not set"))
        })?;
        Ok(HttpProvider::new(base_url, std::env::var(API_KEY_ENV).ok()))
    }

    pub fn new(base_url: String, api_key: Option<String>) -> Self {
        HttpProvider {
            client: reqwest::blocking::Client::new(),
            base_url,
            api_key,
            tool_choice_none_on_empty_schemas: true,
        }
    }

    fn wire_body(&self, request: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        for m in &request.messages {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
                Role::Tool => "tool",
            };
            let mut msg = json!({"role": role, "content": m.content});
            if let Some(id) = &m.tool_call_id {
                msg["tool_call_id"] = json!(id);
            }
            if !m.tool_calls.is_empty() {
                msg["tool_calls"] = Value::Array(
                    m.tool_calls
                        .iter()
                        .map(|c| {
                            json!({
                                "id": c.id,
                                "type": "function",
                                "function": {
                                    "name": c.name,
                                    "arguments": c.arguments.to_string(),
                                }
                            })
                        })
                        .collect(),
                );
            }
            messages.push(msg);
        }
        let mut body = json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
        });
        if !request.tool_schemas.is_empty() {
            body["tools"] = Value::Array(
                request
                    .tool_schemas
                    .iter()
                    .map(|s| {
                        json!({
                            "type": "function",
                            "function": {
                                "name": s.name,
                                "description": s.description,
                                "parameters": s.parameters,
                            }
                        })
                    })
                    .collect(),
            );
        } else if self.tool_choice_none_on_empty_schemas {
            body["tool_choice"] = json!("none");
        }
        if request.response_format == ResponseFormat::Structured {
            body["response_format"] = json!({"type": "json_object"});
        }
        body
    }
}

fn parse_wire_response(value: &Value) -> Result<ChatResponse, GatewayError> {
    let message = value
        .pointer("/choices/0/message")
        .ok_or_else(|| GatewayError::Provider("payload has no choices[0].message".into()))?;
    let content = message
        .get("content")
        .and_then(Value::as_str)
        .map(str::to_string);
    let mut tool_calls = Vec::new();
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        for call in calls {
            let name = call
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| GatewayError::Provider("tool call without a name".into()))?;
            let raw_args = call
                .pointer("/function/arguments")
                .and_then(Value::as_str)
                .unwrap_or("{}");
            let arguments: Value = serde_json::from_str(raw_args).map_err(|e| {
                GatewayError::Format {
                    detail: format!("tool arguments are not valid JSON: {e}"),
                    raw: raw_args.to_string(),
                }
            })?;
            tool_calls.push(ToolCall {
                id: call
                    .get("id")
                    .and_then(Value::as_str)
                    .unwrap_or("call_0")
                    .to_string(),
                name: name.to_string(),
                arguments,
            });
        }
    }
    let usage = Usage {
        prompt_tokens: value
            .pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
        completion_tokens: value
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
    };
    let mut provider_meta = std::collections::BTreeMap::new();
    if let Some(model) = value.get("model").and_then(Value::as_str) {
        provider_meta.insert("model".to_string(), model.to_string());
    }
    Ok(ChatResponse {
        content,
        tool_calls,
        usage,
        provider_meta,
    })
}

impl Provider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let mut builder = self.client.post(&url).json(&self.wire_body(request));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| GatewayError::Transient(format!("request failed: {e}")))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(GatewayError::Transient(format!("http {status}")));
        }
        if !status.is_success() {
            return Err(GatewayError::Provider(format!(
                "http {status}: {}",
                response.text().unwrap_or_default()
            )));
        }
        let value: Value = response
            .json()
            .map_err(|e| GatewayError::Provider(format!("invalid JSON payload: {e}")))?;
        parse_wire_response(&value)
    }

    fn id(&self) -> String {
        format!("http:{}", self.base_url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Message;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn request() -> ChatRequest {
        ChatRequest {
            model_id: "m1".into(),
            system_prompt: "sys".into(),
            messages: vec![Message::user("hi")],
            tool_schemas: vec![],
            temperature: 0.0,
            response_format: ResponseFormat::FreeText,
        }
    }

    #[test]
    fn parses_content_and_tool_calls() {
        let payload = serde_json::json!({
            "model": "m1",
            "choices": [{"message": {
                "content": null,
                "tool_calls": [{"id": "c1", "type": "function",
                    "function": {"name": "FindHotels", "arguments": "{\"area\":\"centre\"}"}}]
            }}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        });
        let parsed = parse_wire_response(&payload).unwrap();
        assert_eq!(parsed.tool_calls.len(), 1);
        assert_eq!(parsed.tool_calls[0].name, "FindHotels");
        assert_eq!(parsed.tool_calls[0].arguments["area"], "centre");
        assert_eq!(parsed.usage.prompt_tokens, 12);
        assert_eq!(parsed.provider_meta["model"], "m1");
    }

    #[test]
    fn undecodable_tool_arguments_carry_raw_text() {
        let payload = serde_json::json!({
            "choices": [{"message": {
                "tool_calls": [{"id": "c1",
                    "function": {"name": "T", "arguments": "not json"}}]
            }}]
        });
        match parse_wire_response(&payload).unwrap_err() {
            GatewayError::Format { raw, .. } => assert_eq!(raw, "not json"),
            other => panic!("unexpected: {other}"),
        }
    }

    // Minimal one-shot HTTP server for fault-injection: answers each queued
    // (status, body) once.
    fn serve(responses: Vec<(u16, String)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 8192];
                let _ = stream.read(&mut buf);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}")
    }

    #[test]
    fn rate_limited_then_success_via_gateway_retry() {
        let ok_body = serde_json::json!({
            "choices": [{"message": {"content": "done"}}],
            "usage": {"prompt_tokens": 1, "completion_tokens": 1}
        })
        .to_string();
        let base = serve(vec![
            (429, "{}".to_string()),
            (429, "{}".to_string()),
            (200, ok_body),
        ]);
        let gateway = crate::gateway::Gateway::new(Box::new(HttpProvider::new(base, None)), None);
        let policy = crate::gateway::RetryPolicy {
            max_retries: 3,
            backoff_ms: 0,
            max_parallel: 1,
        };
        let response = gateway.complete_chat(&request(), &policy).unwrap();
        assert_eq!(response.content.as_deref(), Some("done"));
        assert_eq!(gateway.network_call_count(), 3);
    }
}
