//! HTTP transport for chat-completions-style, embedding and entailment
//! endpoints.

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendProfile, Transport, TransportError};
use crate::prompts::PromptRequest;

#[derive(Debug, Default)]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

/// Environment variable holding the credential for `backend_id`.
pub fn api_key_var(backend_id: &str) -> String {
    let suffix: String = backend_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("CSM_API_KEY_{suffix}")
}

impl HttpTransport {
    pub fn new() -> Self {
        Self::default()
    }

    fn post(&self, profile: &BackendProfile, body: &Value) -> Result<String, TransportError> {
        let endpoint = profile.endpoint.as_deref().ok_or_else(|| TransportError {
            message: format!("backend {} has no endpoint", profile.backend_id),
            retryable: false,
        })?;
        let mut req = self
            .client
            .post(endpoint)
            .timeout(Duration::from_secs(profile.request_timeout_secs))
            .json(body);
        if let Ok(key) = std::env::var(api_key_var(&profile.backend_id)) {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError {
            message: format!("POST {endpoint}: {e}"),
            retryable: true,
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| TransportError {
            message: format!("reading response from {endpoint}: {e}"),
            retryable: true,
        })?;
        if !status.is_success() {
            return Err(TransportError {
                message: format!("POST {endpoint}: HTTP {status}: {}", truncate(&text, 200)),
                retryable: status.is_server_error() || status.as_u16() == 429,
            });
        }
        Ok(text)
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn malformed(what: &str, body: &str) -> TransportError {
    TransportError {
        message: format!("unexpected {what} response: {}", truncate(body, 200)),
        retryable: false,
    }
}

/// Content of the first choice of a chat-completions response.
pub fn parse_chat_response(body: &str) -> Result<String, TransportError> {
    let v: Value = serde_json::from_str(body).map_err(|_| malformed("chat", body))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| malformed("chat", body))
}

/// Accepts a bare list of vectors, `{"embeddings": [...]}` or
/// `{"data": [{"embedding": [...]}, ...]}`.
pub fn parse_embedding_response(body: &str) -> Result<Vec<Vec<f64>>, TransportError> {
    let v: Value = serde_json::from_str(body).map_err(|_| malformed("embedding", body))?;
    let rows: Vec<Value> = match &v {
        Value::Array(rows) => rows.clone(),
        Value::Object(map) => {
            if let Some(Value::Array(rows)) = map.get("embeddings") {
                rows.clone()
            } else if let Some(Value::Array(items)) = map.get("data") {
                items
                    .iter()
                    .map(|it| it.get("embedding").cloned().unwrap_or(Value::Null))
                    .collect()
            } else {
                return Err(malformed("embedding", body));
            }
        }
        _ => return Err(malformed("embedding", body)),
    };
    rows.iter()
        .map(|row| {
            row.as_array()
                .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                .ok_or_else(|| malformed("embedding", body))
        })
        .collect()
}

impl Transport for HttpTransport {
    fn chat(&self, profile: &BackendProfile, request: &PromptRequest) -> Result<String, TransportError> {
        let body = json!({
            "model": profile.model_name,
            "messages": [{"role": "user", "content": request.rendered}],
            "temperature": profile.temperature,
            "max_tokens": profile.max_output_tokens,
        });
        parse_chat_response(&self.post(profile, &body)?)
    }

    fn embed(&self, profile: &BackendProfile, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
        let body = json!({"model": profile.model_name, "input": texts});
        parse_embedding_response(&self.post(profile, &body)?)
    }

    fn entail(&self, profile: &BackendProfile, claim: &str, summary: &str) -> Result<String, TransportError> {
        let body = json!({"model": profile.model_name, "claim": claim, "summary": summary});
        self.post(profile, &body)
    }
}
