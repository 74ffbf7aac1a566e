//! HTTP implementation of the backend contract.
//!
//! Speaks a chat-completions-style JSON protocol: `POST {base_url}/chat/completions`
//! with messages whose content is either a plain string or an array of text
//! and `image_url` parts (inline base64 data URLs), and `POST {base_url}/embeddings`
//! with a single-element input array. The exact request and response shapes
//! are documented in `docs/protocol.md`. Transient failures (transport,
//! timeout, 5xx) are retried with exponential backoff and full jitter; 4xx
//! responses are final, with 401/403 classified as auth errors.

use std::time::Duration;

use async_trait::async_trait;
use serde_json::json;

use super::{BackendConfig, BackendError, ChatRequest, ModelBackend, RetryPolicy, Role};
use crate::kb::EmbeddingVector;

pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::Client,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| BackendError::Config(format!("http client construction: {e}")))?;
        let retry = RetryPolicy::new(config.max_retries, Duration::from_millis(500));
        Ok(Self { config, client, api_key, retry })
    }

    /// Shrinks the backoff base; test harnesses use this to keep fault
    /// suites fast.
    pub fn with_retry_base(mut self, base: Duration) -> Self {
        self.retry.base_delay = base;
        self
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn map_transport_error(&self, err: reqwest::Error) -> BackendError {
        if err.is_timeout() {
            BackendError::Timeout(self.config.timeout_s)
        } else {
            BackendError::Transport(err.to_string())
        }
    }

    async fn post(&self, url: &str, body: &serde_json::Value) -> Result<String, BackendError> {
        let mut request = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(|e| self.map_transport_error(e))?;
        let status = response.status().as_u16();
        let text = response.text().await.map_err(|e| self.map_transport_error(e))?;
        match status {
            200..=299 => Ok(text),
            401 | 403 => Err(BackendError::Auth { status }),
            _ => Err(BackendError::Http { status, message: truncate(&text, 300) }),
        }
    }

    async fn chat_once(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = wire_chat_body(request);
        let text = self.post(&self.endpoint("chat/completions"), &body).await?;
        parse_chat_response(&text)
    }

    async fn embed_once(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let body = json!({ "model": self.config.embed_model, "input": [text] });
        let raw = self.post(&self.endpoint("embeddings"), &body).await?;
        parse_embed_response(&raw, self.config.embed_dim)
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let mut end = max;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &s[..end])
    }
}

/// Map a [`ChatRequest`] onto the wire body. Turns without images use a
/// plain string content; turns with images use the content-parts array.
pub fn wire_chat_body(request: &ChatRequest) -> serde_json::Value {
    let messages: Vec<serde_json::Value> = request
        .turns
        .iter()
        .map(|turn| {
            let role = match turn.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            if turn.images.is_empty() {
                json!({ "role": role, "content": turn.text })
            } else {
                let mut parts = vec![json!({ "type": "text", "text": turn.text })];
                for image in &turn.images {
                    parts.push(json!({
                        "type": "image_url",
                        "image_url": { "url": image.data_url() }
                    }));
                }
                json!({ "role": role, "content": parts })
            }
        })
        .collect();
    json!({
        "model": request.model,
        "temperature": request.temperature(),
        "messages": messages,
    })
}

/// Read `choices[0].message.content` from a chat response body.
pub fn parse_chat_response(raw: &str) -> Result<String, BackendError> {
    let value: serde_json::Value = serde_json::from_str(raw)
        .map_err(|e| BackendError::MalformedResponse(format!("chat response is not JSON: {e}")))?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(|s| s.to_string())
        .ok_or_else(|| {
            BackendError::MalformedResponse(
                "chat response missing choices[0].message.content".into(),
            )
        })
}

/// Read `data[0].embedding` from an embeddings response body and check the
/// dimensionality.
pub fn parse_embed_response(raw: &str, expected_dim: usize) -> Result<EmbeddingVector, BackendError> {
    let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| {
        BackendError::MalformedResponse(format!("embeddings response is not JSON: {e}"))
    })?;
    let array = value["data"][0]["embedding"].as_array().ok_or_else(|| {
        BackendError::MalformedResponse("embeddings response missing data[0].embedding".into())
    })?;
    let mut values = Vec::with_capacity(array.len());
    for item in array {
        let v = item.as_f64().ok_or_else(|| {
            BackendError::MalformedResponse("embedding contains a non-numeric value".into())
        })?;
        if !v.is_finite() {
            return Err(BackendError::MalformedResponse(
                "embedding contains a non-finite value".into(),
            ));
        }
        values.push(v);
    }
    if values.len() != expected_dim {
        return Err(BackendError::DimensionMismatch {
            expected: expected_dim,
            actual: values.len(),
        });
    }
    Ok(EmbeddingVector::from_values(values))
}

#[async_trait]
impl ModelBackend for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.config.backend_id
    }

    fn chat_model(&self) -> &str {
        &self.config.chat_model
    }

    fn embed_model(&self) -> &str {
        &self.config.embed_model
    }

    fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    async fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.retry.run(|| self.chat_once(request)).await
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        self.retry.run(|| self.embed_once(text)).await
    }
}
