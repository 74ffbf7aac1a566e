//! Uniform contract for chat-with-images and text-embedding model services.
//!
//! A [`ModelBackend`] answers chat requests (multi-turn, inline base64
//! images, temperature pinned to 0) and embeds text. Implementations:
//! [`HttpBackend`] for chat-completions-style gateways, [`MockBackend`] for
//! deterministic scripted runs, [`CachedBackend`] for a content-addressed
//! on-disk cache, and [`LimitedBackend`] for the in-flight bound. Retries
//! use exponential backoff with full jitter and never fire on 4xx.

pub mod cache;
pub mod http;
pub mod mock;

use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::kb::EmbeddingVector;

pub use cache::CachedBackend;
pub use http::HttpBackend;
pub use mock::{CallKind, CallRecord, MockBackend, MockScript};

/// Errors surfaced by backend operations.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out after {0:.1}s")]
    Timeout(f64),
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("backend configuration invalid: {0}")]
    Config(String),
}

impl BackendError {
    /// Transient failures worth another attempt: transport drops, timeouts,
    /// and 5xx. Client errors (4xx) and contract violations are final.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::Timeout(_) => true,
            BackendError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// Connection settings for one model service.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    pub base_url: String,
    pub chat_model: String,
    pub embed_model: String,
    /// Name of the environment variable holding the API key; the key itself
    /// never appears in config files.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Expected embedding dimensionality of the embed endpoint.
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    /// When set, the backend is the deterministic mock driven by this
    /// script file instead of an HTTP service.
    #[serde(default)]
    pub mock_script: Option<PathBuf>,
}

fn default_timeout_s() -> f64 {
    60.0
}

fn default_max_in_flight() -> usize {
    4
}

fn default_max_retries() -> u32 {
    3
}

fn default_embed_dim() -> usize {
    1024
}

impl BackendConfig {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            BackendError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let mut config: BackendConfig = serde_json::from_str(&raw).map_err(|e| {
            BackendError::Config(format!("cannot parse {}: {e}", path.display()))
        })?;
        // A relative mock-script path means "next to this config file".
        if let Some(script) = &mut config.mock_script {
            if script.is_relative() {
                if let Some(parent) = path.parent() {
                    *script = parent.join(&*script);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.backend_id.trim().is_empty() {
            return Err(BackendError::Config("backend_id must be non-empty".into()));
        }
        if self.max_in_flight < 1 {
            return Err(BackendError::Config("max_in_flight must be at least 1".into()));
        }
        if !(self.timeout_s > 0.0) {
            return Err(BackendError::Config("timeout_s must be positive".into()));
        }
        if self.embed_dim < 1 {
            return Err(BackendError::Config("embed_dim must be at least 1".into()));
        }
        if self.mock_script.is_none() {
            let url = reqwest::Url::parse(&self.base_url)
                .map_err(|e| BackendError::Config(format!("base_url invalid: {e}")))?;
            if !matches!(url.scheme(), "http" | "https") {
                return Err(BackendError::Config(format!(
                    "base_url scheme must be http or https, got {}",
                    url.scheme()
                )));
            }
        }
        Ok(())
    }
}

/// Speaker of one chat turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// An inline image attachment, already base64-encoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImagePart {
    pub media_type: String,
    pub data_base64: String,
}

impl ImagePart {
    pub fn from_bytes(media_type: &str, bytes: &[u8]) -> Self {
        use base64::Engine as _;
        Self {
            media_type: media_type.to_string(),
            data_base64: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    /// `data:` URL form used by the wire protocol.
    pub fn data_url(&self) -> String {
        format!("data:{};base64,{}", self.media_type, self.data_base64)
    }
}

/// One turn of a chat conversation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
    pub images: Vec<ImagePart>,
}

impl ChatTurn {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, text: text.into(), images: Vec::new() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into(), images: Vec::new() }
    }

    pub fn user_with_images(text: impl Into<String>, images: Vec<ImagePart>) -> Self {
        Self { role: Role::User, text: text.into(), images }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into(), images: Vec::new() }
    }
}

/// A complete chat request. Temperature is structurally pinned to 0: the
/// only constructor sets it and there is no mutator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    temperature: f64,
    pub turns: Vec<ChatTurn>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, turns: Vec<ChatTurn>) -> Self {
        Self { model: model.into(), temperature: 0.0, turns }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Text of the last user turn, the matching key for the scripted mock.
    pub fn last_user_text(&self) -> Option<&str> {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.text.as_str())
    }

    /// Canonical byte serialization: struct field order is fixed, so the
    /// same logical request always yields identical bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("chat request serializes")
    }
}

/// Content address of one backend request.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    digest: String,
}

impl CacheKey {
    fn from_parts(backend_id: &str, model: &str, body: &[u8]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(backend_id.as_bytes());
        hasher.update([0]);
        hasher.update(model.as_bytes());
        hasher.update([0]);
        hasher.update(body);
        Self { digest: hex::encode(hasher.finalize()) }
    }

    pub fn for_chat(backend_id: &str, request: &ChatRequest) -> Self {
        Self::from_parts(backend_id, &request.model, &request.canonical_bytes())
    }

    pub fn for_embed(backend_id: &str, model: &str, text: &str) -> Self {
        let body = serde_json::to_vec(&serde_json::json!({ "input": text }))
            .expect("embed body serializes");
        Self::from_parts(backend_id, model, &body)
    }

    /// Hex digest; used as the cache filename.
    pub fn hex(&self) -> &str {
        &self.digest
    }
}

/// The uniform model-service contract.
#[async_trait]
pub trait ModelBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn chat_model(&self) -> &str;
    fn embed_model(&self) -> &str;
    fn embed_dim(&self) -> usize;

    /// Returns the completion text for the conversation.
    async fn chat(&self, request: &ChatRequest) -> Result<String, BackendError>;

    /// Returns the embedding vector for one text.
    async fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError>;
}

/// Exponential backoff with full jitter. Total attempts never exceed
/// `max_retries + 1`; non-retryable errors end the loop immediately.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: default_max_retries(), base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn new(max_retries: u32, base_delay: Duration) -> Self {
        Self { max_retries, base_delay }
    }

    pub async fn run<T, F, Fut>(&self, mut op: F) -> Result<T, BackendError>
    where
        F: FnMut() -> Fut,
        Fut: Future<Output = Result<T, BackendError>>,
    {
        let mut attempt: u32 = 0;
        loop {
            match op().await {
                Ok(value) => return Ok(value),
                Err(err) if err.is_retryable() && attempt < self.max_retries => {
                    let cap = self.base_delay.mul_f64(2f64.powi(attempt as i32));
                    let jittered = cap.mul_f64(rand::thread_rng().gen::<f64>());
                    log::warn!(
                        "retryable backend error (attempt {}/{}): {err}; backing off {:?}",
                        attempt + 1,
                        self.max_retries + 1,
                        jittered
                    );
                    tokio::time::sleep(jittered).await;
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

/// Bounds concurrent outstanding calls to the inner backend.
pub struct LimitedBackend {
    inner: Arc<dyn ModelBackend>,
    permits: Arc<Semaphore>,
}

impl LimitedBackend {
    pub fn new(inner: Arc<dyn ModelBackend>, max_in_flight: usize) -> Self {
        Self { inner, permits: Arc::new(Semaphore::new(max_in_flight.max(1))) }
    }
}

#[async_trait]
impl ModelBackend for LimitedBackend {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn chat_model(&self) -> &str {
        self.inner.chat_model()
    }

    fn embed_model(&self) -> &str {
        self.inner.embed_model()
    }

    fn embed_dim(&self) -> usize {
        self.inner.embed_dim()
    }

    async fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let _permit = self.permits.acquire().await.expect("semaphore stays open");
        self.inner.chat(request).await
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let _permit = self.permits.acquire().await.expect("semaphore stays open");
        self.inner.embed(text).await
    }
}

/// Applies a [`RetryPolicy`] around any backend. [`HttpBackend`] retries
/// internally; this wrapper exists for composing retry behaviour onto other
/// implementations (and for testing the policy against the mock).
pub struct RetryingBackend {
    inner: Arc<dyn ModelBackend>,
    policy: RetryPolicy,
}

impl RetryingBackend {
    pub fn new(inner: Arc<dyn ModelBackend>, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }
}

#[async_trait]
impl ModelBackend for RetryingBackend {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn chat_model(&self) -> &str {
        self.inner.chat_model()
    }

    fn embed_model(&self) -> &str {
        self.inner.embed_model()
    }

    fn embed_dim(&self) -> usize {
        self.inner.embed_dim()
    }

    async fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.policy.run(|| self.inner.chat(request)).await
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        self.policy.run(|| self.inner.embed(text)).await
    }
}

/// Assemble the backend stack described by a config: mock or HTTP at the
/// core, the in-flight limiter around it, and optionally the disk cache
/// outermost so cache hits bypass the limiter entirely.
pub fn build_backend(
    config: &BackendConfig,
    cache_dir: Option<&Path>,
    seed: u64,
) -> Result<Arc<dyn ModelBackend>, BackendError> {
    config.validate()?;
    let core: Arc<dyn ModelBackend> = match &config.mock_script {
        Some(script) => Arc::new(MockBackend::from_script_file(script, config, seed)?),
        None => Arc::new(HttpBackend::new(config.clone())?),
    };
    let limited: Arc<dyn ModelBackend> =
        Arc::new(LimitedBackend::new(core, config.max_in_flight));
    match cache_dir {
        Some(dir) => Ok(Arc::new(CachedBackend::new(limited, dir)?)),
        None => Ok(limited),
    }
}
