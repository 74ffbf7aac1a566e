//! Deterministic scripted backend for tests and offline runs.
//!
//! Chat replies come from a script of matchers over the last user turn;
//! unmatched prompts get a canonical fallback and are logged. Embeddings
//! are derived from a seeded hash of the text, expanded to `dim` uniform
//! values and unit-normalized — fully deterministic, text-sensitive, and
//! stable across runs. Every call is recorded with a sequence number, and
//! an in-flight gauge captures the highest concurrency observed.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendConfig, BackendError, ChatRequest, ModelBackend};
use crate::kb::EmbeddingVector;

/// How a rule's pattern is compared against the last user turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Exact,
    #[default]
    Substring,
}

/// Simulated failure classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailKind {
    Http500,
    Http401,
    Timeout,
    Transport,
}

impl FailKind {
    fn to_error(self) -> BackendError {
        match self {
            FailKind::Http500 => BackendError::Http { status: 500, message: "injected server error".into() },
            FailKind::Http401 => BackendError::Auth { status: 401 },
            FailKind::Timeout => BackendError::Timeout(0.0),
            FailKind::Transport => BackendError::Transport("injected connection reset".into()),
        }
    }
}

/// One scripted reply: a matcher plus the reply text and optional
/// latency/fault injection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplyRule {
    #[serde(rename = "match", default)]
    pub match_kind: MatchKind,
    pub pattern: String,
    pub reply: String,
    #[serde(default)]
    pub delay_ms: u64,
    /// The first `fail_times` calls hitting this rule fail before the reply
    /// becomes available.
    #[serde(default)]
    pub fail_times: u32,
    #[serde(default)]
    pub fail_kind: Option<FailKind>,
}

impl ReplyRule {
    fn matches(&self, prompt: &str) -> bool {
        match self.match_kind {
            MatchKind::Exact => prompt == self.pattern,
            MatchKind::Substring => prompt.contains(&self.pattern),
        }
    }
}

fn default_fallback_reply() -> String {
    "UNMATCHED".to_string()
}

/// The fixture format driving a [`MockBackend`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub replies: Vec<ReplyRule>,
    #[serde(default = "default_fallback_reply")]
    pub fallback_reply: String,
    /// Per-text seed overrides; texts not listed use the backend seed.
    #[serde(default)]
    pub embedding_seeds: BTreeMap<String, u64>,
    /// When true, unmatched prompts are echoed back verbatim instead of
    /// getting `fallback_reply` — handy for asserting prompt contents.
    #[serde(default)]
    pub echo_unmatched: bool,
}

impl MockScript {
    pub fn empty() -> Self {
        Self {
            replies: Vec::new(),
            fallback_reply: default_fallback_reply(),
            embedding_seeds: BTreeMap::new(),
            echo_unmatched: false,
        }
    }

    pub fn echoing() -> Self {
        Self { echo_unmatched: true, ..Self::empty() }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            BackendError::Config(format!("cannot read mock script {}: {e}", path.display()))
        })?;
        serde_json::from_str(&raw).map_err(|e| {
            BackendError::Config(format!("cannot parse mock script {}: {e}", path.display()))
        })
    }
}

/// What kind of backend call a log entry records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Chat,
    Embed,
}

/// One entry of the mock's call log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallRecord {
    /// Global arrival order across chat and embed calls.
    pub seq: u64,
    pub kind: CallKind,
    /// Last user turn text (chat) or the input text (embed).
    pub prompt: String,
    /// Pattern of the rule that matched, if any.
    pub matched_pattern: Option<String>,
    /// Number of turns in the chat request (0 for embed calls).
    pub turn_count: usize,
}

/// Deterministic scripted implementation of [`ModelBackend`].
pub struct MockBackend {
    backend_id: String,
    chat_model: String,
    embed_model: String,
    dim: usize,
    seed: u64,
    script: MockScript,
    fail_budgets: Vec<AtomicU32>,
    seq: AtomicU64,
    in_flight: AtomicU32,
    max_in_flight_seen: AtomicU32,
    calls: Mutex<Vec<CallRecord>>,
    misses: Mutex<Vec<String>>,
}

struct InFlightGuard<'a> {
    backend: &'a MockBackend,
}

impl<'a> InFlightGuard<'a> {
    fn enter(backend: &'a MockBackend) -> Self {
        let now = backend.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        backend.max_in_flight_seen.fetch_max(now, Ordering::SeqCst);
        Self { backend }
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        self.backend.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

impl MockBackend {
    pub fn new(script: MockScript, backend_id: &str, chat_model: &str, embed_model: &str, dim: usize, seed: u64) -> Self {
        let fail_budgets = script.replies.iter().map(|r| AtomicU32::new(r.fail_times)).collect();
        Self {
            backend_id: backend_id.to_string(),
            chat_model: chat_model.to_string(),
            embed_model: embed_model.to_string(),
            dim,
            seed,
            script,
            fail_budgets,
            seq: AtomicU64::new(0),
            in_flight: AtomicU32::new(0),
            max_in_flight_seen: AtomicU32::new(0),
            calls: Mutex::new(Vec::new()),
            misses: Mutex::new(Vec::new()),
        }
    }

    /// Plain mock with default identity, 1024-dim embeddings, seed 0.
    pub fn with_defaults(script: MockScript) -> Self {
        Self::new(script, "mock", "mock-chat", "mock-embed", 1024, 0)
    }

    pub fn from_script_file(path: &Path, config: &BackendConfig, seed: u64) -> Result<Self, BackendError> {
        let script = MockScript::load(path)?;
        Ok(Self::new(
            script,
            &config.backend_id,
            &config.chat_model,
            &config.embed_model,
            config.embed_dim,
            seed,
        ))
    }

    fn record(&self, kind: CallKind, prompt: &str, matched_pattern: Option<String>, turn_count: usize) -> u64 {
        let seq = self.seq.fetch_add(1, Ordering::SeqCst);
        self.calls.lock().expect("call log lock").push(CallRecord {
            seq,
            kind,
            prompt: prompt.to_string(),
            matched_pattern,
            turn_count,
        });
        seq
    }

    /// Snapshot of the call log in arrival order.
    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("call log lock").clone()
    }

    pub fn chat_calls(&self) -> Vec<CallRecord> {
        self.calls().into_iter().filter(|c| c.kind == CallKind::Chat).collect()
    }

    pub fn chat_count(&self) -> usize {
        self.chat_calls().len()
    }

    pub fn embed_count(&self) -> usize {
        self.calls().into_iter().filter(|c| c.kind == CallKind::Embed).count()
    }

    /// Prompts that matched no rule.
    pub fn misses(&self) -> Vec<String> {
        self.misses.lock().expect("miss log lock").clone()
    }

    /// Highest number of simultaneously outstanding calls observed.
    pub fn max_in_flight_seen(&self) -> u32 {
        self.max_in_flight_seen.load(Ordering::SeqCst)
    }

    fn embedding_for(&self, text: &str) -> EmbeddingVector {
        let seed = self.script.embedding_seeds.get(text).copied().unwrap_or(self.seed);
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let mut rng_seed = [0u8; 32];
        rng_seed.copy_from_slice(&digest);
        let mut rng = ChaCha20Rng::from_seed(rng_seed);
        let mut values: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        } else {
            values[0] = 1.0;
        }
        EmbeddingVector::from_values(values)
    }
}

#[async_trait]
impl ModelBackend for MockBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn chat_model(&self) -> &str {
        &self.chat_model
    }

    fn embed_model(&self) -> &str {
        &self.embed_model
    }

    fn embed_dim(&self) -> usize {
        self.dim
    }

    async fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let _guard = InFlightGuard::enter(self);
        let prompt = request.last_user_text().unwrap_or("").to_string();
        let rule_index = self.script.replies.iter().position(|r| r.matches(&prompt));
        self.record(
            CallKind::Chat,
            &prompt,
            rule_index.map(|i| self.script.replies[i].pattern.clone()),
            request.turns.len(),
        );
        match rule_index {
            Some(i) => {
                let rule = &self.script.replies[i];
                if rule.delay_ms > 0 {
                    tokio::time::sleep(Duration::from_millis(rule.delay_ms)).await;
                }
                let should_fail = self.fail_budgets[i]
                    .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                    .is_ok();
                if should_fail {
                    return Err(rule.fail_kind.unwrap_or(FailKind::Transport).to_error());
                }
                Ok(rule.reply.clone())
            }
            None => {
                log::debug!("mock backend: no rule matched prompt ({} chars)", prompt.len());
                self.misses.lock().expect("miss log lock").push(prompt.clone());
                if self.script.echo_unmatched {
                    Ok(prompt)
                } else {
                    Ok(self.script.fallback_reply.clone())
                }
            }
        }
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let _guard = InFlightGuard::enter(self);
        self.record(CallKind::Embed, text, None, 0);
        Ok(self.embedding_for(text))
    }
}
