//! Content-addressed on-disk cache for backend calls.
//!
//! One JSON file per key under the cache directory, filename = hex digest
//! of (backend_id, model, canonical request body). Hits return the stored
//! completion or vector without touching the inner backend; corruption is
//! treated as a miss with a warning. Writes go through a temp file and an
//! atomic rename, so concurrent writers of the same key are benign — they
//! produce identical content.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, CacheKey, ChatRequest, ModelBackend};
use crate::kb::EmbeddingVector;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum CacheEntry {
    Chat { text: String },
    Embedding { vector: Vec<f64> },
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Wraps any backend with the on-disk cache.
pub struct CachedBackend {
    inner: Arc<dyn ModelBackend>,
    dir: PathBuf,
}

impl CachedBackend {
    pub fn new(inner: Arc<dyn ModelBackend>, dir: &Path) -> Result<Self, BackendError> {
        std::fs::create_dir_all(dir).map_err(|e| {
            BackendError::Config(format!("cannot create cache dir {}: {e}", dir.display()))
        })?;
        Ok(Self { inner, dir: dir.to_path_buf() })
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(key.hex())
    }

    fn read(&self, key: &CacheKey) -> Option<CacheEntry> {
        let path = self.path_for(key);
        let raw = match std::fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!("cache read failed for {}: {e}; treating as miss", path.display());
                return None;
            }
        };
        match serde_json::from_str(&raw) {
            Ok(entry) => Some(entry),
            Err(e) => {
                log::warn!("corrupt cache entry {}: {e}; treating as miss", path.display());
                None
            }
        }
    }

    fn write(&self, key: &CacheKey, entry: &CacheEntry) {
        let path = self.path_for(key);
        let tmp = self.dir.join(format!(
            ".{}.tmp.{}.{}",
            key.hex(),
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let body = serde_json::to_vec(entry).expect("cache entry serializes");
        if let Err(e) = std::fs::write(&tmp, body).and_then(|_| std::fs::rename(&tmp, &path)) {
            log::warn!("cache write failed for {}: {e}", path.display());
            let _ = std::fs::remove_file(&tmp);
        }
    }
}

#[async_trait]
impl ModelBackend for CachedBackend {
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
        let key = CacheKey::for_chat(self.inner.backend_id(), request);
        if let Some(CacheEntry::Chat { text }) = self.read(&key) {
            return Ok(text);
        }
        let text = self.inner.chat(request).await?;
        self.write(&key, &CacheEntry::Chat { text: text.clone() });
        Ok(text)
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let key = CacheKey::for_embed(self.inner.backend_id(), self.inner.embed_model(), text);
        if let Some(CacheEntry::Embedding { vector }) = self.read(&key) {
            return Ok(EmbeddingVector::from_values(vector));
        }
        let vector = self.inner.embed(text).await?;
        self.write(&key, &CacheEntry::Embedding { vector: vector.values().to_vec() });
        Ok(vector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MatchKind, MockBackend, MockScript, ReplyRule};
    use crate::backend::ChatTurn;

    fn scripted_mock() -> Arc<MockBackend> {
        let script = MockScript {
            replies: vec![ReplyRule {
                match_kind: MatchKind::Substring,
                pattern: "hello".into(),
                reply: "world".into(),
                delay_ms: 0,
                fail_times: 0,
                fail_kind: None,
            }],
            ..MockScript::empty()
        };
        Arc::new(MockBackend::with_defaults(script))
    }

    fn request(text: &str) -> ChatRequest {
        ChatRequest::new("mock-chat", vec![ChatTurn::user(text)])
    }

    #[tokio::test]
    async fn test_chat_hit_skips_inner_backend() {
        let mock = scripted_mock();
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(mock.clone(), dir.path()).unwrap();
        assert_eq!(cached.chat(&request("hello there")).await.unwrap(), "world");
        assert_eq!(cached.chat(&request("hello there")).await.unwrap(), "world");
        assert_eq!(mock.chat_count(), 1, "second call must be served from cache");
        // The entry sits under the key's hex digest.
        let key = CacheKey::for_chat("mock", &request("hello there"));
        assert!(dir.path().join(key.hex()).is_file());
    }

    #[tokio::test]
    async fn test_distinct_prompts_get_distinct_entries() {
        let mock = scripted_mock();
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(mock.clone(), dir.path()).unwrap();
        cached.chat(&request("hello a")).await.unwrap();
        cached.chat(&request("hello b")).await.unwrap();
        assert_eq!(mock.chat_count(), 2);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[tokio::test]
    async fn test_embed_round_trips_bit_exact() {
        let mock = Arc::new(MockBackend::with_defaults(MockScript::empty()));
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(mock.clone(), dir.path()).unwrap();
        let fresh = cached.embed("bead width").await.unwrap();
        let from_cache = cached.embed("bead width").await.unwrap();
        assert_eq!(mock.embed_count(), 1);
        assert_eq!(fresh, from_cache, "cached vector must be bit-identical");
    }

    #[tokio::test]
    async fn test_corrupt_entry_is_a_miss() {
        let mock = scripted_mock();
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(mock.clone(), dir.path()).unwrap();
        cached.chat(&request("hello there")).await.unwrap();
        let key = CacheKey::for_chat("mock", &request("hello there"));
        let path = dir.path().join(key.hex());
        std::fs::write(&path, b"{not json").unwrap();
        // Corruption falls through to the inner backend and heals the entry.
        assert_eq!(cached.chat(&request("hello there")).await.unwrap(), "world");
        assert_eq!(mock.chat_count(), 2);
        let healed: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(healed["text"], "world");
    }

    #[tokio::test]
    async fn test_concurrent_identical_requests_agree() {
        let mock = scripted_mock();
        let dir = tempfile::tempdir().unwrap();
        let cached = Arc::new(CachedBackend::new(mock.clone(), dir.path()).unwrap());
        let mut handles = Vec::new();
        for _ in 0..100 {
            let cached = cached.clone();
            handles.push(tokio::spawn(async move {
                cached.chat(&request("hello swarm")).await.unwrap()
            }));
        }
        let mut replies = Vec::new();
        for handle in handles {
            replies.push(handle.await.unwrap());
        }
        assert!(replies.iter().all(|r| r == "world"));
        assert!(mock.chat_count() >= 1);
        // After the dust settles the entry exists and further calls are hits.
        let before = mock.chat_count();
        cached.chat(&request("hello swarm")).await.unwrap();
        assert_eq!(mock.chat_count(), before);
    }
}
