//! Knowledge base: context-aware chunk summaries, their embeddings, and
//! exhaustive top-N cosine retrieval.
//!
//! Databases here are small (a handful of articles), so retrieval is an
//! exact linear scan — no approximate index, which keeps ranking equal to
//! the brute-force definition by construction. Embeddings are stored raw
//! as the backend produced them; cosine is computed on demand.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendError, ModelBackend};
use crate::ingest::{Chunk, ChunkKind, DocumentContext};

/// Default N for top-N retrieval.
pub const DEFAULT_TOP_N: usize = 5;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("degenerate embedding vector (zero norm)")]
    DegenerateVector,
    #[error("embedding contains a non-finite value")]
    NonFiniteValue,
    #[error("text to embed is empty")]
    EmptyText,
    #[error("backend returned an empty completion")]
    DegenerateOutput,
    #[error("no chunks to build a database from")]
    NoChunks,
    #[error("all {failed} chunks failed; database would be empty")]
    AllChunksFailed { failed: usize },
    #[error("knowledge database is empty")]
    EmptyDatabase,
    #[error("retrieval count must be at least 1")]
    InvalidTopN,
    #[error("no document context for doc_id {doc_id}")]
    MissingContext { doc_id: String },
    #[error("duplicate entry_id {0}")]
    DuplicateEntryId(String),
    #[error("knowledge file error at line {line}: {message}")]
    Load { line: usize, message: String },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// A fixed-length vector of finite reals; equality is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Checks the stored-vector invariants: all values finite, norm > 0.
    pub fn check(&self) -> Result<(), KbError> {
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(KbError::NonFiniteValue);
        }
        if self.norm() <= 0.0 {
            return Err(KbError::DegenerateVector);
        }
        Ok(())
    }
}

/// cos(a, b) = dot(a, b) / (|a| · |b|).
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, KbError> {
    if a.dim() != b.dim() {
        return Err(KbError::DimensionMismatch { expected: a.dim(), actual: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na <= 0.0 || nb <= 0.0 {
        return Err(KbError::DegenerateVector);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// One summarized, embedded chunk with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub entry_id: String,
    pub summary: String,
    pub embedding: EmbeddingVector,
    pub doc_id: String,
    pub chunk_id: String,
    pub context_title: String,
    /// Which model produced the summary and embedding.
    pub backend_id: String,
}

/// The retrieval corpus: entries sharing one embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeDatabase {
    pub entries: Vec<KnowledgeEntry>,
    pub dim: usize,
    pub created_at: String,
}

impl KnowledgeDatabase {
    /// Construct with invariant checks: unique entry ids, consistent dims,
    /// finite non-degenerate vectors.
    pub fn new(entries: Vec<KnowledgeEntry>, dim: usize) -> Result<Self, KbError> {
        let mut seen = HashSet::new();
        for entry in &entries {
            if !seen.insert(entry.entry_id.as_str()) {
                return Err(KbError::DuplicateEntryId(entry.entry_id.clone()));
            }
            if entry.embedding.dim() != dim {
                return Err(KbError::DimensionMismatch {
                    expected: dim,
                    actual: entry.embedding.dim(),
                });
            }
            entry.embedding.check()?;
        }
        Ok(Self { entries, dim, created_at: chrono::Utc::now().to_rfc3339() })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Content hash over dimension and entries. Deliberately excludes
    /// `created_at` so identical content always fingerprints identically.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("dim:{}\n", self.dim));
        for entry in &self.entries {
            hasher.update(serde_json::to_vec(entry).expect("entry serializes"));
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

/// One retrieval result, borrowing its entry from the database.
#[derive(Debug, Clone)]
pub struct RetrievalHit<'a> {
    pub entry: &'a KnowledgeEntry,
    pub similarity: f64,
}

/// The prompt whose completion becomes a knowledge-base summary. Carries
/// the document context (title, abstract, conclusions) alongside the chunk
/// body, plus the caption and adjacent paragraph for figure/table chunks.
pub fn summary_prompt(chunk: &Chunk, context: &DocumentContext) -> String {
    let mut prompt = String::new();
    prompt.push_str(
        "Summarize the excerpt below for a knowledge base on print quality \
         assessment. Use the document context to resolve references, and keep \
         every feature name, measurement procedure, and numeric range.\n\n",
    );
    prompt.push_str(&format!("Document title: {}\n", context.title));
    if !context.abstract_text.is_empty() {
        prompt.push_str(&format!("Abstract: {}\n", context.abstract_text));
    }
    if !context.conclusion_text.is_empty() {
        prompt.push_str(&format!("Conclusions: {}\n", context.conclusion_text));
    }
    let kind = match chunk.kind {
        ChunkKind::Text => "text passage",
        ChunkKind::Figure => "figure description",
        ChunkKind::Table => "table",
    };
    prompt.push_str(&format!("\nExcerpt ({kind}):\n"));
    if let Some(caption) = &chunk.attached_caption {
        prompt.push_str(&format!("Caption: {caption}\n"));
    }
    if let Some(paragraph) = &chunk.nearby_paragraph {
        prompt.push_str(&format!("Adjacent paragraph: {paragraph}\n"));
    }
    prompt.push_str(&chunk.body);
    prompt.push_str("\n\nReply with the summary only.");
    prompt
}

/// Summarize one chunk in its document context.
pub async fn summarize_chunk(
    chunk: &Chunk,
    context: &DocumentContext,
    backend: &dyn ModelBackend,
) -> Result<String, KbError> {
    use crate::backend::{ChatRequest, ChatTurn};
    let request = ChatRequest::new(
        backend.chat_model(),
        vec![ChatTurn::user(summary_prompt(chunk, context))],
    );
    let completion = backend.chat(&request).await?;
    if completion.trim().is_empty() {
        return Err(KbError::DegenerateOutput);
    }
    Ok(completion)
}

/// Embed one non-empty text.
pub async fn embed(text: &str, backend: &dyn ModelBackend) -> Result<EmbeddingVector, KbError> {
    if text.trim().is_empty() {
        return Err(KbError::EmptyText);
    }
    let vector = backend.embed(text).await?;
    vector.check()?;
    Ok(vector)
}

/// A chunk that could not be turned into an entry.
#[derive(Debug, Clone, Serialize)]
pub struct BuildFailure {
    pub chunk_id: String,
    pub error: String,
}

/// Summarize and embed every chunk, pooling across documents. Individual
/// chunk failures are recorded and skipped; only a fully failed build is
/// an error. Entries come out in chunk order regardless of completion
/// order.
pub async fn build_database(
    chunks: &[Chunk],
    contexts: &BTreeMap<String, DocumentContext>,
    backend: &dyn ModelBackend,
) -> Result<(KnowledgeDatabase, Vec<BuildFailure>), KbError> {
    if chunks.is_empty() {
        return Err(KbError::NoChunks);
    }
    let dim = backend.embed_dim();
    let tasks = chunks.iter().map(|chunk| async move {
        let context = contexts
            .get(&chunk.doc_id)
            .ok_or_else(|| KbError::MissingContext { doc_id: chunk.doc_id.clone() })?;
        let summary = summarize_chunk(chunk, context, backend).await?;
        let embedding = embed(&summary, backend).await?;
        if embedding.dim() != dim {
            return Err(KbError::DimensionMismatch { expected: dim, actual: embedding.dim() });
        }
        Ok(KnowledgeEntry {
            entry_id: chunk.chunk_id.clone(),
            summary,
            embedding,
            doc_id: chunk.doc_id.clone(),
            chunk_id: chunk.chunk_id.clone(),
            context_title: context.title.clone(),
            backend_id: backend.backend_id().to_string(),
        })
    });
    let results = futures::future::join_all(tasks).await;

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (chunk, result) in chunks.iter().zip(results) {
        match result {
            Ok(entry) => entries.push(entry),
            Err(err) => {
                log::warn!("chunk {} skipped: {err}", chunk.chunk_id);
                failures.push(BuildFailure { chunk_id: chunk.chunk_id.clone(), error: err.to_string() });
            }
        }
    }
    if entries.is_empty() {
        return Err(KbError::AllChunksFailed { failed: failures.len() });
    }
    Ok((KnowledgeDatabase::new(entries, dim)?, failures))
}

/// Rank the whole database against a query vector: similarity descending,
/// ties broken by ascending entry_id, truncated to n.
pub fn rank_by_vector<'a>(
    db: &'a KnowledgeDatabase,
    query: &EmbeddingVector,
    n: usize,
) -> Result<Vec<RetrievalHit<'a>>, KbError> {
    if db.is_empty() {
        return Err(KbError::EmptyDatabase);
    }
    if n == 0 {
        return Err(KbError::InvalidTopN);
    }
    if query.dim() != db.dim {
        return Err(KbError::DimensionMismatch { expected: db.dim, actual: query.dim() });
    }
    let mut hits = Vec::with_capacity(db.len());
    for entry in &db.entries {
        let similarity = cosine_similarity(query, &entry.embedding)?;
        hits.push(RetrievalHit { entry, similarity });
    }
    hits.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.entry.entry_id.cmp(&b.entry.entry_id))
    });
    hits.truncate(n);
    Ok(hits)
}

/// Embed the query and rank the database against it.
pub async fn retrieve<'a>(
    db: &'a KnowledgeDatabase,
    query: &str,
    n: usize,
    backend: &dyn ModelBackend,
) -> Result<Vec<RetrievalHit<'a>>, KbError> {
    if db.is_empty() {
        return Err(KbError::EmptyDatabase);
    }
    if n == 0 {
        return Err(KbError::InvalidTopN);
    }
    let query_vector = embed(query, backend).await?;
    rank_by_vector(db, &query_vector, n)
}

#[derive(Debug, Serialize, Deserialize)]
struct KbHeader {
    dim: usize,
    created_at: String,
}

/// Write the database as JSON Lines: a header line, then one entry per
/// line. f64 values serialize in shortest round-trip decimal form, so a
/// load reproduces them bit-exactly.
pub fn save_database(db: &KnowledgeDatabase, path: &Path) -> Result<(), KbError> {
    let io_err = |source| KbError::Io { path: path.display().to_string(), source };
    let mut out = Vec::new();
    let header = KbHeader { dim: db.dim, created_at: db.created_at.clone() };
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    for entry in &db.entries {
        serde_json::to_writer(&mut out, entry).expect("entry serializes");
        out.push(b'\n');
    }
    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Load a database, validating every invariant and citing the 1-based line
/// number of any offending line.
pub fn load_database(path: &Path) -> Result<KnowledgeDatabase, KbError> {
    let file = std::fs::File::open(path)
        .map_err(|source| KbError::Io { path: path.display().to_string(), source })?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header: KbHeader = match lines.next() {
        Some((_, Ok(line))) => serde_json::from_str(&line)
            .map_err(|e| KbError::Load { line: 1, message: format!("bad header: {e}") })?,
        Some((_, Err(e))) => {
            return Err(KbError::Load { line: 1, message: e.to_string() });
        }
        None => return Err(KbError::Load { line: 1, message: "file is empty".into() }),
    };

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in lines {
        let line_no = index + 1;
        let line = line.map_err(|e| KbError::Load { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: KnowledgeEntry = serde_json::from_str(&line)
            .map_err(|e| KbError::Load { line: line_no, message: e.to_string() })?;
        if entry.embedding.dim() != header.dim {
            return Err(KbError::Load {
                line: line_no,
                message: format!(
                    "embedding dim {} does not match header dim {}",
                    entry.embedding.dim(),
                    header.dim
                ),
            });
        }
        if let Err(e) = entry.embedding.check() {
            return Err(KbError::Load { line: line_no, message: e.to_string() });
        }
        if !seen.insert(entry.entry_id.clone()) {
            return Err(KbError::Load {
                line: line_no,
                message: format!("duplicate entry_id {}", entry.entry_id),
            });
        }
        entries.push(entry);
    }

    Ok(KnowledgeDatabase { entries, dim: header.dim, created_at: header.created_at })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MatchKind, MockBackend, MockScript, ReplyRule};
    use crate::ingest::{ingest_document, DEFAULT_ASSOCIATION_WINDOW, DEFAULT_CHUNK_BUDGET};

    fn vector(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::from_values(values.to_vec())
    }

    fn entry(id: &str, values: &[f64]) -> KnowledgeEntry {
        KnowledgeEntry {
            entry_id: id.into(),
            summary: format!("summary {id}"),
            embedding: vector(values),
            doc_id: "doc1".into(),
            chunk_id: id.into(),
            context_title: "Title".into(),
            backend_id: "mock".into(),
        }
    }

    fn context() -> DocumentContext {
        DocumentContext {
            title: "Laser deposition geometry study".into(),
            abstract_text: "We study bead geometry under varied power.".into(),
            conclusion_text: "Width tracks power nearly linearly.".into(),
        }
    }

    #[test]
    fn test_cosine_self_similarity() {
        let v = vector(&[0.3, -0.4, 0.5]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn test_cosine_orthogonal() {
        let a = vector(&[1.0, 0.0]);
        let b = vector(&[0.0, 1.0]);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn test_cosine_known_value() {
        let a = vector(&[1.0, 1.0]);
        let b = vector(&[1.0, 0.0]);
        let cos = cosine_similarity(&a, &b).unwrap();
        assert!((cos - 0.70710678).abs() < 1e-8, "{cos}");
        assert!((cos - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn test_cosine_errors() {
        let a = vector(&[1.0, 0.0]);
        let b = vector(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            cosine_similarity(&a, &b),
            Err(KbError::DimensionMismatch { expected: 2, actual: 3 })
        ));
        let zero = vector(&[0.0, 0.0]);
        assert!(matches!(cosine_similarity(&a, &zero), Err(KbError::DegenerateVector)));
    }

    #[test]
    fn test_cosine_symmetry_and_scale_invariance() {
        let a = vector(&[0.1, -2.0, 3.5, 0.7]);
        let b = vector(&[-1.2, 0.4, 0.9, 2.2]);
        let ab = cosine_similarity(&a, &b).unwrap();
        let ba = cosine_similarity(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let scaled = vector(&a.values().iter().map(|v| v * 7.3).collect::<Vec<_>>());
        let scaled_cos = cosine_similarity(&scaled, &b).unwrap();
        assert!((ab - scaled_cos).abs() < 1e-9);
    }

    #[tokio::test]
    async fn test_embed_empty_text_rejected() {
        let mock = MockBackend::with_defaults(MockScript::empty());
        assert!(matches!(embed("  ", &mock).await, Err(KbError::EmptyText)));
    }

    #[tokio::test]
    async fn test_embed_deterministic_1024() {
        let mock = MockBackend::with_defaults(MockScript::empty());
        let a = embed("bead width", &mock).await.unwrap();
        let b = embed("bead width", &mock).await.unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 1024);
    }

    #[test]
    fn test_summary_prompt_carries_context_and_enrichment() {
        let raw = serde_json::json!({
            "doc_id": "doc1",
            "title": "Laser deposition geometry study",
            "elements": [
                {"kind": "heading", "text": "Abstract"},
                {"kind": "paragraph", "text": "We study bead geometry under varied power."},
                {"kind": "heading", "text": "Results"},
                {"kind": "paragraph", "text": "Widths grew with power."},
                {"kind": "table-caption", "text": "Table 1: measured widths."},
                {"kind": "table", "text": "P | W\n1 | 2"},
                {"kind": "heading", "text": "Conclusions"},
                {"kind": "paragraph", "text": "Width tracks power nearly linearly."},
            ],
        })
        .to_string();
        let out = ingest_document(&raw, DEFAULT_CHUNK_BUDGET, DEFAULT_ASSOCIATION_WINDOW).unwrap();
        let table_chunk = out.chunks.iter().find(|c| c.kind == ChunkKind::Table && c.body.contains("P | W")).unwrap();
        let prompt = summary_prompt(table_chunk, &out.context);
        assert!(prompt.contains("Laser deposition geometry study"));
        assert!(prompt.contains("We study bead geometry under varied power."));
        assert!(prompt.contains("Width tracks power nearly linearly."));
        assert!(prompt.contains("Table 1: measured widths."));
        assert!(prompt.contains("Widths grew with power."));
        assert!(prompt.contains("P | W"));
    }

    #[tokio::test]
    async fn test_summarize_chunk_prompt_reaches_backend() {
        let mock = MockBackend::with_defaults(MockScript::echoing());
        let raw = serde_json::json!({
            "doc_id": "doc1",
            "title": "Laser deposition geometry study",
            "elements": [
                {"kind": "heading", "text": "Abstract"},
                {"kind": "paragraph", "text": "We study bead geometry under varied power."},
                {"kind": "heading", "text": "Conclusions"},
                {"kind": "paragraph", "text": "Width tracks power nearly linearly."},
            ],
        })
        .to_string();
        let out = ingest_document(&raw, DEFAULT_CHUNK_BUDGET, DEFAULT_ASSOCIATION_WINDOW).unwrap();
        let summary = summarize_chunk(&out.chunks[0], &out.context, &mock).await.unwrap();
        assert!(summary.contains("We study bead geometry under varied power."));
        assert!(summary.contains("Width tracks power nearly linearly."));
    }

    #[tokio::test]
    async fn test_summarize_empty_completion_is_degenerate() {
        let script = MockScript {
            replies: vec![ReplyRule {
                match_kind: MatchKind::Substring,
                pattern: "Summarize the excerpt".into(),
                reply: "   ".into(),
                delay_ms: 0,
                fail_times: 0,
                fail_kind: None,
            }],
            ..MockScript::empty()
        };
        let mock = MockBackend::with_defaults(script);
        let chunk = Chunk {
            chunk_id: "doc1-0000".into(),
            doc_id: "doc1".into(),
            kind: ChunkKind::Text,
            body: "Some body.".into(),
            attached_caption: None,
            nearby_paragraph: None,
            element_indices: vec![0],
            approx_size: 2,
        };
        let err = summarize_chunk(&chunk, &context(), &mock).await.unwrap_err();
        assert!(matches!(err, KbError::DegenerateOutput));
    }

    fn five_chunk_doc() -> String {
        serde_json::json!({
            "doc_id": "docA",
            "title": "Document A",
            "elements": [
                {"kind": "heading", "text": "Abstract"},
                {"kind": "paragraph", "text": "Overview of the study."},
                {"kind": "heading", "text": "Methods"},
                {"kind": "paragraph", "text": "We measured widths optically."},
                {"kind": "table-caption", "text": "Table 1: ranges."},
                {"kind": "table", "text": "w | ok\n4 | yes"},
                {"kind": "heading", "text": "Conclusions"},
                {"kind": "paragraph", "text": "Ranges hold across power."},
            ],
        })
        .to_string()
    }

    #[tokio::test]
    async fn test_build_database_one_entry_per_chunk() {
        let mock = MockBackend::with_defaults(MockScript::echoing());
        let out = ingest_document(&five_chunk_doc(), 512, 2).unwrap();
        assert_eq!(out.chunks.len(), 5);
        let mut contexts = BTreeMap::new();
        contexts.insert("docA".to_string(), out.context.clone());
        let (db, failures) = build_database(&out.chunks, &contexts, &mock).await.unwrap();
        assert!(failures.is_empty());
        assert_eq!(db.len(), 5);
        assert_eq!(db.dim, 1024);
        assert!(db.entries.iter().all(|e| e.context_title == "Document A"));
        assert!(db.entries.iter().all(|e| e.backend_id == "mock"));
        let ids: Vec<&str> = db.entries.iter().map(|e| e.entry_id.as_str()).collect();
        let chunk_ids: Vec<&str> = out.chunks.iter().map(|c| c.chunk_id.as_str()).collect();
        assert_eq!(ids, chunk_ids, "entries stay in chunk order");
    }

    #[tokio::test]
    async fn test_build_database_pools_documents() {
        let mock = MockBackend::with_defaults(MockScript::echoing());
        let doc_b = serde_json::json!({
            "doc_id": "docB",
            "title": "Document B",
            "elements": [
                {"kind": "paragraph", "text": "Independent corpus text."},
            ],
        })
        .to_string();
        let out_a = ingest_document(&five_chunk_doc(), 512, 2).unwrap();
        let out_b = ingest_document(&doc_b, 512, 2).unwrap();
        let mut chunks = out_a.chunks.clone();
        chunks.extend(out_b.chunks.clone());
        let mut contexts = BTreeMap::new();
        contexts.insert("docA".to_string(), out_a.context.clone());
        contexts.insert("docB".to_string(), out_b.context.clone());
        let (db, failures) = build_database(&chunks, &contexts, &mock).await.unwrap();
        assert!(failures.is_empty());
        assert_eq!(db.len(), 6);
        let b_entry = db.entries.iter().find(|e| e.doc_id == "docB").unwrap();
        assert_eq!(b_entry.context_title, "Document B");
    }

    #[tokio::test]
    async fn test_build_database_skips_failing_chunk() {
        // The pattern must hit exactly one prompt, so it has to be text
        // that neither the document context nor any nearby-paragraph
        // enrichment replicates into other chunks: the table body.
        let script = MockScript {
            replies: vec![ReplyRule {
                match_kind: MatchKind::Substring,
                pattern: "4 | yes".into(),
                reply: "never delivered".into(),
                delay_ms: 0,
                fail_times: 10,
                fail_kind: Some(crate::backend::mock::FailKind::Http500),
            }],
            echo_unmatched: true,
            ..MockScript::empty()
        };
        let mock = MockBackend::with_defaults(script);
        let out = ingest_document(&five_chunk_doc(), 512, 2).unwrap();
        let mut contexts = BTreeMap::new();
        contexts.insert("docA".to_string(), out.context.clone());
        let (db, failures) = build_database(&out.chunks, &contexts, &mock).await.unwrap();
        assert_eq!(db.len(), 4);
        assert_eq!(failures.len(), 1);
        assert!(failures[0].error.contains("500"));
    }

    #[tokio::test]
    async fn test_build_database_all_failed_is_error() {
        let script = MockScript {
            replies: vec![ReplyRule {
                match_kind: MatchKind::Substring,
                pattern: "Summarize".into(),
                reply: "never".into(),
                delay_ms: 0,
                fail_times: u32::MAX,
                fail_kind: Some(crate::backend::mock::FailKind::Transport),
            }],
            ..MockScript::empty()
        };
        let mock = MockBackend::with_defaults(script);
        let out = ingest_document(&five_chunk_doc(), 512, 2).unwrap();
        let mut contexts = BTreeMap::new();
        contexts.insert("docA".to_string(), out.context.clone());
        let err = build_database(&out.chunks, &contexts, &mock).await.unwrap_err();
        assert!(matches!(err, KbError::AllChunksFailed { failed: 5 }));
    }

    #[tokio::test]
    async fn test_retrieve_exact_match_first() {
        let mock = MockBackend::with_defaults(MockScript::empty());
        let texts = ["alpha summary", "beta summary", "gamma summary"];
        let mut entries = Vec::new();
        for (i, text) in texts.iter().enumerate() {
            let mut e = entry(&format!("e{i}"), &[0.0]);
            e.summary = text.to_string();
            e.embedding = mock.embed(text).await.unwrap();
            entries.push(e);
        }
        let db = KnowledgeDatabase::new(entries, 1024).unwrap();
        let hits = retrieve(&db, "beta summary", 3, &mock).await.unwrap();
        assert_eq!(hits[0].entry.entry_id, "e1");
        assert!((hits[0].similarity - 1.0).abs() < 1e-9);
    }

    #[tokio::test]
    async fn test_retrieve_clamps_to_database_size() {
        let mock = MockBackend::with_defaults(MockScript::empty());
        let entries = vec![
            entry("a", &[1.0, 0.0]),
            entry("b", &[0.5, 0.5]),
            entry("c", &[0.0, 1.0]),
        ];
        let db = KnowledgeDatabase::new(entries, 2).unwrap();
        let query = vector(&[1.0, 0.1]);
        let hits = rank_by_vector(&db, &query, 10).unwrap();
        assert_eq!(hits.len(), 3);
        drop(mock);
    }

    #[test]
    fn test_rank_matches_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let dim = 16;
        let entries: Vec<KnowledgeEntry> = (0..200)
            .map(|i| {
                let values: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                entry(&format!("e{i:03}"), &values)
            })
            .collect();
        let db = KnowledgeDatabase::new(entries, dim).unwrap();
        let query = vector(&(0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());

        let hits = rank_by_vector(&db, &query, 5).unwrap();

        // Brute-force oracle: compute everything, full sort, same tie rule.
        let mut oracle: Vec<(String, f64)> = db
            .entries
            .iter()
            .map(|e| (e.entry_id.clone(), cosine_similarity(&query, &e.embedding).unwrap()))
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (hit, (oracle_id, oracle_sim)) in hits.iter().zip(oracle.iter()) {
            assert_eq!(&hit.entry.entry_id, oracle_id);
            assert_eq!(hit.similarity, *oracle_sim);
        }
    }

    #[test]
    fn test_rank_ties_break_by_entry_id() {
        let shared = [0.6, 0.8];
        let entries = vec![
            entry("zeta", &shared),
            entry("alpha", &shared),
            entry("mid", &[0.0, 1.0]),
        ];
        let db = KnowledgeDatabase::new(entries, 2).unwrap();
        let hits = rank_by_vector(&db, &vector(&[0.6, 0.8]), 3).unwrap();
        assert_eq!(hits[0].entry.entry_id, "alpha");
        assert_eq!(hits[1].entry.entry_id, "zeta");
        assert_eq!(hits[2].entry.entry_id, "mid");
    }

    #[test]
    fn test_rank_empty_database_is_error() {
        let db = KnowledgeDatabase { entries: Vec::new(), dim: 2, created_at: String::new() };
        assert!(matches!(
            rank_by_vector(&db, &vector(&[1.0, 0.0]), 5),
            Err(KbError::EmptyDatabase)
        ));
    }

    #[test]
    fn test_database_constructor_enforces_invariants() {
        let dup = vec![entry("same", &[1.0]), entry("same", &[0.5])];
        assert!(matches!(
            KnowledgeDatabase::new(dup, 1),
            Err(KbError::DuplicateEntryId(id)) if id == "same"
        ));
        let mixed = vec![entry("a", &[1.0]), entry("b", &[1.0, 0.0])];
        assert!(matches!(
            KnowledgeDatabase::new(mixed, 1),
            Err(KbError::DimensionMismatch { .. })
        ));
        let degenerate = vec![entry("a", &[0.0, 0.0])];
        assert!(matches!(
            KnowledgeDatabase::new(degenerate, 2),
            Err(KbError::DegenerateVector)
        ));
    }

    #[test]
    fn test_save_load_round_trip() {
        let entries = vec![
            entry("a", &[0.1234567890123456, -0.9876543210987654]),
            entry("b", &[1.0 / 3.0, 2.0 / 7.0]),
            entry("c", &[f64::MIN_POSITIVE, 1.0]),
        ];
        let db = KnowledgeDatabase::new(entries, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        save_database(&db, &path).unwrap();
        let loaded = load_database(&path).unwrap();
        assert_eq!(db, loaded, "round-trip must be exact, including every f64 bit");

        // Ranking is preserved for an arbitrary query.
        let query = vector(&[0.3, 0.4]);
        let before: Vec<String> = rank_by_vector(&db, &query, 3)
            .unwrap()
            .iter()
            .map(|h| h.entry.entry_id.clone())
            .collect();
        let after: Vec<String> = rank_by_vector(&loaded, &query, 3)
            .unwrap()
            .iter()
            .map(|h| h.entry.entry_id.clone())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn test_load_truncated_line_cites_line_number() {
        let db = KnowledgeDatabase::new(vec![entry("a", &[1.0]), entry("b", &[0.5])], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        save_database(&db, &path).unwrap();
        let raw = std::fs::read_to_string(&path).unwrap();
        let truncated: String = raw[..raw.len() - 20].to_string();
        std::fs::write(&path, truncated).unwrap();
        match load_database(&path) {
            Err(KbError::Load { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn test_load_mixed_dims_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        let good = serde_json::to_string(&entry("a", &[1.0, 0.0])).unwrap();
        let bad = serde_json::to_string(&entry("b", &[1.0])).unwrap();
        std::fs::write(
            &path,
            format!("{{\"dim\":2,\"created_at\":\"t\"}}\n{good}\n{bad}\n"),
        )
        .unwrap();
        match load_database(&path) {
            Err(KbError::Load { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("dim"));
            }
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn test_fingerprint_ignores_created_at_only() {
        let entries = vec![entry("a", &[1.0, 0.0])];
        let mut db1 = KnowledgeDatabase::new(entries.clone(), 2).unwrap();
        let mut db2 = KnowledgeDatabase::new(entries, 2).unwrap();
        db1.created_at = "2026-01-01T00:00:00Z".into();
        db2.created_at = "2026-02-02T00:00:00Z".into();
        assert_eq!(db1.fingerprint(), db2.fingerprint());

        let other = KnowledgeDatabase::new(vec![entry("a", &[0.9, 0.1])], 2).unwrap();
        assert_ne!(db1.fingerprint(), other.fingerprint());
    }
}
