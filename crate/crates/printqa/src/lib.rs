//! Knowledge-grounded print quality assessment for additive manufacturing.
//!
//! The pipeline distills quality-assessment knowledge from journal-article
//! text into a retrievable vector knowledge base, then applies it to
//! image-based bead quality assessment through a vision-language model,
//! optionally grounding the criteria on a known-good reference image first.
//!
//! Stages, each with a matching CLI subcommand:
//!
//! 1. [`ingest`] — split pre-extracted article elements into coherent chunks.
//! 2. [`kb`] — summarize chunks in document context, embed, store, retrieve.
//! 3. [`extract`] — run the three-step query chain that distills features,
//!    measurement procedures, and good-value ranges into a brief.
//! 4. [`assess`] — build per-configuration prompt chains and run single-image
//!    assessments.
//! 5. [`eval`] — run the four-configuration ablation, collect expert
//!    annotations, and compute validity / knowledge relevance / conclusion
//!    correctness reports.
//!
//! [`backend`] provides the uniform chat + embedding contract those stages
//! call into: an HTTP client, a deterministic scripted mock, a response
//! cache, and an in-flight limiter.

pub mod assess;
pub mod backend;
#[cfg(feature = "cli")]
pub mod cli;
pub mod eval;
pub mod extract;
pub mod ingest;
pub mod kb;

pub use assess::{
    build_prompt_chain, detect_features, parse_verdict, AblationConfig, AssessmentResponse,
    FeatureVocabulary, ImageInput, ImageRole, PromptChain, Verdict,
};
pub use backend::{BackendConfig, BackendError, ChatRequest, ModelBackend};
pub use extract::{KnowledgeBrief, QueryTemplates};
pub use ingest::{segment, Chunk, DocumentContext, SourceDocument};
pub use kb::{cosine_similarity, EmbeddingVector, KnowledgeDatabase, KnowledgeEntry};
