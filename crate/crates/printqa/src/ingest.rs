//! Document ingestion: turn pre-extracted article elements into
//! context-enriched, semantically coherent chunks ready for summarization.
//!
//! The input is an element file produced by an upstream extraction tool
//! (PDF segmentation is out of scope here): a JSON document listing ordered
//! elements with a kind, text, and optional section path. Segmentation is a
//! greedy, heading-aware rule over those elements; figures and tables become
//! their own chunks and are enriched with nearby captions and paragraphs.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default chunk budget in whitespace-delimited tokens.
pub const DEFAULT_CHUNK_BUDGET: usize = 512;

/// Default association window (in element positions) for caption/paragraph
/// enrichment of figure and table chunks.
pub const DEFAULT_ASSOCIATION_WINDOW: usize = 2;

/// Errors from parsing or segmenting a document.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed element file: {0}")]
    Malformed(String),
    #[error("element {index}: {problem}")]
    Element { index: usize, problem: String },
    #[error("document contains no elements")]
    EmptyDocument,
    #[error("document id must be non-empty")]
    EmptyDocId,
    #[error("document title must be non-empty")]
    EmptyTitle,
    #[error("chunk budget must be at least 1")]
    InvalidBudget,
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Kind of a source document element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementKind {
    Heading,
    Paragraph,
    FigureCaption,
    Table,
    TableCaption,
}

impl ElementKind {
    /// True for the caption kinds used by non-text enrichment.
    pub fn is_caption(self) -> bool {
        matches!(self, ElementKind::FigureCaption | ElementKind::TableCaption)
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ElementKind::Heading => "heading",
            ElementKind::Paragraph => "paragraph",
            ElementKind::FigureCaption => "figure-caption",
            ElementKind::Table => "table",
            ElementKind::TableCaption => "table-caption",
        };
        f.write_str(s)
    }
}

/// One ordered element of a source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentElement {
    /// Ordinal position, 0-based, contiguous within the document.
    pub index: usize,
    pub kind: ElementKind,
    pub text: String,
    /// Titles of the enclosing headings, outermost first.
    pub section_path: Vec<String>,
}

/// A parsed source document: ordered elements plus identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub title: String,
    pub elements: Vec<DocumentElement>,
}

/// Skimming context extracted from a document: title, abstract, conclusion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentContext {
    pub title: String,
    pub abstract_text: String,
    pub conclusion_text: String,
}

/// Non-fatal issues noticed while extracting context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextWarning {
    MissingAbstract,
    MissingConclusion,
}

impl fmt::Display for ContextWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextWarning::MissingAbstract => f.write_str("document has no abstract section"),
            ContextWarning::MissingConclusion => f.write_str("document has no conclusion section"),
        }
    }
}

/// Kind of an output chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkKind {
    Text,
    Figure,
    Table,
}

/// A semantically coherent slice of a document, the unit of summarization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    /// `doc_id` plus a zero-padded ordinal, unique within the corpus.
    pub chunk_id: String,
    pub doc_id: String,
    pub kind: ChunkKind,
    pub body: String,
    /// Nearest caption for figure/table chunks, filled by [`enrich_nontext`].
    pub attached_caption: Option<String>,
    /// Nearest preceding paragraph for figure/table chunks.
    pub nearby_paragraph: Option<String>,
    /// Source element indices covered by this chunk, sorted ascending.
    pub element_indices: Vec<usize>,
    /// Whitespace-token count of `body`.
    pub approx_size: usize,
}

impl Chunk {
    pub fn first_index(&self) -> usize {
        *self.element_indices.first().expect("chunk covers at least one element")
    }
}

/// Count of whitespace-delimited tokens. This is deliberately not a model
/// tokenizer: it is deterministic and backend-independent, and real token
/// limits are the backend's concern.
pub fn approx_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Deserialize)]
struct RawDocument {
    doc_id: String,
    title: String,
    elements: Vec<RawElement>,
}

#[derive(Debug, Deserialize)]
struct RawElement {
    kind: ElementKind,
    text: String,
    #[serde(default)]
    section_path: Vec<String>,
}

/// Parse a document-elements file into a [`SourceDocument`].
///
/// Element order in the input array is authoritative; indices are assigned
/// contiguously from 0. When an element does not carry a `section_path`, one
/// is derived from the heading sequence: every element after a heading
/// belongs to that heading's section until the next heading. An explicit
/// `section_path` from the upstream extractor is preserved verbatim.
pub fn parse_document(raw: &str) -> Result<SourceDocument, IngestError> {
    let parsed: RawDocument = serde_json::from_str(raw)
        .map_err(|e| IngestError::Malformed(format!("line {}: {}", e.line(), e)))?;
    if parsed.doc_id.trim().is_empty() {
        return Err(IngestError::EmptyDocId);
    }
    if parsed.title.trim().is_empty() {
        return Err(IngestError::EmptyTitle);
    }
    if parsed.elements.is_empty() {
        return Err(IngestError::EmptyDocument);
    }

    let mut elements = Vec::with_capacity(parsed.elements.len());
    let mut current_heading: Option<String> = None;
    for (index, raw_el) in parsed.elements.into_iter().enumerate() {
        if raw_el.text.trim().is_empty() {
            return Err(IngestError::Element {
                index,
                problem: "text is empty after whitespace trim".into(),
            });
        }
        let section_path = if !raw_el.section_path.is_empty() {
            raw_el.section_path
        } else if raw_el.kind == ElementKind::Heading {
            Vec::new()
        } else {
            current_heading.iter().cloned().collect()
        };
        if raw_el.kind == ElementKind::Heading {
            current_heading = Some(raw_el.text.trim().to_string());
        }
        elements.push(DocumentElement {
            index,
            kind: raw_el.kind,
            text: raw_el.text,
            section_path,
        });
    }

    Ok(SourceDocument {
        doc_id: parsed.doc_id,
        title: parsed.title,
        elements,
    })
}

fn heading_matches(title: &str, prefix: &str) -> bool {
    let title = title.trim().to_lowercase();
    // Numbered headings ("7. Conclusions", "2.1 Results") match on the part
    // after the enumerator.
    let body = match title.split_once(char::is_whitespace) {
        Some((first, rest)) if first.chars().all(|c| c.is_ascii_digit() || c == '.') => rest,
        _ => &title,
    };
    body.trim_start().starts_with(prefix)
}

/// Collect the paragraph texts under the first heading matching `prefix`
/// (case-insensitive prefix match), stopping at the next heading.
fn section_paragraphs(doc: &SourceDocument, prefix: &str) -> Option<String> {
    let start = doc
        .elements
        .iter()
        .position(|e| e.kind == ElementKind::Heading && heading_matches(&e.text, prefix))?;
    let mut parts = Vec::new();
    for element in &doc.elements[start + 1..] {
        match element.kind {
            ElementKind::Heading => break,
            ElementKind::Paragraph => parts.push(element.text.as_str()),
            _ => {}
        }
    }
    if parts.is_empty() {
        None
    } else {
        Some(parts.join("\n\n"))
    }
}

/// Fallback for documents without an explicit heading: paragraphs whose
/// section path already names the section (document-level elements from the
/// upstream extractor).
fn pathed_paragraphs(doc: &SourceDocument, prefix: &str) -> Option<String> {
    let parts: Vec<&str> = doc
        .elements
        .iter()
        .filter(|e| {
            e.kind == ElementKind::Paragraph
                && e.section_path.last().is_some_and(|s| heading_matches(s, prefix))
        })
        .map(|e| e.text.as_str())
        .collect();
    if parts.is_empty() {
        None
    } else {
        Some(parts.join("\n\n"))
    }
}

/// Extract the title/abstract/conclusion skimming context.
///
/// Missing sections yield empty fields plus a warning rather than an error.
pub fn extract_context(doc: &SourceDocument) -> (DocumentContext, Vec<ContextWarning>) {
    let mut warnings = Vec::new();
    let abstract_text = section_paragraphs(doc, "abstract")
        .or_else(|| pathed_paragraphs(doc, "abstract"))
        .unwrap_or_default();
    if abstract_text.is_empty() {
        warnings.push(ContextWarning::MissingAbstract);
    }
    let conclusion_text = section_paragraphs(doc, "conclusion")
        .or_else(|| pathed_paragraphs(doc, "conclusion"))
        .unwrap_or_default();
    if conclusion_text.is_empty() {
        warnings.push(ContextWarning::MissingConclusion);
    }
    (
        DocumentContext {
            title: doc.title.clone(),
            abstract_text,
            conclusion_text,
        },
        warnings,
    )
}

struct ChunkAccumulator<'a> {
    doc: &'a SourceDocument,
    chunks: Vec<Chunk>,
    pending: Vec<&'a DocumentElement>,
    pending_tokens: usize,
}

impl<'a> ChunkAccumulator<'a> {
    fn new(doc: &'a SourceDocument) -> Self {
        Self {
            doc,
            chunks: Vec::new(),
            pending: Vec::new(),
            pending_tokens: 0,
        }
    }

    fn flush(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let body = self
            .pending
            .iter()
            .map(|e| e.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n");
        let element_indices = self.pending.iter().map(|e| e.index).collect();
        self.push_chunk(ChunkKind::Text, body, element_indices);
        self.pending.clear();
        self.pending_tokens = 0;
    }

    fn push_single(&mut self, kind: ChunkKind, element: &DocumentElement) {
        self.push_chunk(kind, element.text.clone(), vec![element.index]);
    }

    fn push_chunk(&mut self, kind: ChunkKind, body: String, element_indices: Vec<usize>) {
        let approx_size = approx_token_count(&body);
        let chunk_id = format!("{}-{:04}", self.doc.doc_id, self.chunks.len());
        self.chunks.push(Chunk {
            chunk_id,
            doc_id: self.doc.doc_id.clone(),
            kind,
            body,
            attached_caption: None,
            nearby_paragraph: None,
            element_indices,
            approx_size,
        });
    }

    /// Section path the pending accumulation belongs to: that of its last
    /// paragraph, or of the seeding heading while no paragraph arrived yet.
    fn pending_path(&self) -> Option<&[String]> {
        self.pending.last().map(|e| {
            if e.kind == ElementKind::Paragraph {
                e.section_path.as_slice()
            } else {
                // Heading seed: following paragraphs live in its section.
                e.section_path.as_slice()
            }
        })
    }
}

/// Cut a document into chunks with a greedy, heading-aware rule.
///
/// Consecutive paragraphs within one section accumulate until adding the
/// next would exceed `budget` whitespace tokens; a heading always starts a
/// new chunk (and is included in it); every figure-caption, table, and
/// table-caption element becomes its own chunk. A single element larger
/// than the budget still forms one chunk — elements are indivisible.
pub fn segment(doc: &SourceDocument, budget: usize) -> Result<Vec<Chunk>, IngestError> {
    if budget == 0 {
        return Err(IngestError::InvalidBudget);
    }
    let mut acc = ChunkAccumulator::new(doc);
    for element in &doc.elements {
        match element.kind {
            ElementKind::Heading => {
                acc.flush();
                acc.pending_tokens = approx_token_count(&element.text);
                acc.pending.push(element);
            }
            ElementKind::Paragraph => {
                let tokens = approx_token_count(&element.text);
                let same_section = match acc.pending_path() {
                    // A heading seed carries its own (enclosing) path; the
                    // paragraphs that follow it extend the chunk.
                    Some(_) if acc.pending.last().is_some_and(|e| e.kind == ElementKind::Heading) => true,
                    Some(path) => path == element.section_path.as_slice(),
                    None => true,
                };
                let fits = acc.pending.is_empty() || acc.pending_tokens + tokens <= budget;
                if !same_section || !fits {
                    acc.flush();
                }
                acc.pending_tokens += tokens;
                acc.pending.push(element);
            }
            ElementKind::FigureCaption => {
                acc.flush();
                acc.push_single(ChunkKind::Figure, element);
            }
            ElementKind::Table | ElementKind::TableCaption => {
                acc.flush();
                acc.push_single(ChunkKind::Table, element);
            }
        }
    }
    acc.flush();
    Ok(acc.chunks)
}

/// Attach the nearest caption and preceding paragraph to a figure/table
/// chunk. Text chunks are returned unchanged. Idempotent: the associations
/// are recomputed from the source document every time.
pub fn enrich_nontext(chunk: Chunk, doc: &SourceDocument, window: usize) -> Chunk {
    if chunk.kind == ChunkKind::Text {
        return chunk;
    }
    let own: BTreeSet<usize> = chunk.element_indices.iter().copied().collect();
    let anchor = chunk.first_index();
    let anchor_path = doc
        .elements
        .get(anchor)
        .map(|e| e.section_path.as_slice())
        .unwrap_or(&[]);

    // Nearest caption within ±window sharing the section path, excluding the
    // chunk's own elements; ties prefer the preceding element.
    let mut attached_caption = None;
    let mut best_distance = usize::MAX;
    for element in &doc.elements {
        if own.contains(&element.index) || !element.kind.is_caption() {
            continue;
        }
        if element.section_path.as_slice() != anchor_path {
            continue;
        }
        let distance = element.index.abs_diff(anchor);
        if distance <= window && (distance < best_distance
            || (distance == best_distance && element.index < anchor))
        {
            best_distance = distance;
            attached_caption = Some(element.text.clone());
        }
    }

    // Nearest preceding paragraph within the window.
    let nearby_paragraph = doc.elements[..anchor]
        .iter()
        .rev()
        .take(window)
        .find(|e| e.kind == ElementKind::Paragraph)
        .map(|e| e.text.clone());

    Chunk {
        attached_caption,
        nearby_paragraph,
        ..chunk
    }
}

/// Output of the full ingest pipeline for one document.
#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub document: SourceDocument,
    pub context: DocumentContext,
    pub warnings: Vec<ContextWarning>,
    pub chunks: Vec<Chunk>,
}

/// Parse, extract context, segment, and enrich in one call.
pub fn ingest_document(raw: &str, budget: usize, window: usize) -> Result<IngestOutput, IngestError> {
    let document = parse_document(raw)?;
    let (context, warnings) = extract_context(&document);
    let chunks = segment(&document, budget)?
        .into_iter()
        .map(|c| enrich_nontext(c, &document, window))
        .collect();
    Ok(IngestOutput {
        document,
        context,
        warnings,
        chunks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc_json(elements: &[(&str, &str)]) -> String {
        let elements: Vec<serde_json::Value> = elements
            .iter()
            .map(|(kind, text)| serde_json::json!({"kind": kind, "text": text}))
            .collect();
        serde_json::json!({
            "doc_id": "doc1",
            "title": "Test document",
            "elements": elements,
        })
        .to_string()
    }

    fn words(n: usize, tag: &str) -> String {
        (0..n).map(|i| format!("{tag}{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn test_parse_heading_and_paragraphs() {
        let raw = doc_json(&[
            ("heading", "Methods"),
            ("paragraph", "First paragraph."),
            ("paragraph", "Second paragraph."),
        ]);
        let doc = parse_document(&raw).unwrap();
        assert_eq!(doc.elements.len(), 3);
        assert_eq!(doc.elements[0].section_path, Vec::<String>::new());
        assert_eq!(doc.elements[1].section_path, vec!["Methods"]);
        assert_eq!(doc.elements[2].section_path, vec!["Methods"]);
        assert_eq!(
            doc.elements.iter().map(|e| e.index).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn test_parse_empty_text_rejected() {
        let raw = doc_json(&[("heading", "Methods"), ("paragraph", "   ")]);
        let err = parse_document(&raw).unwrap_err();
        match err {
            IngestError::Element { index, .. } => assert_eq!(index, 1),
            other => panic!("expected element error, got {other}"),
        }
    }

    #[test]
    fn test_parse_empty_document_rejected() {
        let raw = r#"{"doc_id": "d", "title": "t", "elements": []}"#;
        assert!(matches!(parse_document(raw), Err(IngestError::EmptyDocument)));
    }

    #[test]
    fn test_parse_malformed_names_line() {
        let raw = "{\n  \"doc_id\": \"d\",\n  broken\n}";
        match parse_document(raw) {
            Err(IngestError::Malformed(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn test_parse_preserves_explicit_section_path() {
        let raw = serde_json::json!({
            "doc_id": "d",
            "title": "t",
            "elements": [
                {"kind": "heading", "text": "Results"},
                {"kind": "paragraph", "text": "p", "section_path": ["Results", "Subsection"]},
            ],
        })
        .to_string();
        let doc = parse_document(&raw).unwrap();
        assert_eq!(doc.elements[1].section_path, vec!["Results", "Subsection"]);
    }

    #[test]
    fn test_extract_context_both_sections() {
        let raw = doc_json(&[
            ("heading", "Abstract"),
            ("paragraph", "The abstract text."),
            ("heading", "Methods"),
            ("paragraph", "Method text."),
            ("heading", "Conclusion"),
            ("paragraph", "The conclusion text."),
        ]);
        let doc = parse_document(&raw).unwrap();
        let (ctx, warnings) = extract_context(&doc);
        assert_eq!(ctx.title, "Test document");
        assert_eq!(ctx.abstract_text, "The abstract text.");
        assert_eq!(ctx.conclusion_text, "The conclusion text.");
        assert!(warnings.is_empty());
    }

    #[test]
    fn test_extract_context_missing_conclusion_warns() {
        let raw = doc_json(&[("heading", "Abstract"), ("paragraph", "A.")]);
        let doc = parse_document(&raw).unwrap();
        let (ctx, warnings) = extract_context(&doc);
        assert_eq!(ctx.conclusion_text, "");
        assert_eq!(warnings, vec![ContextWarning::MissingConclusion]);
    }

    #[test]
    fn test_extract_context_conclusions_plural_matches() {
        let raw = doc_json(&[("heading", "Conclusions"), ("paragraph", "Done.")]);
        let doc = parse_document(&raw).unwrap();
        let (ctx, _) = extract_context(&doc);
        assert_eq!(ctx.conclusion_text, "Done.");
    }

    #[test]
    fn test_extract_context_numbered_headings_match() {
        let raw = doc_json(&[
            ("heading", "7. Conclusions"),
            ("paragraph", "Numbered done."),
            ("heading", "7.1 Outlook"),
            ("paragraph", "Later."),
        ]);
        let doc = parse_document(&raw).unwrap();
        let (ctx, warnings) = extract_context(&doc);
        assert_eq!(ctx.conclusion_text, "Numbered done.");
        assert_eq!(warnings, vec![ContextWarning::MissingAbstract]);
        // An enumerator alone never matches, and a word starting with the
        // prefix letters does not turn a different heading into a section.
        let raw = doc_json(&[("heading", "316L Conclusionless"), ("paragraph", "X.")]);
        let doc = parse_document(&raw).unwrap();
        let (_, warnings) = extract_context(&doc);
        assert_eq!(
            warnings,
            vec![ContextWarning::MissingAbstract, ContextWarning::MissingConclusion]
        );
    }

    #[test]
    fn test_segment_single_small_paragraph() {
        let raw = doc_json(&[("paragraph", &words(50, "w"))]);
        let doc = parse_document(&raw).unwrap();
        let chunks = segment(&doc, 512).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].approx_size, 50);
    }

    #[test]
    fn test_segment_greedy_rule_three_paragraphs() {
        // Three 300-token paragraphs against a 512 budget: p1 alone (p1+p2
        // would be 600), then p2 alone, then p3 — three chunks.
        let p = words(300, "a");
        let raw = doc_json(&[
            ("paragraph", &p),
            ("paragraph", &p),
            ("paragraph", &p),
        ]);
        let doc = parse_document(&raw).unwrap();
        let chunks = segment(&doc, 512).unwrap();
        assert_eq!(chunks.len(), 3);
        for chunk in &chunks {
            assert_eq!(chunk.approx_size, 300);
            assert_eq!(chunk.element_indices.len(), 1);
        }
    }

    #[test]
    fn test_segment_accumulates_within_budget() {
        let p = words(100, "b");
        let raw = doc_json(&[("paragraph", &p), ("paragraph", &p), ("paragraph", &p)]);
        let doc = parse_document(&raw).unwrap();
        let chunks = segment(&doc, 512).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].element_indices, vec![0, 1, 2]);
        assert_eq!(chunks[0].approx_size, 300);
    }

    #[test]
    fn test_segment_heading_starts_new_chunk() {
        let raw = doc_json(&[
            ("paragraph", "Intro text here."),
            ("heading", "Methods"),
            ("paragraph", "Method text here."),
        ]);
        let doc = parse_document(&raw).unwrap();
        let chunks = segment(&doc, 512).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].element_indices, vec![0]);
        assert_eq!(chunks[1].element_indices, vec![1, 2]);
        assert!(chunks[1].body.starts_with("Methods"));
    }

    #[test]
    fn test_segment_table_is_own_chunk() {
        let raw = doc_json(&[
            ("paragraph", "Before."),
            ("table", "w | h\n1 | 2"),
            ("paragraph", "After."),
        ]);
        let doc = parse_document(&raw).unwrap();
        let chunks = segment(&doc, 512).unwrap();
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks[1].kind, ChunkKind::Table);
        assert_eq!(chunks[1].element_indices, vec![1]);
    }

    #[test]
    fn test_segment_oversized_single_element_kept() {
        let raw = doc_json(&[("paragraph", &words(700, "c"))]);
        let doc = parse_document(&raw).unwrap();
        let chunks = segment(&doc, 512).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].approx_size, 700);
    }

    #[test]
    fn test_segment_zero_budget_rejected() {
        let raw = doc_json(&[("paragraph", "x")]);
        let doc = parse_document(&raw).unwrap();
        assert!(matches!(segment(&doc, 0), Err(IngestError::InvalidBudget)));
    }

    #[test]
    fn test_segment_partition_and_order() {
        let raw = doc_json(&[
            ("heading", "A"),
            ("paragraph", &words(200, "p")),
            ("paragraph", &words(400, "q")),
            ("figure-caption", "Figure 1: geometry."),
            ("heading", "B"),
            ("table-caption", "Table 1: parameters."),
            ("table", "a | b"),
            ("paragraph", &words(10, "r")),
        ]);
        let doc = parse_document(&raw).unwrap();
        let chunks = segment(&doc, 512).unwrap();
        let mut seen = Vec::new();
        for chunk in &chunks {
            seen.extend(chunk.element_indices.iter().copied());
        }
        assert_eq!(seen, (0..doc.elements.len()).collect::<Vec<_>>());
        for pair in chunks.windows(2) {
            let max_a = *pair[0].element_indices.last().unwrap();
            let min_b = pair[1].first_index();
            assert!(max_a < min_b);
        }
    }

    #[test]
    fn test_enrich_adjacent_caption() {
        let raw = doc_json(&[
            ("heading", "Results"),
            ("paragraph", "Discussion of the table."),
            ("table-caption", "Table 1: widths."),
            ("table", "w\n5.0"),
        ]);
        let doc = parse_document(&raw).unwrap();
        let chunks = segment(&doc, 512).unwrap();
        let table = chunks
            .iter()
            .find(|c| c.element_indices == vec![3])
            .unwrap()
            .clone();
        let enriched = enrich_nontext(table, &doc, 2);
        assert_eq!(enriched.attached_caption.as_deref(), Some("Table 1: widths."));
        assert_eq!(
            enriched.nearby_paragraph.as_deref(),
            Some("Discussion of the table.")
        );
    }

    #[test]
    fn test_enrich_no_paragraph_in_window() {
        let raw = doc_json(&[
            ("paragraph", "Far away."),
            ("table-caption", "Table 2: heights."),
            ("table", "h\n2.0"),
            ("figure-caption", "Figure 3: cross-section."),
        ]);
        let doc = parse_document(&raw).unwrap();
        let chunks = segment(&doc, 512).unwrap();
        let figure = chunks.last().unwrap().clone();
        assert_eq!(figure.kind, ChunkKind::Figure);
        // Window 2 looks back to indices 1 and 2 only; the paragraph at 0 is
        // out of reach.
        let enriched = enrich_nontext(figure, &doc, 2);
        assert_eq!(enriched.nearby_paragraph, None);
    }

    #[test]
    fn test_enrich_caption_beyond_window_not_associated() {
        let raw = doc_json(&[
            ("table-caption", "Table 3: areas."),
            ("paragraph", "One."),
            ("paragraph", "Two."),
            ("table", "a\n9.9"),
        ]);
        let doc = parse_document(&raw).unwrap();
        let chunks = segment(&doc, 512).unwrap();
        let table = chunks.last().unwrap().clone();
        assert_eq!(table.kind, ChunkKind::Table);
        // Caption sits at distance 3; window 2 must not associate it.
        let enriched = enrich_nontext(table.clone(), &doc, 2);
        assert_eq!(enriched.attached_caption, None);
        // Window 3 does.
        let enriched = enrich_nontext(table, &doc, 3);
        assert_eq!(enriched.attached_caption.as_deref(), Some("Table 3: areas."));
    }

    #[test]
    fn test_enrich_text_chunk_unchanged() {
        let raw = doc_json(&[("paragraph", "Body."), ("table", "t")]);
        let doc = parse_document(&raw).unwrap();
        let chunks = segment(&doc, 512).unwrap();
        let text = chunks[0].clone();
        let enriched = enrich_nontext(text.clone(), &doc, 2);
        assert_eq!(enriched, text);
    }

    #[test]
    fn test_enrich_idempotent() {
        let raw = doc_json(&[
            ("paragraph", "Near paragraph."),
            ("table-caption", "Table 4: ratios."),
            ("table", "r\n0.5"),
        ]);
        let doc = parse_document(&raw).unwrap();
        let chunks = segment(&doc, 512).unwrap();
        let table = chunks.last().unwrap().clone();
        let once = enrich_nontext(table, &doc, 2);
        let twice = enrich_nontext(once.clone(), &doc, 2);
        assert_eq!(once, twice);
    }

    #[test]
    fn test_ingest_document_deterministic() {
        let raw = doc_json(&[
            ("heading", "Abstract"),
            ("paragraph", "Summary."),
            ("heading", "Data"),
            ("table-caption", "Table 1: data."),
            ("table", "x\n1"),
        ]);
        let a = ingest_document(&raw, 512, 2).unwrap();
        let b = ingest_document(&raw, 512, 2).unwrap();
        assert_eq!(a.chunks, b.chunks);
        assert_eq!(a.context, b.context);
    }
}
