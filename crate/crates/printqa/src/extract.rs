//! Knowledge extraction: a three-step interdependent query chain over the
//! knowledge database.
//!
//! Step 1 asks which features distinguish good and bad prints; once the
//! feature list exists, steps 2 and 3 ask, per feature, how to measure it
//! and what range counts as good. The two follow-up queries per feature
//! have no interdependency and run concurrently; results are joined by
//! feature index, so completion order never changes the output. Every
//! question is grounded in retrieved summaries from the database only.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatRequest, ChatTurn, ModelBackend};
use crate::kb::{retrieve, KbError, KnowledgeDatabase, RetrievalHit};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("template {which} invalid: {problem}")]
    TemplateInvalid { which: &'static str, problem: String },
    #[error("feature-list answer not machine-readable after reformat retry: {raw:?}")]
    FormatError { raw: String },
    #[error("backend returned no features")]
    NoFeatures,
    #[error("feature list for follow-up queries is empty")]
    EmptyFeatureInput,
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// The three human-authored query templates plus the domain label that
/// fills their `{domain}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTemplates {
    /// Must contain `{domain}` exactly once.
    pub feature_query: String,
    /// Must contain `{feature}` and `{domain}` exactly once each.
    pub measure_template: String,
    /// Must contain `{feature}` and `{domain}` exactly once each.
    pub range_template: String,
    pub domain_label: String,
}

impl Default for QueryTemplates {
    fn default() -> Self {
        Self {
            feature_query:
                "What features are commonly used to distinguish good and bad prints in {domain} manufacturing?"
                    .into(),
            measure_template: "how to measure {feature} for {domain}".into(),
            range_template: "what range of {feature}s are considered good for {domain}".into(),
            domain_label: "DED-LW".into(),
        }
    }
}

fn count_occurrences(haystack: &str, needle: &str) -> usize {
    haystack.match_indices(needle).count()
}

impl QueryTemplates {
    pub fn load(path: &Path) -> Result<Self, ExtractError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| ExtractError::Io { path: path.display().to_string(), source })?;
        let templates: QueryTemplates = serde_json::from_str(&raw)
            .map_err(|source| ExtractError::Parse { path: path.display().to_string(), source })?;
        templates.validate()?;
        Ok(templates)
    }

    pub fn validate(&self) -> Result<(), ExtractError> {
        let checks: [(&'static str, &str, &[&str]); 3] = [
            ("feature_query", &self.feature_query, &["{domain}"]),
            ("measure_template", &self.measure_template, &["{feature}", "{domain}"]),
            ("range_template", &self.range_template, &["{feature}", "{domain}"]),
        ];
        for (which, template, placeholders) in checks {
            for placeholder in placeholders {
                match count_occurrences(template, placeholder) {
                    1 => {}
                    n => {
                        return Err(ExtractError::TemplateInvalid {
                            which,
                            problem: format!("placeholder {placeholder} appears {n} times, expected exactly 1"),
                        })
                    }
                }
            }
        }
        if self.domain_label.trim().is_empty() {
            return Err(ExtractError::TemplateInvalid {
                which: "domain_label",
                problem: "must be non-empty".into(),
            });
        }
        Ok(())
    }

    pub fn filled_feature_query(&self) -> String {
        self.feature_query.replace("{domain}", &self.domain_label)
    }

    pub fn filled_measure(&self, feature: &str) -> String {
        self.measure_template
            .replace("{feature}", feature)
            .replace("{domain}", &self.domain_label)
    }

    pub fn filled_range(&self, feature: &str) -> String {
        self.range_template
            .replace("{feature}", feature)
            .replace("{domain}", &self.domain_label)
    }
}

/// Which of the three chain queries a retrieval hit supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Features,
    Measure,
    Range,
}

/// Retrieval provenance: a database entry that grounded one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportingHit {
    pub query: QueryKind,
    pub entry_id: String,
    pub similarity: f64,
}

/// Everything the chain learned about one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureKnowledge {
    pub feature_name: String,
    pub measurement_procedure: String,
    pub good_range: String,
    pub supporting_hits: Vec<SupportingHit>,
}

/// The distilled assessment knowledge handed to the assessment stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBrief {
    pub features: Vec<FeatureKnowledge>,
    pub raw_feature_answer: String,
    pub generated_at: String,
    /// Fingerprint of the database the brief was distilled from.
    pub kb_fingerprint: String,
}

impl KnowledgeBrief {
    pub fn save(&self, path: &Path) -> Result<(), ExtractError> {
        let body = serde_json::to_string_pretty(self).expect("brief serializes");
        std::fs::write(path, body + "\n")
            .map_err(|source| ExtractError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ExtractError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| ExtractError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&raw)
            .map_err(|source| ExtractError::Parse { path: path.display().to_string(), source })
    }

    /// True when the brief was distilled from exactly this database.
    pub fn matches(&self, db: &KnowledgeDatabase) -> bool {
        self.kb_fingerprint == db.fingerprint()
    }

    /// The text block injected into assessment prompts.
    pub fn prompt_block(&self) -> String {
        let mut block = String::from("Quality assessment knowledge:\n");
        for feature in &self.features {
            block.push_str(&format!("- Feature: {}\n", feature.feature_name));
            if !feature.measurement_procedure.is_empty() {
                block.push_str(&format!("  How to measure: {}\n", feature.measurement_procedure));
            }
            if !feature.good_range.is_empty() {
                block.push_str(&format!("  Good range: {}\n", feature.good_range));
            }
        }
        block
    }
}

/// Prompt asking the backend to answer `question` using only the retrieved
/// summaries, each labeled with its entry id.
pub fn grounded_question_prompt(question: &str, hits: &[RetrievalHit<'_>]) -> String {
    let mut prompt = String::from(
        "Answer the question using only the reference summaries below. \
         Do not draw on outside knowledge.\n\nReference summaries:\n",
    );
    for hit in hits {
        prompt.push_str(&format!("[{}] {}\n", hit.entry.entry_id, hit.entry.summary));
    }
    prompt.push_str(&format!("\nQuestion: {question}\nAnswer concisely."));
    prompt
}

/// Prompt forcing a free-prose feature answer into a delimited list.
pub fn list_format_prompt(raw_answer: &str, strict: bool) -> String {
    let mut prompt = String::from(
        "Rewrite the answer below as feature names separated by semicolons, \
         all on one line, with no numbering and no extra words.\n",
    );
    if strict {
        prompt.push_str(
            "Use exactly this format: name; name; name — nothing else, no prose, no explanation.\n",
        );
    }
    prompt.push_str(&format!("\nAnswer:\n{raw_answer}"));
    prompt
}

/// Parse a delimited feature list: semicolon-separated names on one line,
/// each at most 8 words, trailing periods stripped, deduplicated
/// case-insensitively keeping the first spelling. Returns None when the
/// text does not follow the contract.
pub fn parse_feature_list(raw: &str) -> Option<Vec<String>> {
    let line = raw.trim();
    if line.is_empty() || line.lines().count() != 1 {
        return None;
    }
    let mut features = Vec::new();
    let mut seen = HashSet::new();
    for part in line.split(';') {
        let name = part.trim().trim_end_matches('.').trim();
        if name.is_empty() {
            continue;
        }
        if name.split_whitespace().count() > 8 {
            return None;
        }
        if seen.insert(name.to_lowercase()) {
            features.push(name.to_string());
        }
    }
    if features.is_empty() {
        None
    } else {
        Some(features)
    }
}

fn hits_to_provenance(kind: QueryKind, hits: &[RetrievalHit<'_>]) -> Vec<SupportingHit> {
    hits.iter()
        .map(|hit| SupportingHit {
            query: kind,
            entry_id: hit.entry.entry_id.clone(),
            similarity: hit.similarity,
        })
        .collect()
}

async fn grounded_answer(
    db: &KnowledgeDatabase,
    question: &str,
    n: usize,
    kind: QueryKind,
    backend: &dyn ModelBackend,
) -> Result<(String, Vec<SupportingHit>), ExtractError> {
    let hits = retrieve(db, question, n, backend).await?;
    let prompt = grounded_question_prompt(question, &hits);
    let request = ChatRequest::new(backend.chat_model(), vec![ChatTurn::user(prompt)]);
    let answer = backend.chat(&request).await?;
    Ok((answer, hits_to_provenance(kind, &hits)))
}

/// Result of the feature-identification step.
#[derive(Debug, Clone)]
pub struct FeatureQueryOutcome {
    pub features: Vec<String>,
    pub raw_answer: String,
    pub hits: Vec<SupportingHit>,
}

/// Step 1: identify the features of interest. The grounded prose answer is
/// then forced into a delimited list, with one stricter reformat retry.
pub async fn run_feature_query(
    db: &KnowledgeDatabase,
    templates: &QueryTemplates,
    backend: &dyn ModelBackend,
    n: usize,
) -> Result<FeatureQueryOutcome, ExtractError> {
    templates.validate()?;
    let question = templates.filled_feature_query();
    let (raw_answer, hits) = grounded_answer(db, &question, n, QueryKind::Features, backend).await?;

    let mut features = None;
    for strict in [false, true] {
        let prompt = list_format_prompt(&raw_answer, strict);
        let request = ChatRequest::new(backend.chat_model(), vec![ChatTurn::user(prompt)]);
        let formatted = backend.chat(&request).await?;
        match parse_feature_list(&formatted) {
            Some(list) => {
                features = Some(list);
                break;
            }
            None => {
                if strict {
                    return Err(ExtractError::FormatError { raw: formatted });
                }
                log::warn!("feature list not machine-readable, retrying with stricter format");
            }
        }
    }
    let features = features.ok_or(ExtractError::NoFeatures)?;
    if features.is_empty() {
        return Err(ExtractError::NoFeatures);
    }
    Ok(FeatureQueryOutcome { features, raw_answer, hits })
}

/// Steps 2 and 3: per feature, ask how to measure it and what range is
/// good. The two queries per feature run concurrently; output order always
/// matches input order. A failed query leaves its field empty with a
/// warning instead of aborting the rest.
pub async fn run_followup_queries(
    db: &KnowledgeDatabase,
    templates: &QueryTemplates,
    backend: &dyn ModelBackend,
    features: &[String],
    n: usize,
) -> Result<Vec<FeatureKnowledge>, ExtractError> {
    if features.is_empty() {
        return Err(ExtractError::EmptyFeatureInput);
    }
    templates.validate()?;
    let tasks = features.iter().map(|feature| async move {
        let measure_question = templates.filled_measure(feature);
        let range_question = templates.filled_range(feature);
        let (measure, range) = futures::future::join(
            grounded_answer(db, &measure_question, n, QueryKind::Measure, backend),
            grounded_answer(db, &range_question, n, QueryKind::Range, backend),
        )
        .await;

        let mut knowledge = FeatureKnowledge {
            feature_name: feature.clone(),
            measurement_procedure: String::new(),
            good_range: String::new(),
            supporting_hits: Vec::new(),
        };
        match measure {
            Ok((answer, hits)) => {
                knowledge.measurement_procedure = answer;
                knowledge.supporting_hits.extend(hits);
            }
            Err(e) => log::warn!("measurement query for {feature:?} failed: {e}"),
        }
        match range {
            Ok((answer, hits)) => {
                knowledge.good_range = answer;
                knowledge.supporting_hits.extend(hits);
            }
            Err(e) => log::warn!("range query for {feature:?} failed: {e}"),
        }
        knowledge
    });
    Ok(futures::future::join_all(tasks).await)
}

/// Run the full chain and stamp the result with the database fingerprint.
pub async fn build_brief(
    db: &KnowledgeDatabase,
    templates: &QueryTemplates,
    backend: &dyn ModelBackend,
    n: usize,
) -> Result<KnowledgeBrief, ExtractError> {
    let outcome = run_feature_query(db, templates, backend, n).await?;
    let mut features = run_followup_queries(db, templates, backend, &outcome.features, n).await?;
    for knowledge in &mut features {
        let mut hits = outcome.hits.clone();
        hits.append(&mut knowledge.supporting_hits);
        knowledge.supporting_hits = hits;
    }
    Ok(KnowledgeBrief {
        features,
        raw_feature_answer: outcome.raw_answer,
        generated_at: chrono::Utc::now().to_rfc3339(),
        kb_fingerprint: db.fingerprint(),
    })
}
