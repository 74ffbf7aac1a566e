//! Evaluation: the 4-configuration ablation run, expert annotation
//! ingestion, and the three study metrics.
//!
//! Validity is the mean of expert booleans. Knowledge relevance scores one
//! response as max(0, 4 − E) where E counts omitted relevant features plus
//! included irrelevant ones. Conclusion correctness compares verdicts with
//! ground truth, counting indeterminate as incorrect. All three accumulate
//! in integers and divide once, so results are exact rationals.

pub mod ablation;
pub mod annotate;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assess::{AblationConfig, AssessError, AssessmentResponse, DatasetManifest};
use crate::backend::BackendError;

pub use ablation::{load_run_records, run_ablation, AblationRunSummary, RunRecord, SampleFailure};
pub use annotate::{annotate_session, AnnotateSummary};
pub use report::{
    render_csv, render_markdown, report_from_runs, report_from_runs_with, round2_half_up,
    sidecar_json, write_report, BaselineColumn, MetricsReport,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to compute a metric over")]
    NoRecords,
    #[error("response references sample {sample_id} absent from the manifest")]
    UnknownSample { sample_id: String },
    #[error("annotations contain multiple annotators ({found:?}); select one")]
    AmbiguousAnnotators { found: Vec<String> },
    #[error("run directory {0} contains no responses")]
    EmptyRun(String),
    #[error("run directory already holds a different manifest: {path}")]
    ManifestMismatch { path: String },
    #[error("record {path} belongs to config {found}, expected {expected}")]
    MisplacedRecord { path: String, expected: AblationConfig, found: AblationConfig },
    #[error("multiple runs produce the same report column ({backend_id}, {config})")]
    DuplicateCell { backend_id: String, config: AblationConfig },
    #[error("missing {what} required by config {config}")]
    MissingDependency { what: &'static str, config: AblationConfig },
    #[error("annotation file error at line {line}: {message}")]
    AnnotationLoad { line: usize, message: String },
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
    Assess(#[from] AssessError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One expert judgment of one response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub config: AblationConfig,
    /// Expert judgment: is the assessment text valid?
    pub validity: bool,
    pub omitted_relevant: u32,
    pub included_irrelevant: u32,
    pub annotator_id: String,
    pub annotated_at: String,
}

impl AnnotationRecord {
    /// E: total count of feature errors in the response.
    pub fn error_count(&self) -> u32 {
        self.omitted_relevant + self.included_irrelevant
    }

    /// R = max(0, 4 − E).
    pub fn relevance(&self) -> u32 {
        relevance_score(self.error_count())
    }
}

/// The per-response relevance score: max(0, 4 − E).
pub fn relevance_score(error_count: u32) -> u32 {
    4u32.saturating_sub(error_count)
}

/// Mean of the expert validity booleans.
pub fn compute_validity(records: &[&AnnotationRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let valid = records.iter().filter(|r| r.validity).count();
    Ok(valid as f64 / records.len() as f64)
}

/// Mean of max(0, 4 − E) over records.
pub fn compute_relevance(records: &[&AnnotationRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let total: u64 = records.iter().map(|r| u64::from(r.relevance())).sum();
    Ok(total as f64 / records.len() as f64)
}

/// Fraction of responses whose verdict equals the manifest ground truth.
/// Indeterminate verdicts count as incorrect; a response whose sample is
/// missing from the manifest is a data-integrity error.
pub fn compute_conclusion_correctness(
    responses: &[&AssessmentResponse],
    manifest: &DatasetManifest,
) -> Result<f64, EvalError> {
    if responses.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let mut correct = 0usize;
    for response in responses {
        let truth = manifest
            .ground_truth_for(&response.sample_id)
            .ok_or_else(|| EvalError::UnknownSample { sample_id: response.sample_id.clone() })?;
        if truth.matches(response.verdict) {
            correct += 1;
        }
    }
    Ok(correct as f64 / responses.len() as f64)
}

/// Keep only the newest record per (sample, config, annotator); later file
/// position breaks exact timestamp ties. Output order follows the input's
/// first occurrence of each key.
pub fn latest_annotations(records: &[AnnotationRecord]) -> Vec<&AnnotationRecord> {
    let mut by_key: BTreeMap<(&str, AblationConfig, &str), usize> = BTreeMap::new();
    let mut order: Vec<(&str, AblationConfig, &str)> = Vec::new();
    for (index, record) in records.iter().enumerate() {
        let key = (record.sample_id.as_str(), record.config, record.annotator_id.as_str());
        match by_key.get(&key) {
            Some(&existing) if records[existing].annotated_at > record.annotated_at => {}
            Some(_) => {
                by_key.insert(key, index);
            }
            None => {
                by_key.insert(key, index);
                order.push(key);
            }
        }
    }
    order.into_iter().map(|key| &records[by_key[&key]]).collect()
}

/// Distinct annotator ids present, sorted.
pub fn annotator_ids(records: &[AnnotationRecord]) -> Vec<String> {
    let set: BTreeSet<&str> = records.iter().map(|r| r.annotator_id.as_str()).collect();
    set.into_iter().map(|s| s.to_string()).collect()
}

/// Load an annotation JSONL file, citing line numbers on errors.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, EvalError> {
    let file = std::fs::File::open(path)
        .map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line =
            line.map_err(|e| EvalError::AnnotationLoad { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(&line)
            .map_err(|e| EvalError::AnnotationLoad { line: line_no, message: e.to_string() })?;
        records.push(record);
    }
    Ok(records)
}

/// One column of the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCell {
    pub backend_id: String,
    pub config: AblationConfig,
    /// Absent when the cell has no annotations.
    pub validity_mean: Option<f64>,
    /// Absent when the cell has no annotations.
    pub relevance_mean: Option<f64>,
    pub conclusion_correctness: f64,
    pub n_samples: usize,
}

/// Compute every (backend, config) cell present in `responses`.
/// Annotations are filtered to `annotator` (mandatory when several
/// annotators appear) and superseded records are dropped first.
pub fn compute_cells(
    responses: &[AssessmentResponse],
    annotations: &[AnnotationRecord],
    manifest: &DatasetManifest,
    annotator: Option<&str>,
) -> Result<Vec<MetricsCell>, EvalError> {
    if responses.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let annotators = annotator_ids(annotations);
    let selected: Vec<AnnotationRecord> = match (annotator, annotators.len()) {
        (Some(id), _) => annotations.iter().filter(|r| r.annotator_id == id).cloned().collect(),
        (None, 0 | 1) => annotations.to_vec(),
        (None, _) => return Err(EvalError::AmbiguousAnnotators { found: annotators }),
    };
    let latest = latest_annotations(&selected);

    let mut groups: BTreeMap<(String, AblationConfig), Vec<&AssessmentResponse>> = BTreeMap::new();
    for response in responses {
        groups
            .entry((response.backend_id.clone(), response.config))
            .or_default()
            .push(response);
    }

    let mut cells = Vec::new();
    for ((backend_id, config), cell_responses) in groups {
        let cell_annotations: Vec<&AnnotationRecord> = latest
            .iter()
            .filter(|a| a.config == config)
            .copied()
            .collect();
        let (validity_mean, relevance_mean) = if cell_annotations.is_empty() {
            (None, None)
        } else {
            (
                Some(compute_validity(&cell_annotations)?),
                Some(compute_relevance(&cell_annotations)?),
            )
        };
        let conclusion_correctness = compute_conclusion_correctness(&cell_responses, manifest)?;
        cells.push(MetricsCell {
            backend_id,
            config,
            validity_mean,
            relevance_mean,
            conclusion_correctness,
            n_samples: cell_responses.len(),
        });
    }
    // Deterministic column order: backend, then the canonical config order.
    cells.sort_by(|a, b| {
        a.backend_id.cmp(&b.backend_id).then_with(|| {
            let pos = |c: AblationConfig| AblationConfig::ALL.iter().position(|x| *x == c).unwrap();
            pos(a.config).cmp(&pos(b.config))
        })
    });
    Ok(cells)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::assess::{GroundTruth, SampleSpec, Verdict};
    use std::path::PathBuf;

    pub fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest {
            samples: (0..n)
                .map(|i| SampleSpec {
                    sample_id: format!("s{i:02}"),
                    image: PathBuf::from(format!("images/s{i:02}.png")),
                    // Half the dataset is good, half bad.
                    ground_truth: if i % 2 == 0 { GroundTruth::Good } else { GroundTruth::Bad },
                })
                .collect(),
            reference_image: PathBuf::from("images/ref.png"),
        }
    }

    pub fn response(
        sample_id: &str,
        config: AblationConfig,
        backend_id: &str,
        verdict: Verdict,
    ) -> AssessmentResponse {
        AssessmentResponse {
            sample_id: sample_id.into(),
            config,
            raw_text: format!("assessment of {sample_id}"),
            verdict,
            mentioned_features: Vec::new(),
            backend_id: backend_id.into(),
            latency_ms: 3,
        }
    }

    pub fn annotation(
        sample_id: &str,
        config: AblationConfig,
        validity: bool,
        omitted: u32,
        irrelevant: u32,
        annotator: &str,
        at: &str,
    ) -> AnnotationRecord {
        AnnotationRecord {
            sample_id: sample_id.into(),
            config,
            validity,
            omitted_relevant: omitted,
            included_irrelevant: irrelevant,
            annotator_id: annotator.into(),
            annotated_at: at.into(),
        }
    }
}
