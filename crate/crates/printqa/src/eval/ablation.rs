//! Runs the configuration × sample assessment matrix and persists one
//! record per pairing under `<run_dir>/<config>/<sample_id>.json`.
//!
//! Runs are resumable: records already on disk are skipped, so an
//! interrupted run picks up where it stopped. Single-sample failures do
//! not abort the run; they are collected, reported in the summary, and
//! written to `failures.json` in a deterministic order.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use futures::future::join_all;
use serde::{Deserialize, Serialize};

use crate::assess::{
    build_prompt_chain, resolve_manifest_path, run_assessment, AblationConfig, AssessmentResponse,
    DatasetManifest, FeatureVocabulary, ImageInput, ImageRole, PromptChain,
};
use crate::backend::ModelBackend;
use crate::extract::KnowledgeBrief;

use super::EvalError;

/// What gets persisted per (config, sample): the parsed response plus the
/// exact prompt chain that produced it, for audit and replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub response: AssessmentResponse,
    pub chain: PromptChain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample_id: String,
    pub config: AblationConfig,
    pub error: String,
}

#[derive(Debug)]
pub struct AblationRunSummary {
    pub run_dir: PathBuf,
    pub written: usize,
    pub skipped: usize,
    pub failures: Vec<SampleFailure>,
}

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io { path: path.display().to_string(), source }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write via a sibling temp file and rename, so a crash never leaves a
/// half-written record that a resumed run would skip.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    let parent = path.parent().unwrap_or(Path::new("."));
    let tmp = parent.join(format!(
        ".{}.tmp.{}.{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("record"),
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed),
    ));
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io_err(path, e)
    })
}

fn record_path(run_dir: &Path, config: AblationConfig, sample_id: &str) -> PathBuf {
    run_dir.join(config.name()).join(format!("{sample_id}.json"))
}

fn config_position(config: AblationConfig) -> usize {
    AblationConfig::ALL.iter().position(|c| *c == config).expect("config in canonical list")
}

/// Copy the manifest into the run directory for provenance. A resumed run
/// must see byte-identical content, otherwise its records are not
/// comparable and mixing them would corrupt the evaluation.
fn place_manifest(manifest_path: &Path, run_dir: &Path) -> Result<(), EvalError> {
    let source = std::fs::read(manifest_path).map_err(|e| io_err(manifest_path, e))?;
    let target = run_dir.join("manifest.json");
    match std::fs::read(&target) {
        Ok(existing) if existing == source => Ok(()),
        Ok(_) => Err(EvalError::ManifestMismatch { path: target.display().to_string() }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => atomic_write(&target, &source),
        Err(e) => Err(io_err(&target, e)),
    }
}

/// Execute every requested configuration over every manifest sample,
/// skipping records that already exist on disk.
pub async fn run_ablation(
    manifest_path: &Path,
    configs: &[AblationConfig],
    brief: Option<&KnowledgeBrief>,
    backend: &dyn ModelBackend,
    vocabulary: &FeatureVocabulary,
    run_dir: &Path,
) -> Result<AblationRunSummary, EvalError> {
    let manifest = DatasetManifest::load(manifest_path)?;

    if let Some(config) = configs.iter().find(|c| c.needs_brief()) {
        if brief.is_none() {
            return Err(EvalError::MissingDependency { what: "knowledge brief", config: *config });
        }
    }
    let reference = match configs.iter().find(|c| c.needs_reference()) {
        Some(_) => {
            let path = resolve_manifest_path(manifest_path, &manifest.reference_image);
            Some(ImageInput::from_file("reference", &path, ImageRole::Reference)?)
        }
        None => None,
    };

    std::fs::create_dir_all(run_dir).map_err(|e| io_err(run_dir, e))?;
    place_manifest(manifest_path, run_dir)?;
    for config in configs {
        let dir = run_dir.join(config.name());
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }

    let mut pending = Vec::new();
    let mut skipped = 0usize;
    for config in configs {
        for sample in &manifest.samples {
            if record_path(run_dir, *config, &sample.sample_id).exists() {
                skipped += 1;
            } else {
                pending.push((*config, sample));
            }
        }
    }

    let tasks = pending.iter().map(|(config, sample)| {
        let config = *config;
        let reference = reference.as_ref();
        async move {
            let outcome = assess_one(
                manifest_path,
                config,
                sample,
                brief,
                reference,
                backend,
                vocabulary,
                run_dir,
            )
            .await;
            (config, sample.sample_id.clone(), outcome)
        }
    });
    let outcomes = join_all(tasks).await;

    let mut written = 0usize;
    let mut failures = Vec::new();
    for (config, sample_id, outcome) in outcomes {
        match outcome {
            Ok(()) => written += 1,
            Err(e) => failures.push(SampleFailure { sample_id, config, error: e.to_string() }),
        }
    }
    failures.sort_by(|a, b| {
        config_position(a.config)
            .cmp(&config_position(b.config))
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    if !failures.is_empty() {
        log::warn!("{} of {} assessments failed", failures.len(), pending.len());
        let mut body = serde_json::to_vec_pretty(&failures).expect("failures serialize");
        body.push(b'\n');
        atomic_write(&run_dir.join("failures.json"), &body)?;
    }

    Ok(AblationRunSummary { run_dir: run_dir.to_path_buf(), written, skipped, failures })
}

#[allow(clippy::too_many_arguments)]
async fn assess_one(
    manifest_path: &Path,
    config: AblationConfig,
    sample: &crate::assess::SampleSpec,
    brief: Option<&KnowledgeBrief>,
    reference: Option<&ImageInput>,
    backend: &dyn ModelBackend,
    vocabulary: &FeatureVocabulary,
    run_dir: &Path,
) -> Result<(), EvalError> {
    let image_path = resolve_manifest_path(manifest_path, &sample.image);
    let target = ImageInput::from_file(&sample.sample_id, &image_path, ImageRole::Target)?;
    let brief = if config.needs_brief() { brief } else { None };
    let reference = if config.needs_reference() { reference } else { None };
    let chain = build_prompt_chain(config, brief, reference, &target)?;
    let response = run_assessment(&chain, backend, &sample.sample_id, config, vocabulary).await?;
    let record = RunRecord { response, chain };
    let mut body = serde_json::to_vec_pretty(&record).expect("record serialize");
    body.push(b'\n');
    atomic_write(&record_path(run_dir, config, &sample.sample_id), &body)
}

/// Load every record under a run directory, configs in canonical order and
/// samples in filename order within each config.
pub fn load_run_records(run_dir: &Path) -> Result<Vec<RunRecord>, EvalError> {
    let mut records = Vec::new();
    for config in AblationConfig::ALL {
        let dir = run_dir.join(config.name());
        let entries = match std::fs::read_dir(&dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => return Err(io_err(&dir, e)),
        };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let raw = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let record: RunRecord = serde_json::from_str(&raw)
                .map_err(|source| EvalError::Parse { path: path.display().to_string(), source })?;
            if record.response.config != config {
                return Err(EvalError::MisplacedRecord {
                    path: path.display().to_string(),
                    expected: config,
                    found: record.response.config,
                });
            }
            records.push(record);
        }
    }
    if records.is_empty() {
        return Err(EvalError::EmptyRun(run_dir.display().to_string()));
    }
    Ok(records)
}
