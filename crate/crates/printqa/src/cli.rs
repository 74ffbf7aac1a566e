//! Command-line entry points. Each subcommand is thin orchestration over
//! the library modules and prints one machine-parsable summary line on
//! success. Exit codes: 0 success, 1 internal error, 2 input/usage error.
//!
//! Stages communicate through files (chunks → kb → brief → runs →
//! annotations → report) so the one-time setup artifacts can be built
//! once and reused across assessments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::assess::{
    build_prompt_chain, run_assessment, AblationConfig, AssessError, FeatureVocabulary,
    ImageInput, ImageRole,
};
use crate::backend::{build_backend, BackendConfig, ModelBackend};
use crate::eval::{
    annotate_session, load_annotations, report_from_runs_with, run_ablation, BaselineColumn,
    EvalError,
};
use crate::extract::{build_brief, KnowledgeBrief, QueryTemplates};
use crate::ingest::{ingest_document, Chunk, ContextWarning, DocumentContext};
use crate::kb::{build_database, load_database, save_database, DEFAULT_TOP_N};

#[derive(Debug)]
enum CliError {
    /// Bad user input: exit 2.
    Input(String),
    /// Failure while doing otherwise-valid work: exit 1.
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Input(_) => ExitCode::from(2),
            CliError::Internal(_) => ExitCode::from(1),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Internal(m) => m,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

/// Eval errors are input problems unless the failure happened while
/// talking to the model or writing results.
fn classify_eval(e: EvalError) -> CliError {
    match e {
        EvalError::Io { .. } | EvalError::Backend(_) => internal(e),
        EvalError::Assess(AssessError::Backend(_)) => internal(e),
        _ => input(e),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "printqa",
    version,
    about = "Retrieval-grounded visual quality assessment for printed beads"
)]
pub struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalOpts {
    /// Backend configuration file (JSON). Required by subcommands that
    /// talk to a model.
    #[arg(long, global = true)]
    backend_config: Option<PathBuf>,
    /// Response cache directory; PRINTQA_CACHE_DIR overrides when unset.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Seed for deterministic mock embeddings.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

impl GlobalOpts {
    fn cache_dir(&self) -> Option<PathBuf> {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var_os("PRINTQA_CACHE_DIR").map(PathBuf::from))
    }

    fn backend(&self) -> Result<Arc<dyn ModelBackend>, CliError> {
        let path = self.backend_config.as_ref().ok_or_else(|| {
            CliError::Input("--backend-config is required for this subcommand".into())
        })?;
        let config = BackendConfig::load(path).map_err(input)?;
        build_backend(&config, self.cache_dir().as_deref(), self.seed).map_err(input)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a structured article and write retrieval-ready chunks plus a
    /// document-context sidecar.
    Ingest {
        /// Structured document JSON.
        #[arg(long)]
        input: PathBuf,
        /// Approximate token budget per text chunk.
        #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u32).range(1..))]
        budget: u32,
        /// Element distance searched when attaching captions and nearby
        /// paragraphs to figures and tables.
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
        window: u32,
        /// Chunk JSONL output path; the sidecar lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize and embed chunks into a knowledge base.
    BuildKb {
        /// Chunk JSONL file(s) produced by `ingest` (repeatable). Each
        /// must have its context sidecar next to it.
        #[arg(long, required = true)]
        chunks: Vec<PathBuf>,
        /// Knowledge-base JSONL output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Query the knowledge base and distill the assessment brief.
    Extract {
        /// Knowledge-base JSONL path.
        #[arg(long)]
        kb: PathBuf,
        /// Query template JSON; built-in templates when omitted.
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Retrieval depth per query.
        #[arg(long, default_value_t = DEFAULT_TOP_N as u64, value_parser = clap::value_parser!(u64).range(1..))]
        top_n: u64,
        /// Brief JSON output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Assess one image under one configuration.
    Assess {
        /// Assessment brief JSON (required by knowledge configurations).
        #[arg(long)]
        brief: Option<PathBuf>,
        /// Known-good reference image (required by reference configurations).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Image to assess.
        #[arg(long)]
        image: PathBuf,
        /// One of: generic, knowledge_only, reference_only, full.
        #[arg(long)]
        config: String,
        /// Optional path for the full response record (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configuration × sample matrix over a labeled dataset.
    Ablate {
        /// Dataset manifest JSON.
        #[arg(long)]
        manifest: PathBuf,
        /// `all` or a comma-separated subset of configuration names.
        #[arg(long, default_value = "all")]
        configs: String,
        /// Assessment brief JSON (required when any selected
        /// configuration uses knowledge).
        #[arg(long)]
        brief: Option<PathBuf>,
        /// Run directory; also the resume point for interrupted runs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Interactively annotate a finished run.
    Annotate {
        /// Run directory produced by `ablate`.
        #[arg(long)]
        runs: PathBuf,
        /// Identifier recorded on every annotation.
        #[arg(long)]
        annotator: String,
        /// Annotation JSONL path; defaults to annotations.jsonl inside
        /// the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the metrics table from finished runs.
    Report {
        /// Run directory (repeatable; one column group per backend).
        #[arg(long, required = true)]
        runs: Vec<PathBuf>,
        /// Annotation JSONL overriding the per-run annotations.jsonl.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Manifest overriding the per-run manifest.json.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Annotator to score by; required when files contain several.
        #[arg(long)]
        annotator: Option<String>,
        /// Label for an externally sourced comparison column.
        #[arg(long, requires = "baseline_correctness")]
        baseline_label: Option<String>,
        /// Conclusion correctness of the comparison column.
        #[arg(long, requires = "baseline_label")]
        baseline_correctness: Option<f64>,
        /// Comma-separated subset of {md, csv}. The full-precision JSON
        /// sidecar is always written.
        #[arg(long, default_value = "md,csv")]
        format: String,
        /// Report markdown path; csv/json siblings derive from it.
        #[arg(long)]
        out: PathBuf,
    },
}

/// What `ingest` writes next to the chunk file: everything downstream
/// summarization needs to know about the source document.
#[derive(Debug, Serialize, Deserialize)]
pub struct ContextSidecar {
    pub doc_id: String,
    pub context: DocumentContext,
    pub warnings: Vec<ContextWarning>,
}

pub fn sidecar_path(chunks_path: &Path) -> PathBuf {
    chunks_path.with_extension("context.json")
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(internal)
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, body: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| internal(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, body).map_err(|e| internal(format!("{}: {e}", path.display())))
}

fn file_stem(path: &Path) -> Result<String, CliError> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| input(format!("cannot derive an image id from {}", path.display())))
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Ingest { input: doc, budget, window, out } => {
            cmd_ingest(doc, *budget as usize, *window as usize, out)
        }
        Command::BuildKb { chunks, out } => cmd_build_kb(&cli.global, chunks, out),
        Command::Extract { kb, templates, top_n, out } => {
            cmd_extract(&cli.global, kb, templates.as_deref(), *top_n as usize, out)
        }
        Command::Assess { brief, reference, image, config, out } => cmd_assess(
            &cli.global,
            brief.as_deref(),
            reference.as_deref(),
            image,
            config,
            out.as_deref(),
        ),
        Command::Ablate { manifest, configs, brief, out } => {
            cmd_ablate(&cli.global, manifest, configs, brief.as_deref(), out)
        }
        Command::Annotate { runs, annotator, out } => cmd_annotate(runs, annotator, out.as_deref()),
        Command::Report {
            runs,
            annotations,
            manifest,
            annotator,
            baseline_label,
            baseline_correctness,
            format,
            out,
        } => cmd_report(
            runs,
            annotations.as_deref(),
            manifest.as_deref(),
            annotator.as_deref(),
            baseline_label.as_deref(),
            *baseline_correctness,
            format,
            out,
        ),
    }
}

fn cmd_ingest(doc: &Path, budget: usize, window: usize, out: &Path) -> Result<(), CliError> {
    let raw = read_to_string(doc)?;
    let output = ingest_document(&raw, budget, window).map_err(input)?;
    let mut body = String::new();
    for chunk in &output.chunks {
        body.push_str(&serde_json::to_string(chunk).expect("chunk serializes"));
        body.push('\n');
    }
    write_output(out, body)?;
    let sidecar = ContextSidecar {
        doc_id: output.document.doc_id.clone(),
        context: output.context,
        warnings: output.warnings.clone(),
    };
    write_output(
        &sidecar_path(out),
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n",
    )?;
    for warning in &output.warnings {
        log::warn!("{}: {warning:?}", output.document.doc_id);
    }
    println!(
        "ingest ok doc_id={} chunks={} warnings={} out={}",
        output.document.doc_id,
        output.chunks.len(),
        output.warnings.len(),
        out.display()
    );
    Ok(())
}

fn load_chunk_file(path: &Path) -> Result<(Vec<Chunk>, ContextSidecar), CliError> {
    let raw = read_to_string(path)?;
    let mut chunks = Vec::new();
    for (index, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let chunk: Chunk = serde_json::from_str(line)
            .map_err(|e| input(format!("{}:{}: {e}", path.display(), index + 1)))?;
        chunks.push(chunk);
    }
    let sidecar_file = sidecar_path(path);
    let sidecar: ContextSidecar = serde_json::from_str(&read_to_string(&sidecar_file)?)
        .map_err(|e| input(format!("{}: {e}", sidecar_file.display())))?;
    Ok((chunks, sidecar))
}

fn cmd_build_kb(global: &GlobalOpts, chunk_files: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let backend = global.backend()?;
    let mut chunks = Vec::new();
    let mut contexts: BTreeMap<String, DocumentContext> = BTreeMap::new();
    for path in chunk_files {
        let (file_chunks, sidecar) = load_chunk_file(path)?;
        chunks.extend(file_chunks);
        contexts.insert(sidecar.doc_id, sidecar.context);
    }
    let rt = runtime()?;
    let (db, failures) = rt
        .block_on(build_database(&chunks, &contexts, backend.as_ref()))
        .map_err(|e| match e {
            crate::kb::KbError::AllChunksFailed { .. } | crate::kb::KbError::Io { .. } => {
                internal(e)
            }
            other => input(other),
        })?;
    for failure in &failures {
        log::warn!("chunk {} skipped: {}", failure.chunk_id, failure.error);
    }
    save_database(&db, out).map_err(internal)?;
    println!(
        "build-kb ok entries={} dim={} failures={} fingerprint={} out={}",
        db.entries.len(),
        db.dim,
        failures.len(),
        &db.fingerprint()[..12],
        out.display()
    );
    Ok(())
}

fn cmd_extract(
    global: &GlobalOpts,
    kb: &Path,
    templates: Option<&Path>,
    top_n: usize,
    out: &Path,
) -> Result<(), CliError> {
    let backend = global.backend()?;
    let db = load_database(kb).map_err(input)?;
    let templates = match templates {
        Some(path) => QueryTemplates::load(path).map_err(input)?,
        None => QueryTemplates::default(),
    };
    let rt = runtime()?;
    let brief = rt
        .block_on(build_brief(&db, &templates, backend.as_ref(), top_n))
        .map_err(internal)?;
    brief.save(out).map_err(internal)?;
    println!(
        "extract ok features={} kb_fingerprint={} out={}",
        brief.features.len(),
        &brief.kb_fingerprint[..12.min(brief.kb_fingerprint.len())],
        out.display()
    );
    Ok(())
}

fn cmd_assess(
    global: &GlobalOpts,
    brief: Option<&Path>,
    reference: Option<&Path>,
    image: &Path,
    config_name: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let config = AblationConfig::from_name(config_name).map_err(input)?;
    // Fail on flag/config mismatches before any file or model work.
    match (config.needs_brief(), brief.is_some()) {
        (true, false) => return Err(input(format!("--config {config} requires --brief"))),
        (false, true) => return Err(input(format!("--config {config} does not take --brief"))),
        _ => {}
    }
    match (config.needs_reference(), reference.is_some()) {
        (true, false) => return Err(input(format!("--config {config} requires --reference"))),
        (false, true) => {
            return Err(input(format!("--config {config} does not take --reference")))
        }
        _ => {}
    }

    let backend = global.backend()?;
    let brief = brief.map(KnowledgeBrief::load).transpose().map_err(input)?;
    let reference = match reference {
        Some(path) => Some(
            ImageInput::from_file(&file_stem(path)?, path, ImageRole::Reference).map_err(input)?,
        ),
        None => None,
    };
    let target = ImageInput::from_file(&file_stem(image)?, image, ImageRole::Target).map_err(input)?;

    let chain = build_prompt_chain(config, brief.as_ref(), reference.as_ref(), &target).map_err(input)?;
    let rt = runtime()?;
    let response = rt
        .block_on(run_assessment(
            &chain,
            backend.as_ref(),
            &target.image_id,
            config,
            &FeatureVocabulary::default(),
        ))
        .map_err(internal)?;

    if let Some(out) = out {
        write_output(
            out,
            serde_json::to_string_pretty(&response).expect("response serializes") + "\n",
        )?;
    }
    println!("{}", response.raw_text);
    println!(
        "assess ok sample={} config={} verdict={}",
        response.sample_id, response.config, response.verdict
    );
    Ok(())
}

fn parse_configs(spec: &str) -> Result<Vec<AblationConfig>, CliError> {
    if spec.trim() == "all" {
        return Ok(AblationConfig::ALL.to_vec());
    }
    let mut configs = Vec::new();
    for name in spec.split(',') {
        let config = AblationConfig::from_name(name.trim()).map_err(input)?;
        if configs.contains(&config) {
            return Err(input(format!("configuration {config} given twice")));
        }
        configs.push(config);
    }
    Ok(configs)
}

fn cmd_ablate(
    global: &GlobalOpts,
    manifest: &Path,
    configs: &str,
    brief: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let configs = parse_configs(configs)?;
    if let Some(config) = configs.iter().find(|c| c.needs_brief()) {
        if brief.is_none() {
            return Err(input(format!("configuration {config} requires --brief")));
        }
    }
    let backend = global.backend()?;
    let brief = brief.map(KnowledgeBrief::load).transpose().map_err(input)?;
    let rt = runtime()?;
    let summary = rt
        .block_on(run_ablation(
            manifest,
            &configs,
            brief.as_ref(),
            backend.as_ref(),
            &FeatureVocabulary::default(),
            out,
        ))
        .map_err(classify_eval)?;
    println!(
        "ablate ok written={} skipped={} failures={} out={}",
        summary.written,
        summary.skipped,
        summary.failures.len(),
        out.display()
    );
    if summary.failures.is_empty() {
        Ok(())
    } else {
        Err(internal(format!(
            "{} assessments failed; see {}",
            summary.failures.len(),
            out.join("failures.json").display()
        )))
    }
}

fn cmd_annotate(runs: &Path, annotator: &str, out: Option<&Path>) -> Result<(), CliError> {
    if annotator.trim().is_empty() {
        return Err(input("--annotator must be non-empty"));
    }
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| runs.join("annotations.jsonl"));
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let summary = annotate_session(
        runs,
        &out,
        annotator,
        &FeatureVocabulary::default(),
        &mut stdin.lock(),
        &mut stdout.lock(),
    )
    .map_err(classify_eval)?;
    println!(
        "annotate ok annotated={} revised={} skipped={} total={} out={}",
        summary.annotated,
        summary.revised,
        summary.skipped,
        summary.total,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_report(
    runs: &[PathBuf],
    annotations: Option<&Path>,
    manifest: Option<&Path>,
    annotator: Option<&str>,
    baseline_label: Option<&str>,
    baseline_correctness: Option<f64>,
    format: &str,
    out: &Path,
) -> Result<(), CliError> {
    let mut want_md = false;
    let mut want_csv = false;
    for token in format.split(',') {
        match token.trim() {
            "md" => want_md = true,
            "csv" => want_csv = true,
            other => return Err(input(format!("unknown --format value {other:?}"))),
        }
    }
    if let Some(path) = annotations {
        // An explicitly given annotation file with nothing in it is an
        // input mistake, not an empty report.
        if load_annotations(path).map_err(classify_eval)?.is_empty() {
            return Err(input(format!("annotation file {} is empty", path.display())));
        }
    }
    let baseline = match (baseline_label, baseline_correctness) {
        (Some(label), Some(value)) => {
            if !(0.0..=1.0).contains(&value) {
                return Err(input("--baseline-correctness must be within [0, 1]"));
            }
            Some(BaselineColumn { label: label.to_string(), conclusion_correctness: value })
        }
        _ => None, // clap's `requires` forbids giving only one.
    };
    let report = report_from_runs_with(runs, annotations, manifest, annotator, baseline)
        .map_err(classify_eval)?;
    if want_md {
        write_output(out, crate::eval::render_markdown(&report))?;
    }
    if want_csv {
        write_output(&out.with_extension("csv"), crate::eval::render_csv(&report))?;
    }
    write_output(&out.with_extension("json"), crate::eval::sidecar_json(&report))?;
    println!("report ok cells={} out={}", report.cells.len(), out.display());
    Ok(())
}
