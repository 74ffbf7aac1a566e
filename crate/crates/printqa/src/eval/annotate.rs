//! Interactive expert annotation of a finished run.
//!
//! The session walks the run's records in their canonical order, shows the
//! response text with the sample's image path and the feature checklist,
//! and collects (validity, omitted-relevant count, included-irrelevant
//! count) per record. Each finished record is appended to the JSONL file
//! immediately, so an interrupted session loses at most the record being
//! answered and resumes cleanly. `r <num>` re-annotates an earlier record
//! by appending a superseding entry; `q` ends the session.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::{SecondsFormat, Utc};

use crate::assess::{DatasetManifest, FeatureVocabulary};

use super::ablation::{load_run_records, RunRecord};
use super::{load_annotations, AnnotationRecord, EvalError};

#[derive(Debug, Default, PartialEq, Eq)]
pub struct AnnotateSummary {
    /// Records annotated for the first time this session.
    pub annotated: usize,
    /// Superseding re-annotations written this session.
    pub revised: usize,
    /// Records already annotated before the session started.
    pub skipped: usize,
    pub total: usize,
}

enum Answer {
    Validity(bool),
    Count(u32),
    Revise(usize),
    Quit,
}

fn io_err(what: &str, source: std::io::Error) -> EvalError {
    EvalError::Io { path: what.to_string(), source }
}

fn read_answer<R: BufRead>(input: &mut R) -> Result<Option<String>, EvalError> {
    let mut line = String::new();
    let n = input.read_line(&mut line).map_err(|e| io_err("annotation input", e))?;
    if n == 0 {
        return Ok(None); // EOF: quit gracefully, nothing half-written.
    }
    Ok(Some(line.trim().to_string()))
}

fn parse_answer(line: &str, expect_count: bool, total: usize) -> Result<Answer, String> {
    let lower = line.to_lowercase();
    if lower == "q" {
        return Ok(Answer::Quit);
    }
    if let Some(rest) = lower.strip_prefix("r ") {
        return match rest.trim().parse::<usize>() {
            Ok(n) if (1..=total).contains(&n) => Ok(Answer::Revise(n)),
            _ => Err(format!("record number must be 1..={total}")),
        };
    }
    if expect_count {
        match line.parse::<u32>() {
            Ok(n) => Ok(Answer::Count(n)),
            Err(_) => Err("enter a whole number (or q to quit)".to_string()),
        }
    } else {
        match lower.as_str() {
            "y" => Ok(Answer::Validity(true)),
            "n" => Ok(Answer::Validity(false)),
            _ => Err("answer y or n (or `r <num>` to revise, q to quit)".to_string()),
        }
    }
}

fn show_record<W: Write>(
    output: &mut W,
    position: usize,
    total: usize,
    record: &RunRecord,
    manifest: &DatasetManifest,
    vocabulary: &FeatureVocabulary,
    revision: bool,
) -> Result<(), EvalError> {
    let response = &record.response;
    let image = manifest
        .samples
        .iter()
        .find(|s| s.sample_id == response.sample_id)
        .map(|s| s.image.display().to_string())
        .unwrap_or_else(|| "<image path unknown>".to_string());
    let tag = if revision { " (revision)" } else { "" };
    let write = |output: &mut W, text: String| {
        output.write_all(text.as_bytes()).map_err(|e| io_err("annotation output", e))
    };
    write(
        output,
        format!(
            "\n[{position}/{total}]{tag} sample {} | config {}\nimage: {image}\n--- response ---\n{}\n--- end ---\n",
            response.sample_id, response.config, response.raw_text
        ),
    )?;
    write(
        output,
        format!("feature checklist: {}\n", vocabulary.canonical_names().join(", ")),
    )?;
    if !response.mentioned_features.is_empty() {
        write(
            output,
            format!("lexical scan found: {}\n", response.mentioned_features.join(", ")),
        )?;
    }
    Ok(())
}

struct Session<'a, R: BufRead, W: Write> {
    input: &'a mut R,
    output: &'a mut W,
    total: usize,
}

enum Collected {
    Record { validity: bool, omitted: u32, irrelevant: u32 },
    Revise(usize),
    Quit,
}

impl<R: BufRead, W: Write> Session<'_, R, W> {
    fn prompt(&mut self, text: &str, expect_count: bool) -> Result<Option<Answer>, EvalError> {
        loop {
            self.output
                .write_all(text.as_bytes())
                .and_then(|()| self.output.flush())
                .map_err(|e| io_err("annotation output", e))?;
            let Some(line) = read_answer(self.input)? else {
                return Ok(None);
            };
            match parse_answer(&line, expect_count, self.total) {
                Ok(answer) => return Ok(Some(answer)),
                Err(message) => {
                    writeln!(self.output, "{message}").map_err(|e| io_err("annotation output", e))?;
                }
            }
        }
    }

    /// Collect one record's three answers. Revision and quit commands are
    /// accepted at the validity prompt; afterwards the record is committed
    /// atomically (all three answers or none).
    fn collect(&mut self) -> Result<Collected, EvalError> {
        let validity = match self.prompt("valid assessment? [y/n] ", false)? {
            None | Some(Answer::Quit) => return Ok(Collected::Quit),
            Some(Answer::Revise(n)) => return Ok(Collected::Revise(n)),
            Some(Answer::Validity(v)) => v,
            Some(Answer::Count(_)) => unreachable!("validity prompt never parses counts"),
        };
        let omitted = match self.prompt("omitted relevant features: ", true)? {
            None | Some(Answer::Quit) => return Ok(Collected::Quit),
            Some(Answer::Count(n)) => n,
            Some(Answer::Revise(_) | Answer::Validity(_)) => {
                unreachable!("count prompt never parses these")
            }
        };
        let irrelevant = match self.prompt("included irrelevant features: ", true)? {
            None | Some(Answer::Quit) => return Ok(Collected::Quit),
            Some(Answer::Count(n)) => n,
            Some(Answer::Revise(_) | Answer::Validity(_)) => {
                unreachable!("count prompt never parses these")
            }
        };
        Ok(Collected::Record { validity, omitted, irrelevant })
    }
}

/// Run an annotation session over `run_dir`, appending to
/// `annotations_path`. Already-annotated records (by this annotator) are
/// skipped, so interrupted sessions resume at the first open record.
pub fn annotate_session<R: BufRead, W: Write>(
    run_dir: &Path,
    annotations_path: &Path,
    annotator_id: &str,
    vocabulary: &FeatureVocabulary,
    input: &mut R,
    output: &mut W,
) -> Result<AnnotateSummary, EvalError> {
    let records = load_run_records(run_dir)?;
    let manifest = DatasetManifest::load(&run_dir.join("manifest.json"))?;
    let total = records.len();

    let mut done: HashSet<(String, crate::assess::AblationConfig)> = HashSet::new();
    if annotations_path.exists() {
        for existing in load_annotations(annotations_path)? {
            if existing.annotator_id == annotator_id {
                done.insert((existing.sample_id, existing.config));
            }
        }
    }
    let skipped = records
        .iter()
        .filter(|r| done.contains(&(r.response.sample_id.clone(), r.response.config)))
        .count();

    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(annotations_path)
        .map_err(|e| io_err(&annotations_path.display().to_string(), e))?;

    let mut summary = AnnotateSummary { skipped, total, ..AnnotateSummary::default() };
    let mut session = Session { input, output, total };

    // Work queue of (record index, is_revision); revisions jump the queue.
    let mut queue: std::collections::VecDeque<(usize, bool)> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| !done.contains(&(r.response.sample_id.clone(), r.response.config)))
        .map(|(i, _)| (i, false))
        .collect();

    'records: while let Some((index, revision)) = queue.pop_front() {
        let record = &records[index];
        show_record(session.output, index + 1, total, record, &manifest, vocabulary, revision)?;
        loop {
            match session.collect()? {
                Collected::Quit => break 'records,
                Collected::Revise(n) => {
                    queue.push_front((index, revision));
                    queue.push_front((n - 1, true));
                    continue 'records;
                }
                Collected::Record { validity, omitted, irrelevant } => {
                    let annotation = AnnotationRecord {
                        sample_id: record.response.sample_id.clone(),
                        config: record.response.config,
                        validity,
                        omitted_relevant: omitted,
                        included_irrelevant: irrelevant,
                        annotator_id: annotator_id.to_string(),
                        annotated_at: Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true),
                    };
                    let line = serde_json::to_string(&annotation).expect("annotation serialize");
                    file.write_all(line.as_bytes())
                        .and_then(|()| file.write_all(b"\n"))
                        .and_then(|()| file.flush())
                        .map_err(|e| io_err(&annotations_path.display().to_string(), e))?;
                    if revision {
                        summary.revised += 1;
                    } else {
                        summary.annotated += 1;
                    }
                    continue 'records;
                }
            }
        }
    }

    writeln!(
        session.output,
        "\nsession done: {} annotated, {} revised, {} already done, {} total",
        summary.annotated, summary.revised, summary.skipped, summary.total
    )
    .map_err(|e| io_err("annotation output", e))?;
    Ok(summary)
}
