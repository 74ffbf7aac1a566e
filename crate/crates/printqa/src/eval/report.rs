//! Renders the metrics table as markdown, CSV, and a full-precision JSON
//! sidecar.
//!
//! Displayed numbers are rounded half-up to two decimals; the sidecar
//! keeps the unrounded values. Half-up matters: the default `{:.2}`
//! formatting rounds ties to even, which disagrees with the reporting
//! convention on values like 3.625.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assess::DatasetManifest;

use super::ablation::load_run_records;
use super::{compute_cells, load_annotations, EvalError, MetricsCell};

/// An externally sourced comparison column. It carries only a conclusion
/// correctness value; the other rows render as NA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineColumn {
    pub label: String,
    pub conclusion_correctness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cells: Vec<MetricsCell>,
    pub baseline: Option<BaselineColumn>,
}

/// Format with exactly two decimals, rounding halves up: 3.625 → "3.63",
/// 0.958333… → "0.96".
pub fn round2_half_up(v: f64) -> String {
    debug_assert!(v.is_finite() && v >= 0.0, "report values are non-negative");
    let cents = (v * 100.0 + 0.5).floor() as i64;
    format!("{}.{:02}", cents / 100, cents % 100)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(round2_half_up).unwrap_or_else(|| "NA".to_string())
}

/// The table as rows of cell strings; first row is the header. Markdown
/// and CSV are two framings of this one grid, so their cells agree.
fn grid(report: &MetricsReport) -> Vec<Vec<String>> {
    let mut header = vec!["metric".to_string()];
    for cell in &report.cells {
        header.push(format!("{} {}", cell.backend_id, cell.config));
    }
    if let Some(baseline) = &report.baseline {
        header.push(baseline.label.clone());
    }

    let mut rows = vec![header];
    let push_row = |rows: &mut Vec<Vec<String>>,
                    label: &str,
                    value: &dyn Fn(&MetricsCell) -> String,
                    baseline: String| {
        let mut row = vec![label.to_string()];
        row.extend(report.cells.iter().map(value));
        if report.baseline.is_some() {
            row.push(baseline);
        }
        rows.push(row);
    };
    push_row(&mut rows, "validity", &|c| opt_cell(c.validity_mean), "NA".into());
    push_row(&mut rows, "knowledge relevance (0-4)", &|c| opt_cell(c.relevance_mean), "NA".into());
    push_row(
        &mut rows,
        "conclusion correctness",
        &|c| round2_half_up(c.conclusion_correctness),
        report
            .baseline
            .as_ref()
            .map(|b| round2_half_up(b.conclusion_correctness))
            .unwrap_or_default(),
    );
    push_row(&mut rows, "samples", &|c| c.n_samples.to_string(), "NA".into());
    rows
}

pub fn render_markdown(report: &MetricsReport) -> String {
    let rows = grid(report);
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        out.push_str("| ");
        out.push_str(&row.join(" | "));
        out.push_str(" |\n");
        if i == 0 {
            out.push_str(&format!("|{}\n", " --- |".repeat(row.len())));
        }
    }
    out
}

pub fn render_csv(report: &MetricsReport) -> String {
    grid(report).iter().map(|row| row.join(",") + "\n").collect()
}

/// Full-precision machine-readable form of the same report.
pub fn sidecar_json(report: &MetricsReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialize") + "\n"
}

#[derive(Debug)]
pub struct RenderedPaths {
    pub markdown: PathBuf,
    pub csv: PathBuf,
    pub sidecar: PathBuf,
}

/// Write all three renderings next to each other, keyed off the markdown
/// path's stem.
pub fn write_report(report: &MetricsReport, markdown_path: &Path) -> Result<RenderedPaths, EvalError> {
    let paths = RenderedPaths {
        markdown: markdown_path.to_path_buf(),
        csv: markdown_path.with_extension("csv"),
        sidecar: markdown_path.with_extension("json"),
    };
    if let Some(parent) = markdown_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| EvalError::Io { path: parent.display().to_string(), source: e })?;
    }
    let write = |path: &Path, body: String| {
        std::fs::write(path, body)
            .map_err(|e| EvalError::Io { path: path.display().to_string(), source: e })
    };
    write(&paths.markdown, render_markdown(report))?;
    write(&paths.csv, render_csv(report))?;
    write(&paths.sidecar, sidecar_json(report))?;
    Ok(paths)
}

/// Assemble a report from finished run directories. Each directory
/// contributes its responses plus, when present, its `annotations.jsonl`.
pub fn report_from_runs(
    run_dirs: &[PathBuf],
    annotator: Option<&str>,
    baseline: Option<BaselineColumn>,
) -> Result<MetricsReport, EvalError> {
    report_from_runs_with(run_dirs, None, None, annotator, baseline)
}

/// Like [`report_from_runs`], but explicit annotation/manifest files take
/// the place of each run directory's own copies.
pub fn report_from_runs_with(
    run_dirs: &[PathBuf],
    annotations_override: Option<&Path>,
    manifest_override: Option<&Path>,
    annotator: Option<&str>,
    baseline: Option<BaselineColumn>,
) -> Result<MetricsReport, EvalError> {
    let mut cells = Vec::new();
    for run_dir in run_dirs {
        let records = load_run_records(run_dir)?;
        let responses: Vec<_> = records.into_iter().map(|r| r.response).collect();
        let manifest = match manifest_override {
            Some(path) => DatasetManifest::load(path)?,
            None => DatasetManifest::load(&run_dir.join("manifest.json"))?,
        };
        let annotations = match annotations_override {
            Some(path) => load_annotations(path)?,
            None => {
                let path = run_dir.join("annotations.jsonl");
                if path.exists() { load_annotations(&path)? } else { Vec::new() }
            }
        };
        cells.extend(compute_cells(&responses, &annotations, &manifest, annotator)?);
    }
    let mut seen = BTreeSet::new();
    for cell in &cells {
        if !seen.insert((cell.backend_id.clone(), cell.config)) {
            return Err(EvalError::DuplicateCell {
                backend_id: cell.backend_id.clone(),
                config: cell.config,
            });
        }
    }
    cells.sort_by(|a, b| {
        a.backend_id.cmp(&b.backend_id).then_with(|| {
            let pos = |c: crate::assess::AblationConfig| {
                crate::assess::AblationConfig::ALL.iter().position(|x| *x == c).unwrap()
            };
            pos(a.config).cmp(&pos(b.config))
        })
    });
    Ok(MetricsReport { cells, baseline })
}
