//! Helpers shared by the integration suites: fixture paths, CLI
//! invocation, and timestamp masking for byte-level output comparison.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

// Smallest valid PNG: 1x1 transparent pixel.
pub const TINY_PNG: &[u8] = &[
    0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44,
    0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1F,
    0x15, 0xC4, 0x89, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9C, 0x62, 0x00,
    0x01, 0x00, 0x00, 0x05, 0x00, 0x01, 0x0D, 0x0A, 0x2D, 0xB4, 0x00, 0x00, 0x00, 0x00, 0x49,
    0x45, 0x4E, 0x44, 0xAE, 0x42, 0x60, 0x82,
];

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures_dir().join(name)
}

/// Run the CLI binary with `args`, working directory `dir`.
pub fn run_cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_printqa"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

pub fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

pub fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "expected exit {code}\nstdout: {}\nstderr: {}",
        stdout_of(output),
        stderr_of(output),
    );
}

/// Zero out the fields that are allowed to differ between identical runs:
/// wall-clock timestamps and measured latencies.
pub fn mask_volatile(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for (key, item) in map.iter_mut() {
                match key.as_str() {
                    "latency_ms" => *item = serde_json::Value::from(0),
                    "created_at" | "generated_at" | "annotated_at" => {
                        *item = serde_json::Value::from("MASKED")
                    }
                    _ => mask_volatile(item),
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(mask_volatile),
        _ => {}
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .unwrap_or_else(|e| panic!("read_dir {}: {e}", dir.display()))
        .map(|e| e.expect("dir entry").path())
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_files(&path, out);
        } else {
            out.push(path);
        }
    }
}

/// Every file under `dir`, keyed by relative path, with JSON and JSONL
/// content re-serialized after masking volatile fields. Two runs of the
/// same pipeline must produce equal trees.
pub fn masked_tree(dir: &Path) -> BTreeMap<String, String> {
    let mut files = Vec::new();
    collect_files(dir, &mut files);
    let mut tree = BTreeMap::new();
    for path in files {
        let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        let raw = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
        let content = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                let mut value: serde_json::Value = serde_json::from_str(&raw)
                    .unwrap_or_else(|e| panic!("parse {}: {e}", path.display()));
                mask_volatile(&mut value);
                serde_json::to_string_pretty(&value).unwrap()
            }
            Some("jsonl") => raw
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|line| {
                    let mut value: serde_json::Value = serde_json::from_str(line)
                        .unwrap_or_else(|e| panic!("parse line of {}: {e}", path.display()));
                    mask_volatile(&mut value);
                    serde_json::to_string(&value).unwrap()
                })
                .collect::<Vec<_>>()
                .join("\n"),
            _ => raw,
        };
        tree.insert(rel, content);
    }
    tree
}
