//! Exercises the C ABI from Rust: handle lifecycles, status codes, and
//! the per-thread error message.

use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use printqa::extract::{FeatureKnowledge, KnowledgeBrief};
use printqa::kb::{save_database, EmbeddingVector, KnowledgeDatabase, KnowledgeEntry};
use printqa_ffi::*;

// Smallest valid PNG (1x1 transparent pixel); image files only need to
// exist and be readable.
const TINY_PNG: &[u8] = &[
    0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44,
    0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1F,
    0x15, 0xC4, 0x89, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9C, 0x63, 0x00,
    0x01, 0x00, 0x00, 0x05, 0x00, 0x01, 0x0D, 0x0A, 0x2D, 0xB4, 0x00, 0x00, 0x00, 0x00, 0x49,
    0x45, 0x4E, 0x44, 0xAE, 0x42, 0x60, 0x82,
];

struct Fixture {
    _dir: tempfile::TempDir,
    config: PathBuf,
    target: PathBuf,
    reference: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let script = r#"{
        "replies": [
            {
                "pattern": "Apply each feature's measurement procedure",
                "reply": "Understood; I will follow the stated procedures."
            },
            {
                "pattern": "Target image ID: weld_target",
                "reply": "The bead width sits inside the good range. VERDICT: GOOD"
            }
        ],
        "fallback_reply": "VERDICT: INDETERMINATE"
    }"#;
    std::fs::write(dir.path().join("script.json"), script).unwrap();
    let config = dir.path().join("backend.json");
    std::fs::write(
        &config,
        r#"{
            "backend_id": "mock",
            "base_url": "mock://local",
            "chat_model": "mock-chat",
            "embed_model": "mock-embed",
            "mock_script": "script.json"
        }"#,
    )
    .unwrap();
    let target = dir.path().join("weld_target.png");
    std::fs::write(&target, TINY_PNG).unwrap();
    let reference = dir.path().join("reference.png");
    std::fs::write(&reference, TINY_PNG).unwrap();
    Fixture { _dir: dir, config, target, reference }
}

fn cstring(path: &Path) -> CString {
    CString::new(path.to_str().unwrap()).unwrap()
}

fn read_str<'a>(p: *const c_char) -> &'a str {
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap()
}

fn last_error() -> String {
    read_str(pq_last_error_message()).to_string()
}

fn open_backend(config: &Path) -> *mut PqBackend {
    let path = cstring(config);
    let mut handle: *mut PqBackend = ptr::null_mut();
    let status = unsafe { pq_backend_new(path.as_ptr(), ptr::null(), 0, &mut handle) };
    assert_eq!(status, PqStatus::Ok, "backend open failed: {}", last_error());
    assert!(!handle.is_null());
    handle
}

fn sample_brief() -> KnowledgeBrief {
    KnowledgeBrief {
        features: vec![
            FeatureKnowledge {
                feature_name: "bead width".to_string(),
                measurement_procedure: "measure across the widest cross-section".to_string(),
                good_range: "4.0 mm to 6.0 mm".to_string(),
                supporting_hits: vec![],
            },
            FeatureKnowledge {
                feature_name: "dilution".to_string(),
                measurement_procedure: "ratio of melted base area to total area".to_string(),
                good_range: "10% to 30%".to_string(),
                supporting_hits: vec![],
            },
        ],
        raw_feature_answer: "bead width; dilution".to_string(),
        generated_at: "2026-01-01T00:00:00Z".to_string(),
        kb_fingerprint: "f".repeat(64),
    }
}

#[test]
fn version_is_exposed() {
    assert_eq!(read_str(pq_version()), env!("CARGO_PKG_VERSION"));
}

#[test]
fn backend_opens_and_reports_its_id() {
    let fx = fixture();
    let backend = open_backend(&fx.config);
    unsafe {
        assert_eq!(read_str(pq_backend_id(backend)), "mock");
        pq_backend_free(backend);
    }
}

#[test]
fn missing_config_is_bad_input_with_message() {
    let path = CString::new("/nonexistent/backend.json").unwrap();
    let mut handle: *mut PqBackend = ptr::null_mut();
    let status = unsafe { pq_backend_new(path.as_ptr(), ptr::null(), 0, &mut handle) };
    assert_eq!(status, PqStatus::BadInput);
    assert!(handle.is_null());
    assert!(last_error().contains("/nonexistent/backend.json"), "{}", last_error());
}

#[test]
fn null_arguments_are_rejected_by_name() {
    let mut handle: *mut PqBackend = ptr::null_mut();
    let status = unsafe { pq_backend_new(ptr::null(), ptr::null(), 0, &mut handle) };
    assert_eq!(status, PqStatus::InvalidArgument);
    assert!(last_error().contains("config_path"));

    let path = CString::new("x").unwrap();
    let status = unsafe { pq_backend_new(path.as_ptr(), ptr::null(), 0, ptr::null_mut()) };
    assert_eq!(status, PqStatus::InvalidArgument);
    assert!(last_error().contains("out"));
}

#[test]
fn assess_generic_end_to_end() {
    let fx = fixture();
    let backend = open_backend(&fx.config);
    let config_name = CString::new("generic").unwrap();
    let image = cstring(&fx.target);
    let mut assessment: *mut PqAssessment = ptr::null_mut();
    unsafe {
        let status = pq_assess_image(
            backend,
            config_name.as_ptr(),
            ptr::null(),
            ptr::null(),
            image.as_ptr(),
            &mut assessment,
        );
        assert_eq!(status, PqStatus::Ok, "{}", last_error());
        assert_eq!(pq_assessment_verdict(assessment), PqVerdict::Good);
        assert!(read_str(pq_assessment_text(assessment)).contains("VERDICT: GOOD"));
        assert_eq!(read_str(pq_assessment_features(assessment)), "bead width");
        pq_assessment_free(assessment);
        pq_backend_free(backend);
    }
}

#[test]
fn assess_full_uses_brief_and_reference() {
    let fx = fixture();
    let brief_path = fx.config.parent().unwrap().join("brief.json");
    sample_brief().save(&brief_path).unwrap();

    let backend = open_backend(&fx.config);
    let mut brief: *mut PqBrief = ptr::null_mut();
    let brief_c = cstring(&brief_path);
    unsafe {
        assert_eq!(pq_brief_open(brief_c.as_ptr(), &mut brief), PqStatus::Ok);
        assert_eq!(pq_brief_feature_count(brief), 2);
    }

    let config_name = CString::new("full").unwrap();
    let reference = cstring(&fx.reference);
    let image = cstring(&fx.target);
    let mut assessment: *mut PqAssessment = ptr::null_mut();
    unsafe {
        let status = pq_assess_image(
            backend,
            config_name.as_ptr(),
            brief,
            reference.as_ptr(),
            image.as_ptr(),
            &mut assessment,
        );
        assert_eq!(status, PqStatus::Ok, "{}", last_error());
        assert_eq!(pq_assessment_verdict(assessment), PqVerdict::Good);
        pq_assessment_free(assessment);
        pq_brief_free(brief);
        pq_backend_free(backend);
    }
}

#[test]
fn config_and_argument_mismatches_are_invalid() {
    let fx = fixture();
    let brief_path = fx.config.parent().unwrap().join("brief.json");
    sample_brief().save(&brief_path).unwrap();

    let backend = open_backend(&fx.config);
    let mut brief: *mut PqBrief = ptr::null_mut();
    let brief_c = cstring(&brief_path);
    unsafe {
        assert_eq!(pq_brief_open(brief_c.as_ptr(), &mut brief), PqStatus::Ok);
    }
    let image = cstring(&fx.target);
    let reference = cstring(&fx.reference);
    let mut assessment: *mut PqAssessment = ptr::null_mut();

    unsafe {
        // `full` needs both the brief and the reference image.
        let full = CString::new("full").unwrap();
        let status = pq_assess_image(
            backend,
            full.as_ptr(),
            ptr::null(),
            reference.as_ptr(),
            image.as_ptr(),
            &mut assessment,
        );
        assert_eq!(status, PqStatus::InvalidArgument);
        assert!(last_error().contains("brief"), "{}", last_error());
        assert!(assessment.is_null());

        // `generic` takes neither.
        let generic = CString::new("generic").unwrap();
        let status = pq_assess_image(
            backend,
            generic.as_ptr(),
            brief,
            ptr::null(),
            image.as_ptr(),
            &mut assessment,
        );
        assert_eq!(status, PqStatus::InvalidArgument);
        assert!(last_error().contains("brief"), "{}", last_error());

        // Unknown configuration names are caught before any file IO.
        let bogus = CString::new("bogus").unwrap();
        let status = pq_assess_image(
            backend,
            bogus.as_ptr(),
            ptr::null(),
            ptr::null(),
            image.as_ptr(),
            &mut assessment,
        );
        assert_eq!(status, PqStatus::InvalidArgument);
        assert!(last_error().contains("bogus"), "{}", last_error());

        pq_brief_free(brief);
        pq_backend_free(backend);
    }
}

#[test]
fn unreadable_image_is_bad_input() {
    let fx = fixture();
    let backend = open_backend(&fx.config);
    let config_name = CString::new("generic").unwrap();
    let image = CString::new("/nonexistent/image.png").unwrap();
    let mut assessment: *mut PqAssessment = ptr::null_mut();
    unsafe {
        let status = pq_assess_image(
            backend,
            config_name.as_ptr(),
            ptr::null(),
            ptr::null(),
            image.as_ptr(),
            &mut assessment,
        );
        assert_eq!(status, PqStatus::BadInput);
        pq_backend_free(backend);
    }
}

#[test]
fn knowledge_base_accessors_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let entry = |id: &str, values: Vec<f64>| KnowledgeEntry {
        entry_id: id.to_string(),
        summary: format!("summary for {id}"),
        embedding: EmbeddingVector::from_values(values),
        doc_id: "doc".to_string(),
        chunk_id: format!("{id}-chunk"),
        context_title: "bead geometry study".to_string(),
        backend_id: "mock".to_string(),
    };
    let db = KnowledgeDatabase::new(
        vec![entry("e1", vec![1.0, 0.0, 0.0, 0.5]), entry("e2", vec![0.0, 1.0, 0.0, 0.5])],
        4,
    )
    .unwrap();
    let path = dir.path().join("kb.jsonl");
    save_database(&db, &path).unwrap();

    let path_c = cstring(&path);
    let mut kb: *mut PqKnowledgeBase = ptr::null_mut();
    unsafe {
        assert_eq!(pq_kb_open(path_c.as_ptr(), &mut kb), PqStatus::Ok);
        assert_eq!(pq_kb_entry_count(kb), 2);
        assert_eq!(pq_kb_dim(kb), 4);
        assert_eq!(read_str(pq_kb_fingerprint(kb)), db.fingerprint());
        pq_kb_free(kb);
    }

    let missing = CString::new("/nonexistent/kb.jsonl").unwrap();
    unsafe {
        assert_eq!(pq_kb_open(missing.as_ptr(), &mut kb), PqStatus::BadInput);
    }
}

#[test]
fn null_handles_are_inert() {
    unsafe {
        assert!(pq_backend_id(ptr::null()).is_null());
        assert_eq!(pq_kb_entry_count(ptr::null()), 0);
        assert_eq!(pq_kb_dim(ptr::null()), 0);
        assert!(pq_kb_fingerprint(ptr::null()).is_null());
        assert_eq!(pq_brief_feature_count(ptr::null()), 0);
        assert_eq!(pq_assessment_verdict(ptr::null()), PqVerdict::Indeterminate);
        assert!(pq_assessment_text(ptr::null()).is_null());
        assert!(pq_assessment_features(ptr::null()).is_null());
        pq_backend_free(ptr::null_mut());
        pq_kb_free(ptr::null_mut());
        pq_brief_free(ptr::null_mut());
        pq_assessment_free(ptr::null_mut());
    }
}
