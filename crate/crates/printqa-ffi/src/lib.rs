//! C ABI over the assessment pipeline.
//!
//! Conventions: every fallible call returns a [`PqStatus`]; results come
//! back through out-pointers to opaque handles that must be released with
//! the matching `*_free`. On failure a human-readable message is stored
//! per thread and stays valid until the next failing call on that thread
//! ([`pq_last_error_message`]). Strings cross the boundary as
//! NUL-terminated UTF-8. Handles are not thread-safe unless noted; a
//! backend handle owns its own runtime and may be shared behind the
//! caller's own synchronization.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use printqa::assess::{
    build_prompt_chain, run_assessment, AblationConfig, AssessError, AssessmentResponse,
    FeatureVocabulary, ImageInput, ImageRole, Verdict,
};
use printqa::backend::{build_backend, BackendConfig, BackendError, ModelBackend};
use printqa::extract::KnowledgeBrief;
use printqa::kb::{load_database, KnowledgeDatabase};

/// Result of a C-ABI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PqStatus {
    Ok = 0,
    /// Null pointer, malformed UTF-8, or arguments that contradict the
    /// requested configuration.
    InvalidArgument = 1,
    /// File could not be read, parsed, or validated.
    BadInput = 2,
    /// The model service failed.
    Backend = 3,
    /// Unexpected internal failure.
    Internal = 4,
}

/// Assessment outcome, matching the library's verdict parsing.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PqVerdict {
    Good = 0,
    Bad = 1,
    Indeterminate = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: PqStatus, message: impl std::fmt::Display) -> PqStatus {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(text).expect("NULs stripped"));
    });
    status
}

/// The message from the most recent failing call on this thread, or null.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn pq_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pq_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// A model service plus the runtime that drives it.
pub struct PqBackend {
    backend: Arc<dyn ModelBackend>,
    runtime: tokio::runtime::Runtime,
    id: CString,
}

/// A loaded knowledge base.
pub struct PqKnowledgeBase {
    db: KnowledgeDatabase,
    fingerprint: CString,
}

/// A loaded assessment brief.
pub struct PqBrief {
    brief: KnowledgeBrief,
}

/// One finished assessment.
pub struct PqAssessment {
    response: AssessmentResponse,
    text: CString,
    features: CString,
}

unsafe fn required_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, PqStatus> {
    if p.is_null() {
        return Err(fail(PqStatus::InvalidArgument, format!("{what} must not be null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PqStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn optional_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, PqStatus> {
    if p.is_null() { Ok(None) } else { required_str(p, what).map(Some) }
}

fn require_out<T>(out: *mut *mut T, what: &str) -> Result<(), PqStatus> {
    if out.is_null() {
        return Err(fail(PqStatus::InvalidArgument, format!("{what} must not be null")));
    }
    Ok(())
}

fn backend_status(e: &BackendError) -> PqStatus {
    match e {
        BackendError::Config(_) => PqStatus::BadInput,
        _ => PqStatus::Backend,
    }
}

fn c_string(text: &str) -> CString {
    CString::new(text.replace('\0', " ")).expect("NULs stripped")
}

fn stem_of(path: &str) -> Result<String, PqStatus> {
    Path::new(path)
        .file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| {
            fail(PqStatus::InvalidArgument, format!("cannot derive an image id from {path}"))
        })
}

/// Open a backend described by a JSON config file. `cache_dir` may be
/// null to disable caching; `seed` drives deterministic mock embeddings.
///
/// # Safety
/// `config_path` and (when non-null) `cache_dir` must point to
/// NUL-terminated strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pq_backend_new(
    config_path: *const c_char,
    cache_dir: *const c_char,
    seed: u64,
    out: *mut *mut PqBackend,
) -> PqStatus {
    let run = || -> Result<*mut PqBackend, PqStatus> {
        require_out(out, "out")?;
        let config_path = required_str(config_path, "config_path")?;
        let cache_dir = optional_str(cache_dir, "cache_dir")?;
        let config = BackendConfig::load(Path::new(config_path))
            .map_err(|e| fail(PqStatus::BadInput, e))?;
        let backend = build_backend(&config, cache_dir.map(Path::new), seed)
            .map_err(|e| fail(backend_status(&e), e))?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(1)
            .enable_all()
            .build()
            .map_err(|e| fail(PqStatus::Internal, e))?;
        let id = c_string(backend.backend_id());
        Ok(Box::into_raw(Box::new(PqBackend { backend, runtime, id })))
    };
    match run() {
        Ok(handle) => {
            *out = handle;
            PqStatus::Ok
        }
        Err(status) => status,
    }
}

/// The backend's identifier; owned by the handle.
///
/// # Safety
/// `handle` must be a live pointer from [`pq_backend_new`] or null.
#[no_mangle]
pub unsafe extern "C" fn pq_backend_id(handle: *const PqBackend) -> *const c_char {
    handle.as_ref().map_or(ptr::null(), |h| h.id.as_ptr())
}

/// # Safety
/// `handle` must come from [`pq_backend_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pq_backend_free(handle: *mut PqBackend) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Load a knowledge base written by the pipeline.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pq_kb_open(path: *const c_char, out: *mut *mut PqKnowledgeBase) -> PqStatus {
    let run = || -> Result<*mut PqKnowledgeBase, PqStatus> {
        require_out(out, "out")?;
        let path = required_str(path, "path")?;
        let db = load_database(Path::new(path)).map_err(|e| fail(PqStatus::BadInput, e))?;
        let fingerprint = c_string(&db.fingerprint());
        Ok(Box::into_raw(Box::new(PqKnowledgeBase { db, fingerprint })))
    };
    match run() {
        Ok(handle) => {
            *out = handle;
            PqStatus::Ok
        }
        Err(status) => status,
    }
}

/// Number of entries; 0 for null.
///
/// # Safety
/// `handle` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn pq_kb_entry_count(handle: *const PqKnowledgeBase) -> usize {
    handle.as_ref().map_or(0, |h| h.db.len())
}

/// Embedding dimensionality; 0 for null.
///
/// # Safety
/// `handle` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn pq_kb_dim(handle: *const PqKnowledgeBase) -> usize {
    handle.as_ref().map_or(0, |h| h.db.dim)
}

/// Content fingerprint (hex); owned by the handle.
///
/// # Safety
/// `handle` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn pq_kb_fingerprint(handle: *const PqKnowledgeBase) -> *const c_char {
    handle.as_ref().map_or(ptr::null(), |h| h.fingerprint.as_ptr())
}

/// # Safety
/// `handle` must come from [`pq_kb_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pq_kb_free(handle: *mut PqKnowledgeBase) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Load an assessment brief written by the extraction stage.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pq_brief_open(path: *const c_char, out: *mut *mut PqBrief) -> PqStatus {
    let run = || -> Result<*mut PqBrief, PqStatus> {
        require_out(out, "out")?;
        let path = required_str(path, "path")?;
        let brief =
            KnowledgeBrief::load(Path::new(path)).map_err(|e| fail(PqStatus::BadInput, e))?;
        Ok(Box::into_raw(Box::new(PqBrief { brief })))
    };
    match run() {
        Ok(handle) => {
            *out = handle;
            PqStatus::Ok
        }
        Err(status) => status,
    }
}

/// Number of features the brief covers; 0 for null.
///
/// # Safety
/// `handle` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn pq_brief_feature_count(handle: *const PqBrief) -> usize {
    handle.as_ref().map_or(0, |h| h.brief.features.len())
}

/// # Safety
/// `handle` must come from [`pq_brief_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pq_brief_free(handle: *mut PqBrief) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Assess one image file. `config_name` is one of `generic`,
/// `knowledge_only`, `reference_only`, `full`. `brief` is required
/// exactly when the configuration uses knowledge, `reference_path`
/// exactly when it uses a reference image; passing either to a
/// configuration that does not take it is an error.
///
/// # Safety
/// `backend` must be live; string arguments must be NUL-terminated or
/// null where documented; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pq_assess_image(
    backend: *mut PqBackend,
    config_name: *const c_char,
    brief: *const PqBrief,
    reference_path: *const c_char,
    image_path: *const c_char,
    out: *mut *mut PqAssessment,
) -> PqStatus {
    let run = || -> Result<*mut PqAssessment, PqStatus> {
        require_out(out, "out")?;
        let backend = backend
            .as_ref()
            .ok_or_else(|| fail(PqStatus::InvalidArgument, "backend must not be null"))?;
        let config_name = required_str(config_name, "config_name")?;
        let reference_path = optional_str(reference_path, "reference_path")?;
        let image_path = required_str(image_path, "image_path")?;

        let config = AblationConfig::from_name(config_name)
            .map_err(|e| fail(PqStatus::InvalidArgument, e))?;
        let brief = brief.as_ref().map(|b| &b.brief);
        let reference = match reference_path {
            Some(path) => Some(
                ImageInput::from_file(&stem_of(path)?, Path::new(path), ImageRole::Reference)
                    .map_err(|e| fail(PqStatus::BadInput, e))?,
            ),
            None => None,
        };
        let target = ImageInput::from_file(&stem_of(image_path)?, Path::new(image_path), ImageRole::Target)
            .map_err(|e| fail(PqStatus::BadInput, e))?;

        let chain = build_prompt_chain(config, brief, reference.as_ref(), &target)
            .map_err(|e| fail(PqStatus::InvalidArgument, e))?;
        let response = backend
            .runtime
            .block_on(run_assessment(
                &chain,
                backend.backend.as_ref(),
                &target.image_id,
                config,
                &FeatureVocabulary::default(),
            ))
            .map_err(|e| match e {
                AssessError::Backend(ref inner) => fail(backend_status(inner), &e),
                other => fail(PqStatus::Internal, other),
            })?;
        let text = c_string(&response.raw_text);
        let features = c_string(&response.mentioned_features.join(";"));
        Ok(Box::into_raw(Box::new(PqAssessment { response, text, features })))
    };
    match run() {
        Ok(handle) => {
            *out = handle;
            PqStatus::Ok
        }
        Err(status) => status,
    }
}

/// The parsed verdict; `PQ_VERDICT_INDETERMINATE` for null.
///
/// # Safety
/// `handle` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn pq_assessment_verdict(handle: *const PqAssessment) -> PqVerdict {
    match handle.as_ref().map(|h| h.response.verdict) {
        Some(Verdict::Good) => PqVerdict::Good,
        Some(Verdict::Bad) => PqVerdict::Bad,
        Some(Verdict::Indeterminate) | None => PqVerdict::Indeterminate,
    }
}

/// The full response text; owned by the handle.
///
/// # Safety
/// `handle` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn pq_assessment_text(handle: *const PqAssessment) -> *const c_char {
    handle.as_ref().map_or(ptr::null(), |h| h.text.as_ptr())
}

/// Semicolon-joined canonical feature names detected in the response;
/// owned by the handle.
///
/// # Safety
/// `handle` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn pq_assessment_features(handle: *const PqAssessment) -> *const c_char {
    handle.as_ref().map_or(ptr::null(), |h| h.features.as_ptr())
}

/// # Safety
/// `handle` must come from [`pq_assess_image`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pq_assessment_free(handle: *mut PqAssessment) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
