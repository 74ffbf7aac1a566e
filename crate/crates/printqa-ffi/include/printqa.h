#ifndef PRINTQA_H
#define PRINTQA_H

/* Generated by cbindgen from crates/printqa-ffi — do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a C-ABI call.
 */
typedef enum PqStatus {
  PQ_STATUS_OK = 0,
  /**
   * Null pointer, malformed UTF-8, or arguments that contradict the
   * requested configuration.
   */
  PQ_STATUS_INVALID_ARGUMENT = 1,
  /**
   * File could not be read, parsed, or validated.
   */
  PQ_STATUS_BAD_INPUT = 2,
  /**
   * The model service failed.
   */
  PQ_STATUS_BACKEND = 3,
  /**
   * Unexpected internal failure.
   */
  PQ_STATUS_INTERNAL = 4,
} PqStatus;

/**
 * Assessment outcome, matching the library's verdict parsing.
 */
typedef enum PqVerdict {
  PQ_VERDICT_GOOD = 0,
  PQ_VERDICT_BAD = 1,
  PQ_VERDICT_INDETERMINATE = 2,
} PqVerdict;

/**
 * One finished assessment.
 */
typedef struct PqAssessment PqAssessment;

/**
 * A model service plus the runtime that drives it.
 */
typedef struct PqBackend PqBackend;

/**
 * A loaded assessment brief.
 */
typedef struct PqBrief PqBrief;

/**
 * A loaded knowledge base.
 */
typedef struct PqKnowledgeBase PqKnowledgeBase;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message from the most recent failing call on this thread, or null.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *pq_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *pq_version(void);

/**
 * Open a backend described by a JSON config file. `cache_dir` may be
 * null to disable caching; `seed` drives deterministic mock embeddings.
 *
 * # Safety
 * `config_path` and (when non-null) `cache_dir` must point to
 * NUL-terminated strings; `out` must be a valid pointer.
 */
enum PqStatus pq_backend_new(const char *config_path,
                             const char *cache_dir,
                             uint64_t seed,
                             struct PqBackend **out);

/**
 * The backend's identifier; owned by the handle.
 *
 * # Safety
 * `handle` must be a live pointer from [`pq_backend_new`] or null.
 */
const char *pq_backend_id(const struct PqBackend *handle);

/**
 * # Safety
 * `handle` must come from [`pq_backend_new`] and not be used afterwards.
 */
void pq_backend_free(struct PqBackend *handle);

/**
 * Load a knowledge base written by the pipeline.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum PqStatus pq_kb_open(const char *path, struct PqKnowledgeBase **out);

/**
 * Number of entries; 0 for null.
 *
 * # Safety
 * `handle` must be live or null.
 */
size_t pq_kb_entry_count(const struct PqKnowledgeBase *handle);

/**
 * Embedding dimensionality; 0 for null.
 *
 * # Safety
 * `handle` must be live or null.
 */
size_t pq_kb_dim(const struct PqKnowledgeBase *handle);

/**
 * Content fingerprint (hex); owned by the handle.
 *
 * # Safety
 * `handle` must be live or null.
 */
const char *pq_kb_fingerprint(const struct PqKnowledgeBase *handle);

/**
 * # Safety
 * `handle` must come from [`pq_kb_open`] and not be used afterwards.
 */
void pq_kb_free(struct PqKnowledgeBase *handle);

/**
 * Load an assessment brief written by the extraction stage.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum PqStatus pq_brief_open(const char *path, struct PqBrief **out);

/**
 * Number of features the brief covers; 0 for null.
 *
 * # Safety
 * `handle` must be live or null.
 */
size_t pq_brief_feature_count(const struct PqBrief *handle);

/**
 * # Safety
 * `handle` must come from [`pq_brief_open`] and not be used afterwards.
 */
void pq_brief_free(struct PqBrief *handle);

/**
 * Assess one image file. `config_name` is one of `generic`,
 * `knowledge_only`, `reference_only`, `full`. `brief` is required
 * exactly when the configuration uses knowledge, `reference_path`
 * exactly when it uses a reference image; passing either to a
 * configuration that does not take it is an error.
 *
 * # Safety
 * `backend` must be live; string arguments must be NUL-terminated or
 * null where documented; `out` must be valid.
 */
enum PqStatus pq_assess_image(struct PqBackend *backend,
                              const char *config_name,
                              const struct PqBrief *brief,
                              const char *reference_path,
                              const char *image_path,
                              struct PqAssessment **out);

/**
 * The parsed verdict; `PQ_VERDICT_INDETERMINATE` for null.
 *
 * # Safety
 * `handle` must be live or null.
 */
enum PqVerdict pq_assessment_verdict(const struct PqAssessment *handle);

/**
 * The full response text; owned by the handle.
 *
 * # Safety
 * `handle` must be live or null.
 */
const char *pq_assessment_text(const struct PqAssessment *handle);

/**
 * Semicolon-joined canonical feature names detected in the response;
 * owned by the handle.
 *
 * # Safety
 * `handle` must be live or null.
 */
const char *pq_assessment_features(const struct PqAssessment *handle);

/**
 * # Safety
 * `handle` must come from [`pq_assess_image`] and not be used afterwards.
 */
void pq_assessment_free(struct PqAssessment *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRINTQA_H */
