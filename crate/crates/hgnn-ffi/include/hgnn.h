#ifndef HGNN_H
#define HGNN_H

/* Generated by cbindgen from the hgnn-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Inference-time ablation switches, OR-able into the `flags` arguments.
 */
#define HGNN_FLAG_NO_GAT1 1

#define HGNN_FLAG_NO_GAT2 2

#define HGNN_FLAG_NO_TIMESPAN 4

/**
 * Status code returned by every fallible call.
 */
typedef enum HgnnStatus {
  HGNN_STATUS_OK = 0,
  /**
   * A required pointer was null or a length was zero.
   */
  HGNN_STATUS_NULL_ARGUMENT = 1,
  /**
   * Invalid hyperparameter or option value.
   */
  HGNN_STATUS_CONFIG = 2,
  /**
   * Malformed checkpoint or out-of-range index.
   */
  HGNN_STATUS_DATA = 3,
  HGNN_STATUS_IO = 4,
  HGNN_STATUS_NUMERICAL = 5,
} HgnnStatus;

/**
 * Opaque trained model handle.
 */
typedef struct HgnnModel HgnnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint from `path` (NUL-terminated UTF-8) into a fresh
 * handle. On success the handle is owned by the caller and must be
 * released with `hgnn_model_free`.
 *
 * # Safety
 * `path` must point to a NUL-terminated string and `out_model` to a
 * writable pointer slot.
 */
enum HgnnStatus hgnn_model_load(const char *path, struct HgnnModel **out_model);

/**
 * Releases a handle returned by `hgnn_model_load`. Null is a no-op.
 *
 * # Safety
 * `model` must be a pointer previously returned by `hgnn_model_load`
 * that has not been freed yet.
 */
void hgnn_model_free(struct HgnnModel *model);

/**
 * Number of items in the model's catalog, 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint64_t hgnn_model_vocab_size(const struct HgnnModel *model);

/**
 * Writes the model's embedding width, head count, and factor count.
 * Null output slots are skipped.
 *
 * # Safety
 * `model` must be a live handle; out pointers must be writable or null.
 */
enum HgnnStatus hgnn_model_dims(const struct HgnnModel *model,
                                uint64_t *out_d,
                                uint64_t *out_heads,
                                uint64_t *out_factors);

/**
 * Scores one candidate item against an interaction window.
 *
 * `items`/`times` are parallel arrays of length `len` (item indices and
 * Unix seconds, chronological). The result in (0, 1) lands in
 * `out_score`.
 *
 * # Safety
 * Array pointers must reference `len` readable elements; `out_score`
 * must be writable.
 */
enum HgnnStatus hgnn_score(const struct HgnnModel *model,
                           const uint64_t *items,
                           const int64_t *times,
                           uintptr_t len,
                           uint64_t candidate,
                           int64_t candidate_time,
                           double t_bound_days,
                           uint32_t flags,
                           double *out_score);

/**
 * Ranks the whole catalog for an interaction window and writes the top
 * `top_k` item indices and scores (descending score, ascending index on
 * ties). `out_count` receives the number written, which is the smaller
 * of `top_k` and the catalog size.
 *
 * # Safety
 * `out_items` and `out_scores` must have room for `top_k` elements.
 */
enum HgnnStatus hgnn_recommend(const struct HgnnModel *model,
                               const uint64_t *items,
                               const int64_t *times,
                               uintptr_t len,
                               int64_t now,
                               double t_bound_days,
                               uint32_t flags,
                               uintptr_t top_k,
                               uint64_t *out_items,
                               double *out_scores,
                               uintptr_t *out_count);

/**
 * Message for the most recent failure on this thread; empty until the
 * first failure. The pointer stays valid until the next failing call on
 * the same thread.
 */
const char *hgnn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hgnn_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HGNN_H */
