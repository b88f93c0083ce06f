#ifndef DYADRANK_H
#define DYADRANK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Success.
#define DR_OK 0

// A required pointer argument was null.
#define DR_ERR_NULL_ARG -1

// A string argument was not valid UTF-8.
#define DR_ERR_UTF8 -2

// The config or input was rejected before any work ran.
#define DR_ERR_CONFIG -3

// The run itself failed; see dr_last_error_message().
#define DR_ERR_RUNTIME -4

// An index was out of range for the handle it was applied to.
#define DR_ERR_BOUNDS -5

// Loaded metric frames, opaque to the host. Free with dr_frames_free.
typedef struct DrFrames DrFrames;

// One frame flattened to plain scalars. Absent values use sentinels:
// `eval_day` 0 means the frame was never evaluated, NaN means the metric
// had no value, and -1 means the embedding side is not part of the model.
typedef struct {
  // 1-based index of the last day trained into this frame.
  uint32_t day;
  // 1-based day whose head was scored, 0 when the frame has no eval.
  uint32_t eval_day;
  uint64_t eval_examples;
  // Mean NCE across tasks, NaN when absent. Lower is better, 1 matches
  // always predicting the base rate.
  double mean_nce;
  // Mean ROC AUC across tasks, NaN when absent.
  double mean_auc;
  // Share of positive labels in the evaluated head, NaN when absent.
  double positive_rate;
  // Touched item-side embedding parameters, -1 when the side is absent.
  int64_t item_active_params;
  // Distinct raw item IDs hashed into the table, -1 when absent.
  int64_t item_distinct_ids;
  // Touched user-side embedding parameters, -1 when the side is absent.
  int64_t user_active_params;
  // Distinct raw user IDs hashed into the table, -1 when absent.
  int64_t user_distinct_ids;
} DrFrameView;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Engine version as a static NUL-terminated string. Never null, never freed.
const char *dr_version(void);

// Prose for the current thread's most recent failure, empty if none.
// The pointer stays valid until the next failing call on the same thread.
const char *dr_last_error_message(void);

// Normalized cross entropy of `len` predictions against binary labels,
// written to `out`. Fails if labels are one-class or predictions are not
// probabilities.
//
// # Safety
// `preds` and `labels` must point to `len` readable elements; `out` must be
// writable.
int dr_nce(const double *preds, const uint8_t *labels, uintptr_t len, double *out);

// ROC AUC of `len` predictions against binary labels, written to `out`.
// Tied predictions count half.
//
// # Safety
// `preds` and `labels` must point to `len` readable elements; `out` must be
// writable.
int dr_auc(const double *preds, const uint8_t *labels, uintptr_t len, double *out);

// Generates a synthetic interaction log from generator config TOML text and
// writes events.bin, meta.json, truth.json (and probe.bin when configured)
// under `out_dir`. The event count is written to `events_out` when non-null.
//
// # Safety
// `config_toml` and `out_dir` must be NUL-terminated; `events_out` may be
// null.
int dr_generate_synthetic(const char *config_toml, const char *out_dir, uint64_t *events_out);

// Runs a training spec given as TOML text; artifacts land in the spec's
// output directory exactly as with the command-line `train`. When
// `frames_out` is non-null it receives the number of metric frames produced
// (0 for a static run, which writes outcome.json instead).
//
// # Safety
// `spec_toml` must be NUL-terminated; `frames_out` may be null.
int dr_run_train(const char *spec_toml, uint64_t *frames_out);

// Loads a frames.jsonl file produced by a recurrent run. Returns null on
// failure (message via dr_last_error_message).
//
// # Safety
// `path` must be NUL-terminated.
DrFrames *dr_frames_load(const char *path);

// Number of frames in the handle; 0 for null.
//
// # Safety
// `handle` must be null or a pointer from dr_frames_load.
uintptr_t dr_frames_count(const DrFrames *handle);

// Copies frame `index` into `view`.
//
// # Safety
// `handle` must come from dr_frames_load and `view` must be writable.
int dr_frames_get(const DrFrames *handle, uintptr_t index, DrFrameView *view);

// Frees a handle from dr_frames_load. Null is a no-op.
//
// # Safety
// `handle` must be null or a pointer from dr_frames_load, freed once.
void dr_frames_free(DrFrames *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYADRANK_H */
