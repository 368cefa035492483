#ifndef OWTRACK_H
#define OWTRACK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OwtStatus {
  OWT_STATUS_OK = 0,
  OWT_STATUS_NULL_POINTER = 1,
  OWT_STATUS_INVALID_ARGUMENT = 2,
  OWT_STATUS_IO = 3,
  OWT_STATUS_FORMAT = 4,
  OWT_STATUS_TRACKER = 5,
  OWT_STATUS_BUFFER_TOO_SMALL = 6,
  OWT_STATUS_PANIC = 7,
} OwtStatus;

/**
 * Opaque tracker handle.
 */
typedef struct OwtTracker OwtTracker;

/**
 * Box as top-left corner plus size, in pixels.
 */
typedef struct OwtBox {
  double x;
  double y;
  double w;
  double h;
} OwtBox;

typedef struct OwtTrackerConfig {
  double nms_iou;
  double score_thresh;
  uint32_t n_init;
  uint32_t max_age;
  size_t gallery_budget;
  double lambda;
  double gate_chi2;
  double max_appearance;
  double max_iou_cost;
} OwtTrackerConfig;

/**
 * One detection handed to [`owt_tracker_step`]. `embedding` may be NULL when
 * `embedding_len` is 0; a non-zero embedding is normalised to unit length.
 */
typedef struct OwtDetection {
  struct OwtBox bbox;
  double score;
  const double *embedding;
  size_t embedding_len;
} OwtDetection;

/**
 * A confirmed track matched on the last processed frame.
 */
typedef struct OwtEmission {
  uint64_t track_id;
  /**
   * Index of the detection in the array passed to the step call.
   */
  size_t detection_index;
  struct OwtBox bbox;
  double score;
} OwtEmission;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *owt_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next call into the library from the same thread.
 */
const char *owt_last_error_message(void);

/**
 * IoU of two boxes.
 *
 * # Safety
 * `a` and `b` must point to readable boxes, `out` to a writable double.
 */
enum OwtStatus owt_box_iou(const struct OwtBox *a, const struct OwtBox *b, double *out);

/**
 * Minimum-cost assignment on a row-major `rows x cols` matrix. Infinite cells
 * are infeasible. `row_to_col[r]` receives the matched column or -1.
 *
 * # Safety
 * `costs` must hold `rows * cols` doubles and `row_to_col` room for `rows`.
 */
enum OwtStatus owt_hungarian(const double *costs, size_t rows, size_t cols, int64_t *row_to_col);

/**
 * Indices of the `k` highest scores, best first, ties by lower index.
 * `out_indices` needs room for `min(k, n)` entries; the count is written to
 * `out_len`.
 *
 * # Safety
 * `scores` must hold `n` doubles; `out_indices` room for `min(k, n)` entries.
 */
enum OwtStatus owt_topk(const double *scores,
                        size_t n,
                        size_t k,
                        size_t *out_indices,
                        size_t *out_len);

/**
 * Greedy NMS. Indices of kept boxes, best first, go to `out_indices` (room
 * for `n`); the count to `out_len`.
 *
 * # Safety
 * `boxes` and `scores` must hold `n` entries, `out_indices` room for `n`.
 */
enum OwtStatus owt_nms(const struct OwtBox *boxes,
                       const double *scores,
                       size_t n,
                       double iou_thresh,
                       size_t *out_indices,
                       size_t *out_len);

/**
 * In place: `teacher = momentum * teacher + (1 - momentum) * student`.
 *
 * # Safety
 * `teacher` and `student` must each hold `n` doubles and not overlap.
 */
enum OwtStatus owt_ema_update(double *teacher, const double *student, size_t n, double momentum);

/**
 * Default tracker settings.
 */
struct OwtTrackerConfig owt_tracker_config_default(void);

/**
 * Create a tracker. On success `*out` owns a handle for [`owt_tracker_free`].
 *
 * # Safety
 * `config` must be readable (NULL selects the defaults); `out` writable.
 */
enum OwtStatus owt_tracker_new(const struct OwtTrackerConfig *config, struct OwtTracker **out);

/**
 * Feed one frame. Frame ids must increase strictly. Emissions of this frame
 * replace those of the previous call.
 *
 * # Safety
 * `tracker` must come from [`owt_tracker_new`]; `dets` must hold `n` entries
 * whose embedding pointers are valid for their stated lengths.
 */
enum OwtStatus owt_tracker_step(struct OwtTracker *tracker,
                                uint64_t frame_id,
                                const struct OwtDetection *dets,
                                size_t n);

/**
 * Number of emissions from the last step, or 0 for a NULL handle.
 *
 * # Safety
 * `tracker` must be NULL or a live handle.
 */
size_t owt_tracker_emission_count(const struct OwtTracker *tracker);

/**
 * Copy the last step's emissions (ordered by track id) into `out`.
 *
 * # Safety
 * `tracker` must be a live handle, `out` writable for `capacity` entries.
 */
enum OwtStatus owt_tracker_emissions(const struct OwtTracker *tracker,
                                     struct OwtEmission *out,
                                     size_t capacity,
                                     size_t *out_len);

/**
 * Release a tracker. NULL is ignored.
 *
 * # Safety
 * `tracker` must be NULL or a handle not freed before.
 */
void owt_tracker_free(struct OwtTracker *tracker);

/**
 * AR@`max_dets` of a results file against an annotation file, with default
 * thresholds. `track_mode` non-zero evaluates tracks (records need
 * `track_id`), zero evaluates frames.
 *
 * # Safety
 * Paths must be NUL-terminated UTF-8 strings; `ar_out` writable.
 */
enum OwtStatus owt_evaluate_files(const char *gt_path,
                                  const char *pred_path,
                                  size_t max_dets,
                                  int32_t track_mode,
                                  double *ar_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OWTRACK_H */
