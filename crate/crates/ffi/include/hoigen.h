#ifndef HOIGEN_H
#define HOIGEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Length of the buffer filled by [`hoigen_geometric_feature`].
#define HOIGEN_GEOMETRIC_FEATURE_LEN 14

typedef enum HoigenStatus {
  HOIGEN_STATUS_OK = 0,
  HOIGEN_STATUS_NULL_POINTER = 1,
  HOIGEN_STATUS_INVALID_ARGUMENT = 2,
  HOIGEN_STATUS_IO = 3,
  HOIGEN_STATUS_PARSE = 4,
  HOIGEN_STATUS_INVALID_DATA = 5,
  HOIGEN_STATUS_CONFIG = 6,
  HOIGEN_STATUS_INFEASIBLE_SPLIT = 7,
  HOIGEN_STATUS_BUFFER_TOO_SMALL = 8,
  HOIGEN_STATUS_PANIC = 9,
} HoigenStatus;

// Word-vector table keyed by class name.
typedef struct HoigenEmbeddings HoigenEmbeddings;

// Trained predicate head.
typedef struct HoigenModel HoigenModel;

// Axis-aligned box in pixels, `x1 < x2`, `y1 < y2`.
typedef struct HoigenBox {
  double x1;
  double y1;
  double x2;
  double y2;
} HoigenBox;

// Scored interaction for [`hoigen_nms`]; classes are caller-chosen ids.
typedef struct HoigenCandidate {
  struct HoigenBox human;
  struct HoigenBox object;
  uint32_t object_class;
  uint32_t predicate;
  double score;
} HoigenCandidate;

// Human-object pair of one image; `score` is ignored for ground truth.
typedef struct HoigenPair {
  uint64_t image;
  struct HoigenBox human;
  struct HoigenBox object;
  double score;
} HoigenPair;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *hoigen_version(void);

// Message of the last failed call on this thread, or null after a
// successful call. Valid until the next call on this thread.
const char *hoigen_last_error(void);

// Intersection over union of two boxes; 0 for disjoint boxes.
//
// # Safety
// `a`, `b` and `out` must be valid pointers.
enum HoigenStatus hoigen_iou(const struct HoigenBox *a, const struct HoigenBox *b, double *out);

// Fills `out[0..14]` with the geometric relation feature of a human and an
// object box in an image of `width` x `height` pixels.
//
// # Safety
// `human` and `object` must be valid; `out` must hold 14 doubles.
enum HoigenStatus hoigen_geometric_feature(const struct HoigenBox *human,
                                           const struct HoigenBox *object,
                                           double width,
                                           double height,
                                           double *out);

// Class-wise greedy NMS over union boxes. Writes the input positions of the
// kept candidates, highest score first, to `keep` (room for `n` entries) and
// their number to `keep_len`.
//
// # Safety
// `candidates` must hold `n` entries and `keep` room for `n` indices.
enum HoigenStatus hoigen_nms(const struct HoigenCandidate *candidates,
                             size_t n,
                             double nms_iou,
                             size_t *keep,
                             size_t *keep_len);

// All-point interpolated average precision of one HOI class.
//
// # Safety
// `detections` must hold `n_detections` entries and `ground_truth`
// `n_ground_truth` entries; `out` must be valid.
enum HoigenStatus hoigen_average_precision(const struct HoigenPair *detections,
                                           size_t n_detections,
                                           const struct HoigenPair *ground_truth,
                                           size_t n_ground_truth,
                                           double *out);

// Share of predicate `index` among the per-predicate instance `counts` of
// one object.
//
// # Safety
// `counts` must hold `n` entries; `out` must be valid.
enum HoigenStatus hoigen_bias(const uint64_t *counts, size_t n, size_t index, double *out);

// Loads a checkpoint written by `hoigen train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer. The
// handle must be released with [`hoigen_model_free`].
enum HoigenStatus hoigen_model_load(const char *path, struct HoigenModel **out);

// # Safety
// `model` must come from [`hoigen_model_load`] and not be used afterwards.
void hoigen_model_free(struct HoigenModel *model);

// Number of predicates scored by the model; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t hoigen_model_num_predicates(const struct HoigenModel *model);

// Name of predicate `index`, owned by the model; null when out of range.
//
// # Safety
// `model` must be null or a live handle.
const char *hoigen_model_predicate(const struct HoigenModel *model, size_t index);

// Length of the model input vector; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t hoigen_model_input_dim(const struct HoigenModel *model);

// Predicate probabilities for an assembled input vector.
//
// # Safety
// `input` must hold `input_len` doubles and `probabilities`
// `probabilities_len`.
enum HoigenStatus hoigen_model_forward(const struct HoigenModel *model,
                                       const double *input,
                                       size_t input_len,
                                       double *probabilities,
                                       size_t probabilities_len);

// Loads a word-vector table; `expected_dim` 0 accepts any dimension.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer. The
// handle must be released with [`hoigen_embeddings_free`].
enum HoigenStatus hoigen_embeddings_load(const char *path,
                                         size_t expected_dim,
                                         struct HoigenEmbeddings **out);

// # Safety
// `embeddings` must come from [`hoigen_embeddings_load`] and not be used
// afterwards.
void hoigen_embeddings_free(struct HoigenEmbeddings *embeddings);

// Predicate probabilities for one human-object pair, assembled exactly as
// at inference time.
//
// # Safety
// Handles must be live, `object_class` NUL-terminated, `human_feature`
// `feature_len` doubles and `probabilities` `probabilities_len` doubles.
enum HoigenStatus hoigen_model_predict(const struct HoigenModel *model,
                                       const struct HoigenEmbeddings *embeddings,
                                       const struct HoigenBox *human,
                                       const struct HoigenBox *object,
                                       const char *object_class,
                                       const double *human_feature,
                                       size_t feature_len,
                                       double width,
                                       double height,
                                       double *probabilities,
                                       size_t probabilities_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOIGEN_H */
