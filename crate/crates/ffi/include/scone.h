#ifndef SCONE_H
#define SCONE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Length of an embedding written by [`scone_model_embed`].
 */
#define SCONE_EMBEDDING_DIM 48

/**
 * Length in bytes of a binary descriptor.
 */
#define SCONE_DESCRIPTOR_BYTES 64

typedef enum SconeStatus {
  SCONE_STATUS_OK = 0,
  /**
   * Bad argument or configuration.
   */
  SCONE_STATUS_USAGE_ERROR = 1,
  /**
   * Unreadable, malformed or insufficient input data.
   */
  SCONE_STATUS_DATA_ERROR = 2,
  /**
   * Divergence or a degenerate geometric configuration.
   */
  SCONE_STATUS_NUMERIC_ERROR = 3,
  SCONE_STATUS_NULL_POINTER = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  SCONE_STATUS_PANIC = 5,
} SconeStatus;

/**
 * Opaque dataset handle.
 */
typedef struct SconeDataset SconeDataset;

/**
 * Opaque model handle.
 */
typedef struct SconeModel SconeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *scone_version(void);

/**
 * Message of the last failure on this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *scone_last_error(void);

enum SconeStatus scone_dataset_read(const char *path, struct SconeDataset **out);

enum SconeStatus scone_dataset_write(const struct SconeDataset *dataset, const char *path);

/**
 * Generates a synthetic dataset. `config` is `key = value` text using the
 * world-generation keys, or null for the defaults.
 */
enum SconeStatus scone_dataset_generate(const char *config, struct SconeDataset **out);

void scone_dataset_free(struct SconeDataset *dataset);

/**
 * Number of keyframes; 0 for a null handle.
 */
size_t scone_dataset_frame_count(const struct SconeDataset *dataset);

/**
 * Number of landmarks; 0 for a null handle.
 */
size_t scone_dataset_landmark_count(const struct SconeDataset *dataset);

/**
 * Number of keypoints in the keyframe at position `frame` (not its id).
 */
enum SconeStatus scone_dataset_keypoint_count(const struct SconeDataset *dataset,
                                              size_t frame,
                                              size_t *out);

/**
 * Untrained model with neighbourhood size `k`.
 */
enum SconeStatus scone_model_init(uint64_t seed, size_t k, struct SconeModel **out);

enum SconeStatus scone_model_load(const char *path, struct SconeModel **out);

enum SconeStatus scone_model_save(const struct SconeModel *model, const char *path);

void scone_model_free(struct SconeModel *model);

/**
 * Neighbourhood size the model was built for; 0 for a null handle.
 */
size_t scone_model_k(const struct SconeModel *model);

/**
 * Trains a model on `train_set`, selecting the best epoch on `val_set` when
 * it is non-null. `config` is `key = value` text using the training keys,
 * or null for the defaults.
 */
enum SconeStatus scone_model_train(const struct SconeDataset *train_set,
                                   const struct SconeDataset *val_set,
                                   const char *config,
                                   struct SconeModel **out);

/**
 * Embeds keypoint `keypoint` of the keyframe at position `frame`, writing
 * `SCONE_EMBEDDING_DIM` values to `out`. `out_len` must be at least that.
 */
enum SconeStatus scone_model_embed(const struct SconeModel *model,
                                   const struct SconeDataset *dataset,
                                   size_t frame,
                                   size_t keypoint,
                                   double *out,
                                   size_t out_len);

/**
 * Hamming distance between two `SCONE_DESCRIPTOR_BYTES`-byte descriptors.
 */
enum SconeStatus scone_hamming_distance(const uint8_t *a, const uint8_t *b, uint32_t *out);

/**
 * Angle in radians of `r_est · r_gtᵀ`.
 */
enum SconeStatus scone_rotation_error(const double *r_est, const double *r_gt, double *out);

/**
 * Contrastive loss of one pair. `similar` is 1 for a matching pair and 0
 * otherwise. `grad1` and `grad2` may be null; when given they receive `len`
 * values each.
 */
enum SconeStatus scone_contrastive_loss(const double *e1,
                                        const double *e2,
                                        size_t len,
                                        uint8_t similar,
                                        double margin,
                                        double *loss,
                                        double *grad1,
                                        double *grad2);

/**
 * Nearest-neighbour precision on `dataset` with `n_samples` queries. A null
 * `model` evaluates raw descriptors with neighbourhood size `k`; otherwise
 * `k` is ignored and the model's own is used.
 */
enum SconeStatus scone_precision_eval(const struct SconeModel *model,
                                      const struct SconeDataset *dataset,
                                      size_t k,
                                      size_t n_samples,
                                      uint64_t seed,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCONE_H */
