#ifndef FLEXSSL_H
#define FLEXSSL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FlexsslStatus {
  FLEXSSL_STATUS_OK = 0,
  FLEXSSL_STATUS_NULL_POINTER = 1,
  FLEXSSL_STATUS_INVALID_ARGUMENT = 2,
  FLEXSSL_STATUS_CONFIG = 3,
  FLEXSSL_STATUS_IO = 4,
  FLEXSSL_STATUS_NUMERIC = 5,
  FLEXSSL_STATUS_PANIC = 6,
} FlexsslStatus;

typedef enum FlexsslMapping {
  FLEXSSL_MAPPING_CONCAVE = 0,
  FLEXSSL_MAPPING_LINEAR = 1,
  FLEXSSL_MAPPING_CONVEX = 2,
} FlexsslMapping;

/**
 * Curriculum threshold state over a fixed unlabeled set.
 */
typedef struct FlexsslCurriculum FlexsslCurriculum;

/**
 * A finished training run with its checkpoint metrics.
 */
typedef struct FlexsslRun FlexsslRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (NUL-terminated, truncated
 * to `len - 1` bytes) into `buf` and returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t flexssl_last_error(char *buf, size_t len);

/**
 * Creates a curriculum over `unlabeled_count` samples and `class_count` classes.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum FlexsslStatus flexssl_curriculum_new(size_t unlabeled_count,
                                          size_t class_count,
                                          double tau,
                                          enum FlexsslMapping mapping,
                                          bool warmup,
                                          struct FlexsslCurriculum **out);

/**
 * Records one batch of predictions: sample index, max confidence and
 * predicted class for each of `len` samples.
 *
 * # Safety
 * `handle` must come from [`flexssl_curriculum_new`]; the three arrays must
 * hold `len` elements each.
 */
enum FlexsslStatus flexssl_curriculum_record(struct FlexsslCurriculum *handle,
                                             const size_t *indices,
                                             const double *confidences,
                                             const size_t *classes,
                                             size_t len);

/**
 * Writes the current per-class thresholds into `out` (`len` = class count).
 *
 * # Safety
 * `handle` must be live; `out` must hold `len` doubles.
 */
enum FlexsslStatus flexssl_curriculum_thresholds(const struct FlexsslCurriculum *handle,
                                                 double *out,
                                                 size_t len);

/**
 * Writes the normalized learning effects into `out` (`len` = class count).
 *
 * # Safety
 * `handle` must be live; `out` must hold `len` doubles.
 */
enum FlexsslStatus flexssl_curriculum_effects(const struct FlexsslCurriculum *handle,
                                              double *out,
                                              size_t len);

/**
 * # Safety
 * `handle` must be null or come from [`flexssl_curriculum_new`] and not be used afterwards.
 */
void flexssl_curriculum_free(struct FlexsslCurriculum *handle);

/**
 * Trains one run described by a config file. `algorithm` may be null (first
 * plan algorithm); `labels_per_class` and `iterations` of 0 and a null
 * `seed` keep the config values.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `algorithm` null or
 * NUL-terminated; `seed` null or valid; `out` a valid handle slot.
 */
enum FlexsslStatus flexssl_train(const char *config_path,
                                 const char *algorithm,
                                 size_t labels_per_class,
                                 const uint64_t *seed,
                                 size_t iterations,
                                 struct FlexsslRun **out);

/**
 * # Safety
 * `handle` must be live; `count` must be valid.
 */
enum FlexsslStatus flexssl_run_checkpoint_count(const struct FlexsslRun *handle, size_t *count);

/**
 * Eval error rate and iteration number of checkpoint `index`.
 *
 * # Safety
 * `handle` must be live; `error` and `iteration` must be valid.
 */
enum FlexsslStatus flexssl_run_checkpoint(const struct FlexsslRun *handle,
                                          size_t index,
                                          size_t *iteration,
                                          double *error);

/**
 * Best and median-of-last-20 eval error over all checkpoints.
 *
 * # Safety
 * `handle` must be live; both outputs must be valid.
 */
enum FlexsslStatus flexssl_run_summary(const struct FlexsslRun *handle,
                                       double *best_error,
                                       double *median_last_20_error);

/**
 * Writes the run's metrics CSV to `path`.
 *
 * # Safety
 * `handle` must be live; `path` must be NUL-terminated.
 */
enum FlexsslStatus flexssl_run_write_csv(const struct FlexsslRun *handle, const char *path);

/**
 * # Safety
 * `handle` must be null or come from [`flexssl_train`] and not be used afterwards.
 */
void flexssl_run_free(struct FlexsslRun *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLEXSSL_H */
