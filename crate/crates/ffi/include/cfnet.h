#ifndef CFNET_H
#define CFNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CfnetStatus {
  CFNET_STATUS_OK = 0,
  CFNET_STATUS_NULL_POINTER = 1,
  CFNET_STATUS_INVALID_UTF8 = 2,
  CFNET_STATUS_INVALID_ARGUMENT = 3,
  CFNET_STATUS_INVALID_CONFIG = 4,
  CFNET_STATUS_SHAPE_MISMATCH = 5,
  CFNET_STATUS_BUFFER_TOO_SMALL = 6,
  CFNET_STATUS_NUMERIC = 7,
  CFNET_STATUS_IO = 8,
  CFNET_STATUS_ARTIFACT_MISMATCH = 9,
  CFNET_STATUS_NOT_FOUND = 10,
  CFNET_STATUS_INTERNAL = 11,
  CFNET_STATUS_PANIC = 12,
} CfnetStatus;

/**
 * Selects how per-sample error ratios are averaged.
 */
typedef enum CfnetNmseVariant {
  CFNET_NMSE_VARIANT_UNSQUARED = 0,
  CFNET_NMSE_VARIANT_SQUARED = 1,
} CfnetNmseVariant;

/**
 * Scenario description.
 */
typedef struct CfnetConfig CfnetConfig;

/**
 * Generated or loaded samples sharing one sensing matrix.
 */
typedef struct CfnetDataset CfnetDataset;

/**
 * Estimator of one scheme.
 */
typedef struct CfnetModel CfnetModel;

/**
 * Row and column counts of a lifted matrix.
 */
typedef struct CfnetShape {
  size_t rows;
  size_t cols;
} CfnetShape;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Crate version as a static NUL-terminated string.
 */
const char *cfnet_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes) and returns its full length in bytes.
 * Pass a null `buf` to query the length.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t cfnet_last_error_message(char *buf, size_t len);

/**
 * The built-in desk-scale scenario.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum CfnetStatus cfnet_config_desk(struct CfnetConfig **out);

/**
 * Parses a scenario from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid for one pointer write.
 */
enum CfnetStatus cfnet_config_from_json(const char *json, struct CfnetConfig **out);

/**
 * Overrides the measurement SNR in dB.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum CfnetStatus cfnet_config_set_snr_db(struct CfnetConfig *cfg, double snr_db);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void cfnet_config_free(struct CfnetConfig *cfg);

/**
 * Draws `count` samples; identical arguments give identical data.
 *
 * # Safety
 * `cfg` must be a live handle and `out` valid for one pointer write.
 */
enum CfnetStatus cfnet_dataset_generate(const struct CfnetConfig *cfg,
                                        size_t count,
                                        uint64_t seed,
                                        struct CfnetDataset **out);

/**
 * Loads a dataset directory written by `cfnet gen-data`.
 *
 * # Safety
 * `dir` must be a NUL-terminated path and `out` valid for one pointer write.
 */
enum CfnetStatus cfnet_dataset_load(const char *dir, struct CfnetDataset **out);

/**
 * Number of samples.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t cfnet_dataset_len(const struct CfnetDataset *ds);

/**
 * Shapes of a sample's observation (`2T × N·L`) and channel (`2M × N·L`).
 *
 * # Safety
 * `ds` must be a live handle; `obs` and `truth` must be valid for writes.
 */
enum CfnetStatus cfnet_dataset_shapes(const struct CfnetDataset *ds,
                                      struct CfnetShape *obs,
                                      struct CfnetShape *truth);

/**
 * Copies the observation of sample `index` into `out`.
 *
 * # Safety
 * `ds` must be a live handle and `out` valid for `len` doubles.
 */
enum CfnetStatus cfnet_dataset_observation(const struct CfnetDataset *ds,
                                           size_t index,
                                           double *out,
                                           size_t len);

/**
 * Copies the true channel of sample `index` into `out`.
 *
 * # Safety
 * `ds` must be a live handle and `out` valid for `len` doubles.
 */
enum CfnetStatus cfnet_dataset_truth(const struct CfnetDataset *ds,
                                     size_t index,
                                     double *out,
                                     size_t len);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void cfnet_dataset_free(struct CfnetDataset *ds);

/**
 * Untrained estimator of `scheme` for the sensing matrix of `ds`. A
 * non-positive `lambda` is replaced by the value derived from the data.
 *
 * # Safety
 * `scheme` must be a NUL-terminated string, `ds` a live handle and `out`
 * valid for one pointer write.
 */
enum CfnetStatus cfnet_model_untrained(const char *scheme,
                                       const struct CfnetDataset *ds,
                                       double lambda,
                                       struct CfnetModel **out);

/**
 * Loads the checkpoint of `scheme` from `dir`. When `ds` is non-null the
 * checkpoint must have been trained on its sensing matrix.
 *
 * # Safety
 * `dir` and `scheme` must be NUL-terminated strings, `ds` null or a live
 * handle, and `out` valid for one pointer write.
 */
enum CfnetStatus cfnet_model_load(const char *dir,
                                  const char *scheme,
                                  const struct CfnetDataset *ds,
                                  struct CfnetModel **out);

/**
 * Estimates the lifted channel (`2M × N·L`) from a lifted observation
 * (`2T × N·L`), both row-major, using the sensing matrix of `ds`.
 *
 * # Safety
 * `model` and `ds` must be live handles, `obs` valid for `obs_len` doubles
 * and `out` valid for `out_len` doubles.
 */
enum CfnetStatus cfnet_model_estimate(const struct CfnetModel *model,
                                      const struct CfnetDataset *ds,
                                      const double *obs,
                                      size_t obs_len,
                                      double *out,
                                      size_t out_len);

/**
 * Test NMSE in dB of `model` over every sample of `ds`.
 *
 * # Safety
 * `model` and `ds` must be live handles and `nmse_db` valid for one write.
 */
enum CfnetStatus cfnet_model_evaluate(const struct CfnetModel *model,
                                      const struct CfnetDataset *ds,
                                      enum CfnetNmseVariant variant,
                                      double *nmse_db);

/**
 * Number of unrolled layers (or baseline iterations).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cfnet_model_layers(const struct CfnetModel *model);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void cfnet_model_free(struct CfnetModel *model);

/**
 * Row-wise soft thresholding of a row-major `rows × cols` matrix:
 * each row is scaled by `max(0, 1 − tau/‖row‖)`. `out` may alias `input`.
 *
 * # Safety
 * `input` and `out` must be valid for `rows * cols` doubles.
 */
enum CfnetStatus cfnet_row_soft_threshold(const double *input,
                                          size_t rows,
                                          size_t cols,
                                          double tau,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CFNET_H */
