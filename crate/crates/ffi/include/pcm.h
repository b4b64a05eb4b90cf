#ifndef PCM_H
#define PCM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PcmPrecluster {
  PCM_PRECLUSTER_BOX = 0,
  PCM_PRECLUSTER_KMEANS = 1,
} PcmPrecluster;

typedef enum PcmCounterfactual {
  // Use the counterfactual outcomes stored in the dataset.
  PCM_COUNTERFACTUAL_GIVEN = 0,
  // Estimate counterfactuals for treated subjects from nearby controls.
  PCM_COUNTERFACTUAL_KNN = 1,
  // Compare treated and control means inside each cluster.
  PCM_COUNTERFACTUAL_CONTROL_DIFF = 2,
} PcmCounterfactual;

// Result of every fallible call.
typedef enum PcmStatus {
  PCM_STATUS_OK = 0,
  PCM_STATUS_NULL_POINTER = 1,
  PCM_STATUS_INVALID_ARGUMENT = 2,
  PCM_STATUS_INVALID_DATA = 3,
  PCM_STATUS_IO = 4,
  PCM_STATUS_FIT = 5,
  PCM_STATUS_BUFFER_TOO_SMALL = 6,
  PCM_STATUS_PANIC = 7,
} PcmStatus;

// Opaque dataset handle.
typedef struct PcmDataset PcmDataset;

// Opaque fit handle.
typedef struct PcmFit PcmFit;

// Fit settings. Start from `pcm_config_default()`.
typedef struct PcmFitConfig {
  enum PcmPrecluster precluster;
  enum PcmCounterfactual counterfactual;
  // Neighbours for `Knn`; 0 picks the square root of the control count.
  uint32_t knn_k;
  uint32_t em_iters;
  double tau_multiplier;
  uint32_t k_max;
  uint64_t seed;
} PcmFitConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or "" if none.
// The pointer stays valid until the next failing call on the same thread.
const char *pcm_last_error(void);

// Library version as a static NUL-terminated string.
const char *pcm_version(void);

struct PcmFitConfig pcm_config_default(void);

// Draws a synthetic trial from the default layout with `n` subjects and
// outcome noise `sigma`.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum PcmStatus pcm_dataset_generate(size_t n, double sigma, uint64_t seed, struct PcmDataset **out);

// Reads a dataset in the CSV layout written by `pcm generate`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` valid for writes.
enum PcmStatus pcm_dataset_from_csv(const char *path, struct PcmDataset **out);

// Builds a dataset from column arrays.
//
// `x` holds `n * d` features in row-major order. `treated[i]` is nonzero
// for treated subjects. `ybar` may be null; a NaN entry marks a missing
// counterfactual.
//
// # Safety
// Every non-null array must hold the stated number of elements.
enum PcmStatus pcm_dataset_from_arrays(size_t n,
                                       size_t d,
                                       const double *x,
                                       const uint8_t *treated,
                                       const double *y,
                                       const double *ybar,
                                       struct PcmDataset **out);

// Number of subjects, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t pcm_dataset_len(const struct PcmDataset *ds);

// Feature dimension, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t pcm_dataset_dim(const struct PcmDataset *ds);

// # Safety
// `ds` must be null or a handle not yet freed.
void pcm_dataset_free(struct PcmDataset *ds);

// Fits effect levels to `ds`. A null `config` means the defaults.
//
// # Safety
// `ds` must be a live dataset handle, `config` null or valid, `out` valid for writes.
enum PcmStatus pcm_fit(const struct PcmDataset *ds,
                       const struct PcmFitConfig *config,
                       struct PcmFit **out);

// Number of fitted levels, or 0 for a null handle.
//
// # Safety
// `fit` must be null or a live fit handle.
size_t pcm_fit_num_levels(const struct PcmFit *fit);

// Number of subjects covered by the fit, or 0 for a null handle.
//
// # Safety
// `fit` must be null or a live fit handle.
size_t pcm_fit_len(const struct PcmFit *fit);

// Copies the level effects, ascending, into `out[0..pcm_fit_num_levels]`.
//
// # Safety
// `fit` must be a live fit handle and `out` hold `cap` doubles.
enum PcmStatus pcm_fit_level_effects(const struct PcmFit *fit, double *out, size_t cap);

// Copies each subject's level into `out[0..pcm_fit_len]`; -1 marks a
// subject outside the fitted population.
//
// # Safety
// `fit` must be a live fit handle and `out` hold `cap` values.
enum PcmStatus pcm_fit_assignments(const struct PcmFit *fit, int64_t *out, size_t cap);

// Copies each subject's smoothed effect into `out[0..pcm_fit_len]`; NaN
// marks a subject without one.
//
// # Safety
// `fit` must be a live fit handle and `out` hold `cap` doubles.
enum PcmStatus pcm_fit_smoothed_effects(const struct PcmFit *fit, double *out, size_t cap);

// The fit report as JSON, in the format written by `pcm fit`. Release the
// string with `pcm_string_free`.
//
// # Safety
// `fit` must be a live fit handle and `out` valid for writes.
enum PcmStatus pcm_fit_report_json(const struct PcmFit *fit, char **out);

// # Safety
// `s` must be null or a string returned by this library and not yet freed.
void pcm_string_free(char *s);

// # Safety
// `fit` must be null or a handle not yet freed.
void pcm_fit_free(struct PcmFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCM_H */
