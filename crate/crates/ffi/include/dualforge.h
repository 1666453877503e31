#ifndef DUALFORGE_H
#define DUALFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DfStatus {
  DF_STATUS_OK = 0,
  DF_STATUS_NULL_POINTER = 1,
  DF_STATUS_INVALID_ARGUMENT = 2,
  DF_STATUS_PARSE = 3,
  DF_STATUS_IO = 4,
  DF_STATUS_NUMERIC = 5,
  DF_STATUS_RUNTIME = 6,
  DF_STATUS_BUFFER_TOO_SMALL = 7,
  DF_STATUS_PANIC = 8,
} DfStatus;

// Opaque dataset handle.
typedef struct DfDataset DfDataset;

// Opaque training result handle.
typedef struct DfResult DfResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *df_last_error(void);

// Library version as a static NUL-terminated string.
const char *df_version(void);

// Loads a LIBSVM file. `min_dim` forces a larger feature dimension (0 for none).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DfStatus df_dataset_load(const char *path, uintptr_t min_dim, struct DfDataset **out);

// Builds a dataset from CSR arrays: example `i` owns entries
// `row_ptr[i]..row_ptr[i+1]` of `indices` (0-based) and `values`.
//
// # Safety
// `row_ptr` must hold `n + 1` entries, `labels` `n` entries, and `indices`
// and `values` `row_ptr[n]` entries each.
enum DfStatus df_dataset_from_csr(uintptr_t n,
                                  uintptr_t d,
                                  const uintptr_t *row_ptr,
                                  const uint32_t *indices,
                                  const double *values,
                                  const double *labels,
                                  struct DfDataset **out);

// Synthetic linearly generated dataset.
//
// # Safety
// `out` must be a valid pointer.
enum DfStatus df_dataset_synthetic(uintptr_t n,
                                   uintptr_t d,
                                   double density,
                                   uint64_t seed,
                                   double label_noise,
                                   struct DfDataset **out);

// # Safety
// `data` must come from a `df_dataset_*` constructor.
enum DfStatus df_dataset_shape(const struct DfDataset *data, uintptr_t *n, uintptr_t *d);

// Releases a dataset. Null is ignored.
//
// # Safety
// `data` must come from a `df_dataset_*` constructor and not be used afterwards.
void df_dataset_free(struct DfDataset *data);

// Trains on `data` with options given as a JSON object using the field
// names of the run manifest; omitted fields take their defaults. Null or
// an empty string means all defaults.
//
// # Safety
// `data` must be a live dataset handle, `options_json` null or a
// NUL-terminated string, and `out` a valid pointer.
enum DfStatus df_train(const struct DfDataset *data,
                       const char *options_json,
                       struct DfResult **out);

// Copies the weight vector into `buf`. `len` receives the dimension; with
// a null `buf` only the dimension is reported.
//
// # Safety
// `res` must be a live result handle; `buf` null or valid for `cap` writes.
enum DfStatus df_result_weights(const struct DfResult *res,
                                double *buf,
                                uintptr_t cap,
                                uintptr_t *len);

// Final primal value, dual value and gap of the original objective, the
// number of rounds, and whether the target was met.
//
// # Safety
// `res` must be a live result handle and the outputs valid pointers.
enum DfStatus df_result_summary(const struct DfResult *res,
                                double *primal,
                                double *dual,
                                double *gap,
                                uint64_t *rounds,
                                bool *converged);

// Per-round metrics as CSV text owned by the handle.
//
// # Safety
// `res` must be a live result handle.
const char *df_result_metrics_csv(const struct DfResult *res);

// Releases a result. Null is ignored.
//
// # Safety
// `res` must come from [`df_train`] and not be used afterwards.
void df_result_free(struct DfResult *res);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DUALFORGE_H */
