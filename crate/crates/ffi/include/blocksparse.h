/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef BLOCKSPARSE_H
#define BLOCKSPARSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BsNonlinearity {
  BS_NONLINEARITY_NONE = 0,
  BS_NONLINEARITY_RELU = 1,
  BS_NONLINEARITY_GELU = 2,
  BS_NONLINEARITY_SILU = 3,
} BsNonlinearity;

typedef enum BsStatus {
  BS_STATUS_OK = 0,
  BS_STATUS_NULL_POINTER = 1,
  BS_STATUS_INVALID_ARGUMENT = 2,
  BS_STATUS_DIMENSION_MISMATCH = 3,
  // Malformed or unsupported serialized data.
  BS_STATUS_FORMAT = 4,
  BS_STATUS_IO = 5,
  BS_STATUS_PANIC = 6,
} BsStatus;

// Opaque block-sparse matrix.
typedef struct BsMatrix BsMatrix;

typedef struct BsFlops {
  uint64_t dense;
  uint64_t sparse;
} BsFlops;

typedef struct BsSchedule {
  double s_init;
  double s_max;
  size_t total_iters;
  size_t decay;
  size_t step_size;
} BsSchedule;

typedef struct BsFootprint {
  double dense_bytes;
  double sparse_bytes;
  uint64_t dense_gpus;
  uint64_t sparse_gpus;
  double reduction;
} BsFootprint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *bs_version(void);

// Message for the last failed call on this thread ("" if none). Valid
// until the next failing call on the same thread.
const char *bs_last_error_message(void);

// Pack a dense `rows x cols` matrix. `mask` is either null (store every
// block that is not all zero) or `ceil(rows/block) * ceil(cols/block)`
// row-major flags naming the blocks to keep.
enum BsStatus bs_matrix_from_dense(const float *data,
                                   size_t rows,
                                   size_t cols,
                                   size_t block,
                                   const bool *mask,
                                   struct BsMatrix **out);

void bs_matrix_free(struct BsMatrix *m);

// Any of the out-pointers may be null.
enum BsStatus bs_matrix_shape(const struct BsMatrix *m,
                              size_t *rows,
                              size_t *cols,
                              size_t *block,
                              size_t *nnzb);

enum BsStatus bs_matrix_block_sparsity(const struct BsMatrix *m, double *out);

// Write the dense form into `out`, which must hold exactly `rows * cols` floats.
enum BsStatus bs_matrix_to_dense(const struct BsMatrix *m, float *out, size_t len);

// New handle holding the transpose.
enum BsStatus bs_matrix_transpose(const struct BsMatrix *m, struct BsMatrix **out);

// Serialize to a fresh buffer; release it with [`bs_buffer_free`].
enum BsStatus bs_matrix_serialize(const struct BsMatrix *m, uint8_t **out_buf, size_t *out_len);

void bs_buffer_free(uint8_t *buf, size_t len);

enum BsStatus bs_matrix_deserialize(const uint8_t *buf, size_t len, struct BsMatrix **out);

enum BsStatus bs_matrix_save(const struct BsMatrix *m, const char *path);

enum BsStatus bs_matrix_load(const char *path, struct BsMatrix **out);

// `y = f(x w)` with `x` of shape `m x k` and `y` of shape `m x cols(w)`.
enum BsStatus bs_spmm(const float *x,
                      size_t m,
                      size_t k,
                      const struct BsMatrix *w,
                      enum BsNonlinearity f,
                      float *y,
                      size_t y_len);

struct BsFlops bs_flops(uint64_t m, uint64_t n, uint64_t k, uint64_t nnzb, uint64_t block);

enum BsStatus bs_target_sparsity(const struct BsSchedule *sched, size_t iteration, double *out);

// Footprint for `params` parameters of which `mlp_params` are sparsified
// to `sparsity`. Pass 0 for `bytes_per_param` / `hbm_bytes` to get the
// defaults (4 and 96e9).
enum BsStatus bs_gpu_calc(double params,
                          double mlp_params,
                          double sparsity,
                          double bytes_per_param,
                          double hbm_bytes,
                          struct BsFootprint *out);

// One prune-and-grow step on dense `rows x cols` weight `w` and gradient
// `g`. `kept` and `regrown` receive `ceil(rows/block) * ceil(cols/block)`
// row-major flags each.
enum BsStatus bs_generate_masks(const float *w,
                                const float *g,
                                size_t rows,
                                size_t cols,
                                size_t block,
                                double sparsity,
                                bool *kept,
                                bool *regrown,
                                size_t grid_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BLOCKSPARSE_H */
