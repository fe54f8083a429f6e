#ifndef ANTMAN_H
#define ANTMAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AntmanAnchor {
  ANTMAN_ANCHOR_TARGET = 0,
  ANTMAN_ANCHOR_MSE = 1,
  ANTMAN_ANCHOR_KL = 2,
} AntmanAnchor;

typedef enum AntmanStatus {
  ANTMAN_STATUS_OK = 0,
  ANTMAN_STATUS_NULL_POINTER = 1,
  ANTMAN_STATUS_INVALID_ARGUMENT = 2,
  ANTMAN_STATUS_INVALID_CONFIG = 3,
  ANTMAN_STATUS_SHAPE_MISMATCH = 4,
  ANTMAN_STATUS_FORMAT = 5,
  ANTMAN_STATUS_IO = 6,
  ANTMAN_STATUS_PANIC = 7,
} AntmanStatus;

/**
 * A stacked LSTM whose transforms are compressed operators.
 */
typedef struct AntmanModel AntmanModel;

/**
 * A compressed linear operator with 64-bit weights.
 */
typedef struct AntmanOperator AntmanOperator;

/**
 * Cost of one operator application. `reduction` is the exact fraction
 * `reduction_num / reduction_den` of dense over compressed parameters.
 */
typedef struct AntmanCost {
  uint64_t madds;
  uint64_t params;
  uint64_t reduction_num;
  uint64_t reduction_den;
  bool expands;
} AntmanCost;

typedef struct AntmanCoefficients {
  double c_target;
  double c_mse;
  double c_kl;
} AntmanCoefficients;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *antman_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *antman_version(void);

/**
 * Creates an `m x n` operator from a spec such as `"lgp-shuffle:g=10"`,
 * with weights drawn deterministically from `seed`.
 *
 * # Safety
 * `spec` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AntmanStatus antman_operator_create(const char *spec,
                                         size_t m,
                                         size_t n,
                                         uint64_t seed,
                                         struct AntmanOperator **out);

/**
 * # Safety
 * `op` must come from `antman_operator_create` and not be freed twice.
 */
void antman_operator_free(struct AntmanOperator *op);

/**
 * # Safety
 * `op` must be a live operator handle or null.
 */
size_t antman_operator_out_dim(const struct AntmanOperator *op);

/**
 * # Safety
 * `op` must be a live operator handle or null.
 */
size_t antman_operator_in_dim(const struct AntmanOperator *op);

/**
 * # Safety
 * `op` must be a live operator handle or null.
 */
size_t antman_operator_param_count(const struct AntmanOperator *op);

/**
 * `y = W x`. `x_len` must equal the input dimension and `y_len` the
 * output dimension.
 *
 * # Safety
 * `x` and `y` must point to at least `x_len` and `y_len` doubles.
 */
enum AntmanStatus antman_operator_apply(const struct AntmanOperator *op,
                                        const double *x,
                                        size_t x_len,
                                        double *y,
                                        size_t y_len);

/**
 * Writes the explicit row-major `m x n` matrix into `out`.
 *
 * # Safety
 * `out` must point to at least `out_len` doubles.
 */
enum AntmanStatus antman_operator_materialize(const struct AntmanOperator *op,
                                              double *out,
                                              size_t out_len);

/**
 * Exact cost of an `m x n` operator described by `spec`.
 *
 * # Safety
 * `spec` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AntmanStatus antman_cost_of(const char *spec, size_t m, size_t n, struct AntmanCost *out);

/**
 * Balances distillation coefficients from single-loss validation values.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AntmanStatus antman_decide_coefficients(double target_loss,
                                             double mse_loss,
                                             double kl_loss,
                                             enum AntmanAnchor anchor,
                                             struct AntmanCoefficients *out);

/**
 * Creates a `layers`-deep LSTM with input and hidden size `dim`, every
 * transform compressed as `spec`.
 *
 * # Safety
 * `spec` and `name` must be NUL-terminated strings and `out` a valid
 * pointer.
 */
enum AntmanStatus antman_model_create(const char *name,
                                      const char *spec,
                                      size_t dim,
                                      size_t layers,
                                      uint64_t seed,
                                      struct AntmanModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AntmanStatus antman_model_load(const char *path, struct AntmanModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum AntmanStatus antman_model_save(const struct AntmanModel *model, const char *path);

/**
 * # Safety
 * `model` must come from `antman_model_create` or `antman_model_load`
 * and not be freed twice.
 */
void antman_model_free(struct AntmanModel *model);

/**
 * # Safety
 * `model` must be a live handle or null.
 */
size_t antman_model_input_dim(const struct AntmanModel *model);

/**
 * # Safety
 * `model` must be a live handle or null.
 */
size_t antman_model_output_dim(const struct AntmanModel *model);

/**
 * # Safety
 * `model` must be a live handle or null.
 */
size_t antman_model_param_count(const struct AntmanModel *model);

/**
 * Runs `steps` inputs (`steps x input_dim`, row-major) from a zero state
 * and writes the top hidden state per step (`steps x output_dim`).
 *
 * # Safety
 * `xs` and `out` must point to at least `steps * input_dim` and `out_len`
 * doubles.
 */
enum AntmanStatus antman_model_run(const struct AntmanModel *model,
                                   const double *xs,
                                   size_t steps,
                                   double *out,
                                   size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANTMAN_H */
