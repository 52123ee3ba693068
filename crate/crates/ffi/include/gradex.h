/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef GRADEX_H
#define GRADEX_H

#include <stdbool.h>
#include <stddef.h>

/**
 * Result codes.
 */
typedef enum GxStatus {
  GX_STATUS_OK = 0,
  GX_STATUS_INVALID_ARGUMENT = 1,
  GX_STATUS_SHAPE = 2,
  GX_STATUS_PARSE = 3,
  GX_STATUS_VALIDATION = 4,
  GX_STATUS_TRAINING = 5,
  GX_STATUS_EMPTY_COHORT = 6,
  GX_STATUS_IO = 7,
  GX_STATUS_NULL_POINTER = 8,
  GX_STATUS_BUFFER_TOO_SMALL = 9,
  GX_STATUS_PANIC = 10,
} GxStatus;

/**
 * Base attribution method.
 */
typedef enum GxMethod {
  GX_METHOD_GRAD_CAM = 0,
  GX_METHOD_EBP = 1,
  GX_METHOD_CONTRASTIVE_EBP = 2,
} GxMethod;

/**
 * Opaque model handle.
 */
typedef struct GxModel GxModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gx_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *gx_last_error_message(void);

/**
 * Loads a weight file. On success `*out` receives a handle to free with
 * [`gx_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GxStatus gx_model_load(const char *path, struct GxModel **out);

/**
 * # Safety
 * `model` must come from [`gx_model_load`] and not be used afterwards.
 */
void gx_model_free(struct GxModel *model);

/**
 * # Safety
 * All pointers must be valid.
 */
enum GxStatus gx_model_input_dims(const struct GxModel *model,
                                  size_t *channels,
                                  size_t *height,
                                  size_t *width);

/**
 * # Safety
 * All pointers must be valid.
 */
enum GxStatus gx_model_num_classes(const struct GxModel *model, size_t *out);

/**
 * Explains one image given as `C*H*W` values in planar order.
 *
 * `class_idx < 0` explains the predicted class. The `H*W` input-resolution
 * map is written row-major to `out_map`. `predicted` and `confidence` may be
 * NULL.
 *
 * # Safety
 * `image` must hold `image_len` values and `out_map` room for `out_len`.
 */
enum GxStatus gx_explain(const struct GxModel *model,
                         const double *image,
                         size_t image_len,
                         enum GxMethod method,
                         bool gradual,
                         int class_idx,
                         double *out_map,
                         size_t out_len,
                         size_t *predicted,
                         double *confidence);

/**
 * Channel-mean of a non-negative `[channels, height, width]` activation,
 * divided by its maximum, written as `height*width` values.
 *
 * # Safety
 * `activation` must hold `channels*height*width` values and `out` room for
 * `out_len`.
 */
enum GxStatus gx_contribution_matrix(const double *activation,
                                     size_t channels,
                                     size_t height,
                                     size_t width,
                                     double *out,
                                     size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRADEX_H */
