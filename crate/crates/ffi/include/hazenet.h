#ifndef HAZENET_H
#define HAZENET_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible entry point.
 */
typedef enum HzStatus {
  HZ_STATUS_OK = 0,
  HZ_STATUS_NULL_POINTER = 1,
  HZ_STATUS_INVALID_ARGUMENT = 2,
  HZ_STATUS_SHAPE = 3,
  HZ_STATUS_IO = 4,
  HZ_STATUS_FORMAT = 5,
  HZ_STATUS_INTERNAL = 6,
  HZ_STATUS_PANIC = 7,
} HzStatus;

/**
 * A loaded network and its weights. Opaque to C.
 */
typedef struct HzModel HzModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint written by the training tools.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HzStatus hz_model_load(const char *path, struct HzModel **out);

/**
 * Builds a freshly initialized model from a preset (`"desk"`, `"tiny"` or `"full"`).
 * With `zero_init` set every weight is zero and the model is the identity map.
 *
 * # Safety
 * `preset` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HzStatus hz_model_new(const char *preset, uint64_t seed, bool zero_init, struct HzModel **out);

/**
 * Releases a model. Passing null is a no-op.
 *
 * # Safety
 * `model` must come from `hz_model_load`/`hz_model_new` and not be used afterwards.
 */
void hz_model_free(struct HzModel *model);

/**
 * Number of scalar parameters held by the model (0 for null).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint64_t hz_model_param_count(const struct HzModel *model);

/**
 * Dehazes a `3×height×width` image of any size.
 *
 * `out_final` and `out_pseudo` receive `3·height·width` floats and
 * `out_density` receives `height·width`; the last two may be null. A model
 * without a density module fills `out_density` with ones.
 *
 * # Safety
 * All non-null buffers must be valid for the stated lengths.
 */
enum HzStatus hz_model_dehaze(const struct HzModel *model,
                              const float *input,
                              size_t height,
                              size_t width,
                              float *out_final,
                              float *out_pseudo,
                              float *out_density);

/**
 * Applies `I = J·t + A·(1 − t)` with `t = exp(−beta·depth)`.
 *
 * `clean` and `out_hazy` hold `3·height·width` floats, `depth` and the
 * optional `out_transmission` hold `height·width`.
 *
 * # Safety
 * All non-null buffers must be valid for the stated lengths.
 */
enum HzStatus hz_synthesize_hazy(const float *clean,
                                 const float *depth,
                                 size_t height,
                                 size_t width,
                                 const float *airlight,
                                 float beta,
                                 float *out_hazy,
                                 float *out_transmission);

/**
 * PSNR in dB with peak 1; identical inputs give `+inf`.
 *
 * # Safety
 * `a` and `b` must hold `channels·height·width` floats and `out` must be valid.
 */
enum HzStatus hz_psnr(const float *a,
                      const float *b,
                      size_t channels,
                      size_t height,
                      size_t width,
                      double *out);

/**
 * Mean SSIM of the channel-mean grayscale images (11×11 Gaussian window).
 *
 * # Safety
 * `a` and `b` must hold `channels·height·width` floats and `out` must be valid.
 */
enum HzStatus hz_ssim(const float *a,
                      const float *b,
                      size_t channels,
                      size_t height,
                      size_t width,
                      double *out);

/**
 * Parameter and FLOP counts for `module` (`sha`, `se`, `fa`, `mhab`, `mhac`, `full`).
 *
 * # Safety
 * `module` must be a NUL-terminated string; `params` and `flops` may be null.
 */
enum HzStatus hz_count_params(const char *module,
                              size_t channels,
                              size_t height,
                              size_t width,
                              uint64_t *params,
                              uint64_t *flops);

/**
 * Message for the most recent failure on this thread, or an empty string.
 * The pointer stays valid until the next `hz_*` call on the same thread.
 */
const char *hz_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HAZENET_H */
