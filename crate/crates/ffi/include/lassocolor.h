#ifndef LASSOCOLOR_H
#define LASSOCOLOR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LccStatus {
  LCC_STATUS_OK = 0,
  LCC_STATUS_NULL_POINTER = 1,
  LCC_STATUS_INVALID_ARGUMENT = 2,
  LCC_STATUS_IO = 3,
  LCC_STATUS_CHECKPOINT = 4,
  LCC_STATUS_NUMERIC = 5,
  LCC_STATUS_BUFFER_TOO_SMALL = 6,
  LCC_STATUS_PANIC = 7,
} LccStatus;

/**
 * Opaque model handle.
 */
typedef struct LccModel LccModel;

/**
 * A color point. When `has_lasso` is nonzero the inclusive rectangle
 * `(y0, x0)..=(y1, x1)` is its lasso; otherwise the pre-defined square is
 * used.
 */
typedef struct LccHint {
  uint32_t y;
  uint32_t x;
  float a;
  float b;
  int32_t has_lasso;
  uint32_t y0;
  uint32_t x0;
  uint32_t y1;
  uint32_t x1;
} LccHint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LccStatus lcc_model_load(const char *path, struct LccModel **out);

/**
 * Releases a handle from [`lcc_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void lcc_model_free(struct LccModel *model);

/**
 * Model working resolution.
 *
 * # Safety
 * All pointers must be valid.
 */
enum LccStatus lcc_model_input_size(const struct LccModel *model,
                                    uint32_t *width,
                                    uint32_t *height);

/**
 * Colorizes a `width×height` RGB image with `n_hints` hints (coordinates
 * in the image frame). `r` scales the pre-defined lasso; pass 1. The
 * result (`width*height*3` bytes) is written to `out_rgb`.
 *
 * # Safety
 * `rgb` must hold `width*height*3` bytes, `hints` `n_hints` entries (may
 * be null when zero) and `out_rgb` `out_len` writable bytes.
 */
enum LccStatus lcc_colorize(const struct LccModel *model,
                            const uint8_t *rgb,
                            uint32_t width,
                            uint32_t height,
                            const struct LccHint *hints,
                            size_t n_hints,
                            float r,
                            uint8_t *out_rgb,
                            size_t out_len);

/**
 * Same as [`lcc_colorize`] with hints given as HintSet JSON (supports
 * mask lassos).
 *
 * # Safety
 * As for [`lcc_colorize`]; `hints_json` must be NUL-terminated.
 */
enum LccStatus lcc_colorize_json(const struct LccModel *model,
                                 const uint8_t *rgb,
                                 uint32_t width,
                                 uint32_t height,
                                 const char *hints_json,
                                 float r,
                                 uint8_t *out_rgb,
                                 size_t out_len);

/**
 * sRGB (3 bytes per pixel) to interleaved CIELab floats.
 *
 * # Safety
 * `rgb` must hold `3*n_pixels` bytes and `lab` `3*n_pixels` floats.
 */
enum LccStatus lcc_rgb_to_lab(const uint8_t *rgb, size_t n_pixels, float *lab);

/**
 * Interleaved CIELab floats to sRGB bytes (rounded, clamped).
 *
 * # Safety
 * `lab` must hold `3*n_pixels` floats and `rgb` `3*n_pixels` bytes.
 */
enum LccStatus lcc_lab_to_rgb(const float *lab, size_t n_pixels, uint8_t *rgb);

/**
 * PSNR in dB between two RGB images; identical images give 99 with
 * `*exact = 1`.
 *
 * # Safety
 * Both images must hold `width*height*3` bytes; outputs must be valid.
 */
enum LccStatus lcc_psnr(const uint8_t *a,
                        const uint8_t *b,
                        uint32_t width,
                        uint32_t height,
                        double *db,
                        int32_t *exact);

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into the library from the same thread.
 */
const char *lcc_last_error(void);

/**
 * Library version, static NUL-terminated string.
 */
const char *lcc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LASSOCOLOR_H */
