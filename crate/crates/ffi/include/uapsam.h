#ifndef UAPSAM_H
#define UAPSAM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum UapStatus {
  UAP_STATUS_OK = 0,
  UAP_STATUS_NULL_ARGUMENT = 1,
  /**
   * Invalid input or configuration (bad path, malformed file, bad shape).
   */
  UAP_STATUS_INVALID_INPUT = 2,
  /**
   * Failure during computation.
   */
  UAP_STATUS_RUNTIME = 3,
  /**
   * A panic was caught at the boundary.
   */
  UAP_STATUS_PANIC = 4,
} UapStatus;

/**
 * Video clip with ground-truth masks.
 */
typedef struct UapClip UapClip;

/**
 * Trained segmenter parameters.
 */
typedef struct UapModel UapModel;

/**
 * One or more perturbations loaded from a checkpoint.
 */
typedef struct UapPerturbation UapPerturbation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *uap_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *uap_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UapStatus uap_model_load(const char *path, struct UapModel **out);

/**
 * # Safety
 * `model` must come from [`uap_model_load`] and not be used afterwards.
 */
void uap_model_free(struct UapModel *model);

/**
 * Loads a clip directory (`meta.json`, `frames.bin`, `masks.bin`).
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum UapStatus uap_clip_load(const char *dir, struct UapClip **out);

/**
 * Generates a random synthetic clip from `seed`.
 *
 * # Safety
 * `out` must be writable.
 */
enum UapStatus uap_clip_generate(uint64_t seed,
                                 size_t frames,
                                 size_t height,
                                 size_t width,
                                 struct UapClip **out);

/**
 * Writes frame count, height and width of `clip`. Any out pointer may be null.
 *
 * # Safety
 * `clip` must be a live handle.
 */
enum UapStatus uap_clip_dims(const struct UapClip *clip,
                             size_t *frames,
                             size_t *height,
                             size_t *width);

/**
 * Copies the ground-truth masks (frame-major, 0 or 1 per pixel) into `out`,
 * which must hold `frames * height * width` bytes.
 *
 * # Safety
 * `out` must point to `len` writable bytes.
 */
enum UapStatus uap_clip_masks(const struct UapClip *clip, uint8_t *out, size_t len);

/**
 * # Safety
 * `clip` must be a live handle and not be used afterwards.
 */
void uap_clip_free(struct UapClip *clip);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UapStatus uap_perturbation_load(const char *path, struct UapPerturbation **out);

/**
 * # Safety
 * `pert` must be a live handle; `out` must be writable.
 */
enum UapStatus uap_perturbation_epsilon(const struct UapPerturbation *pert, double *out);

/**
 * # Safety
 * `pert` must be a live handle and not be used afterwards.
 */
void uap_perturbation_free(struct UapPerturbation *pert);

/**
 * Adds entry `index` of `pert` to `clip`, clamped to `[0, 1]`, producing a
 * new clip handle.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum UapStatus uap_apply_perturbation(const struct UapClip *clip,
                                      const struct UapPerturbation *pert,
                                      size_t index,
                                      struct UapClip **out);

/**
 * Segments `clip` with a point prompt at `(x, y)` on frame 0 and writes
 * the foreground masks (frame-major, 0 or 1) into `out`.
 *
 * # Safety
 * Handles must be live; `out` must point to `len` writable bytes.
 */
enum UapStatus uap_segment_video_point(const struct UapModel *model,
                                       const struct UapClip *clip,
                                       double x,
                                       double y,
                                       uint8_t *out,
                                       size_t len);

/**
 * Intersection over union of two `height * width` byte masks (nonzero is
 * foreground). Two empty masks give 1.
 *
 * # Safety
 * `a` and `b` must each point to `height * width` readable bytes.
 */
enum UapStatus uap_iou(const uint8_t *a,
                       const uint8_t *b,
                       size_t height,
                       size_t width,
                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UAPSAM_H */
