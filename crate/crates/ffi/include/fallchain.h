#ifndef FALLCHAIN_H
#define FALLCHAIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  FC_STATUS_INVALID_ARGUMENT = 2,
  FC_STATUS_NOT_FITTED = 3,
  FC_STATUS_IO = 4,
  FC_STATUS_PARSE = 5,
  /**
   * A panic was caught at the boundary.
   */
  FC_STATUS_INTERNAL = 6,
} FcStatus;

/**
 * Opaque localization model.
 */
typedef struct FcLocModel FcLocModel;

/**
 * Opaque fallen / not-fallen scene classifier.
 */
typedef struct FcSceneClassifier FcSceneClassifier;

/**
 * Centre-format box in normalized image coordinates.
 */
typedef struct FcBox {
  double cx;
  double cy;
  double w;
  double h;
} FcBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes of the last error message on this thread (0 if none).
 */
size_t fc_last_error_length(void);

/**
 * Copy the last error message, NUL-terminated and truncated to fit, into
 * `buf`. Returns the number of bytes written excluding the terminator.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be null with `cap` 0.
 */
size_t fc_last_error_message(char *buf, size_t cap);

/**
 * Probability that all three stages fail on the same event, and the
 * matching accuracy in percent.
 */
enum FcStatus fc_combined_reliability(double detect_fail,
                                      double nav_fail,
                                      double vision_fail,
                                      double *failure,
                                      double *accuracy_pct);

/**
 * Alternative composition where any single stage failure loses the event.
 */
enum FcStatus fc_serial_reliability(double detect_fail,
                                    double nav_fail,
                                    double vision_fail,
                                    double *failure,
                                    double *accuracy_pct);

enum FcStatus fc_iou(struct FcBox a, struct FcBox b, double *result);

/**
 * All-points AP at IoU 0.5 for one class in one image.
 *
 * # Safety
 * `boxes` and `scores` hold `n` elements, `truths` holds `m`.
 */
enum FcStatus fc_ap50(const struct FcBox *boxes,
                      const double *scores,
                      size_t n,
                      const struct FcBox *truths,
                      size_t m,
                      double *result);

/**
 * DTW alignment cost between two timestamp sequences.
 *
 * # Safety
 * `a` holds `n` values and `b` holds `m`.
 */
enum FcStatus fc_dtw_cost(const double *a, size_t n, const double *b, size_t m, double *result);

/**
 * Weighted parameter average over `clients` flat vectors of length `len`,
 * stored back to back in `params`.
 *
 * # Safety
 * `params` holds `clients * len` values, `weights` holds `clients` and
 * `result` has room for `len`.
 */
enum FcStatus fc_fedavg(const double *params,
                        const size_t *weights,
                        size_t clients,
                        size_t len,
                        double *result);

/**
 * Load a localization model saved by `fallchain train-loc`.
 *
 * # Safety
 * `path` is a NUL-terminated UTF-8 string; `model` is writable.
 */
enum FcStatus fc_loc_model_load(const char *path, struct FcLocModel **model);

/**
 * Number of RSSI values `fc_loc_model_predict` expects.
 *
 * # Safety
 * `model` is a live handle.
 */
enum FcStatus fc_loc_model_anchor_count(const struct FcLocModel *model, size_t *count);

/**
 * Predict `(x, y)` into `xy[0..2]` from `n` RSSI values in anchor order.
 *
 * # Safety
 * `model` is a live handle, `rssi` holds `n` values, `xy` has room for 2.
 */
enum FcStatus fc_loc_model_predict(const struct FcLocModel *model,
                                   const double *rssi,
                                   size_t n,
                                   double *xy);

/**
 * # Safety
 * `model` is null or a handle from `fc_loc_model_load` not yet freed.
 */
void fc_loc_model_free(struct FcLocModel *model);

/**
 * Load a scene classifier saved by `fallchain train-vision`.
 *
 * # Safety
 * `path` is a NUL-terminated UTF-8 string; `model` is writable.
 */
enum FcStatus fc_scene_classifier_load(const char *path, struct FcSceneClassifier **model);

/**
 * Probability that the scene shows a fallen person, from the 13 scene
 * features.
 *
 * # Safety
 * `model` is a live handle and `features` holds `n` values.
 */
enum FcStatus fc_scene_classifier_predict(const struct FcSceneClassifier *model,
                                          const double *features,
                                          size_t n,
                                          double *probability);

/**
 * # Safety
 * `model` is null or a handle from `fc_scene_classifier_load` not yet
 * freed.
 */
void fc_scene_classifier_free(struct FcSceneClassifier *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FALLCHAIN_H */
