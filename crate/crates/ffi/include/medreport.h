#ifndef MEDREPORT_H
#define MEDREPORT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MrStatus {
  MR_STATUS_OK = 0,
  MR_STATUS_NULL_ARGUMENT = 1,
  MR_STATUS_INVALID_ARGUMENT = 2,
  MR_STATUS_IO = 3,
  MR_STATUS_FORMAT = 4,
  MR_STATUS_SHAPE = 5,
  MR_STATUS_DIVERGENCE = 6,
  MR_STATUS_PANIC = 7,
} MrStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct MrModel MrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Owned by the library.
 */
const char *mr_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void mr_string_free(char *s);

/**
 * Loads a checkpoint file into a new model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MrStatus mr_model_load(const char *path, struct MrModel **out);

/**
 * # Safety
 * `model` must come from [`mr_model_load`] and not have been freed. Null is ignored.
 */
void mr_model_free(struct MrModel *model);

/**
 * Writes the expected region count and feature width of the model.
 *
 * # Safety
 * `model` must be a live handle; the out pointers must be writable.
 */
enum MrStatus mr_model_input_shape(const struct MrModel *model,
                                   uintptr_t *n_regions,
                                   uintptr_t *feature_dim);

/**
 * Greedy report generation from a row-major `n_regions × feature_dim`
 * feature map. The result is JSON with `sentences` (word ids),
 * `stop_probs`, `truncated` and `tags`; free it with [`mr_string_free`].
 * A negative `stop_threshold` keeps the model's configured threshold.
 *
 * # Safety
 * `features` must point to `n_regions * feature_dim` doubles; `out_json` must be writable.
 */
enum MrStatus mr_model_generate(const struct MrModel *model,
                                const double *features,
                                uintptr_t n_regions,
                                uintptr_t feature_dim,
                                double stop_threshold,
                                char **out_json);

/**
 * Gradient check of the full training loss on the built-in toy
 * configuration with one random example drawn from `seed`.
 *
 * # Safety
 * `max_rel_error` must be writable.
 */
enum MrStatus mr_gradcheck_toy(uint64_t seed, double eps, double *max_rel_error);

/**
 * BLEU-1..4 of one whitespace-tokenized candidate against one reference.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` must hold 4 doubles.
 */
enum MrStatus mr_bleu(const char *candidate, const char *reference, double *out);

/**
 * ROUGE-L (beta 1.2) of one whitespace-tokenized candidate against one reference.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` must be writable.
 */
enum MrStatus mr_rouge_l(const char *candidate, const char *reference, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEDREPORT_H */
