#ifndef L2AC_H
#define L2AC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum L2acStatus {
  L2AC_STATUS_OK = 0,
  L2AC_STATUS_NULL_POINTER = 1,
  L2AC_STATUS_INVALID_ARGUMENT = 2,
  L2AC_STATUS_IO = 3,
  L2AC_STATUS_PARSE = 4,
  L2AC_STATUS_SHAPE = 5,
  L2AC_STATUS_UNKNOWN_CLASS = 6,
  L2AC_STATUS_DUPLICATE_CLASS = 7,
  L2AC_STATUS_EMPTY_SEEN_SET = 8,
  L2AC_STATUS_BUFFER_TOO_SMALL = 9,
  L2AC_STATUS_RUNTIME = 10,
  L2AC_STATUS_PANIC = 11,
} L2acStatus;

/**
 * Trained meta-classifier.
 */
typedef struct L2acModel L2acModel;

/**
 * Seen-class registry.
 */
typedef struct L2acRegistry L2acRegistry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *l2ac_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *l2ac_version(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void l2ac_string_free(char *s);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum L2acStatus l2ac_model_load(const char *path, struct L2acModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from [`l2ac_model_load`] not yet freed.
 */
void l2ac_model_free(struct L2acModel *model);

/**
 * Embedding dimension of `model`, or 0 if `model` is NULL.
 *
 * # Safety
 * `model` must be NULL or a live model handle.
 */
size_t l2ac_model_dim(const struct L2acModel *model);

/**
 * Neighbors per class used by `model`, or 0 if `model` is NULL.
 *
 * # Safety
 * `model` must be NULL or a live model handle.
 */
size_t l2ac_model_k(const struct L2acModel *model);

/**
 * Writes the model's SHA-256 checkpoint hash as a new string.
 *
 * # Safety
 * `model` must be a live model handle; `out` must be writable.
 */
enum L2acStatus l2ac_model_checkpoint_hash(const struct L2acModel *model, char **out);

/**
 * Creates an empty registry for embeddings of width `dim`.
 *
 * # Safety
 * `out` must be writable.
 */
enum L2acStatus l2ac_registry_new(size_t dim, struct L2acRegistry **out);

/**
 * Loads a registry manifest.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum L2acStatus l2ac_registry_load(const char *path, struct L2acRegistry **out);

/**
 * Writes the manifest to `path` and the embeddings to `<path>.emb`.
 *
 * # Safety
 * `registry` must be a live registry handle; `path` a NUL-terminated string.
 */
enum L2acStatus l2ac_registry_save(const struct L2acRegistry *registry, const char *path);

/**
 * # Safety
 * `registry` must be NULL or a registry handle not yet freed.
 */
void l2ac_registry_free(struct L2acRegistry *registry);

/**
 * Number of registered classes, or 0 if `registry` is NULL.
 *
 * # Safety
 * `registry` must be NULL or a live registry handle.
 */
size_t l2ac_registry_len(const struct L2acRegistry *registry);

/**
 * Label of the class at `index` in insertion order, as a new string.
 *
 * # Safety
 * `registry` must be a live registry handle; `out` must be writable.
 */
enum L2acStatus l2ac_registry_label(const struct L2acRegistry *registry, size_t index, char **out);

/**
 * Registers `label` with `rows` examples stored row-major in `vectors`
 * (`rows * dim` values). Example ids are `<label>-<i>`.
 *
 * # Safety
 * `registry` must be a live registry handle, `label` a NUL-terminated
 * string and `vectors` must point to `rows * dim` readable values.
 */
enum L2acStatus l2ac_registry_add_class(struct L2acRegistry *registry,
                                        const char *label,
                                        const double *vectors,
                                        size_t rows,
                                        size_t dim);

/**
 * # Safety
 * `registry` must be a live registry handle; `label` a NUL-terminated string.
 */
enum L2acStatus l2ac_registry_remove_class(struct L2acRegistry *registry, const char *label);

/**
 * Classifies `x` (`dim` values) against every registered class.
 *
 * `out_label` receives a new string with the predicted label, or NULL when
 * the input is rejected. If `probs` is not NULL it receives one probability
 * per class in insertion order and `capacity` must be at least the number
 * of classes.
 *
 * # Safety
 * Handles must be live; `x` must point to `dim` readable values; `probs`
 * must be NULL or point to `capacity` writable values.
 */
enum L2acStatus l2ac_classify(const struct L2acModel *model,
                              const struct L2acRegistry *registry,
                              const double *x,
                              size_t dim,
                              char **out_label,
                              double *probs,
                              size_t capacity);

/**
 * Gradient check of the full scoring and loss pipeline on a random model;
 * writes the maximum relative error.
 *
 * # Safety
 * `out_max_rel_error` must be writable.
 */
enum L2acStatus l2ac_grad_check(size_t dim,
                                size_t k,
                                size_t hidden,
                                uint64_t seed,
                                double step,
                                double *out_max_rel_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* L2AC_H */
