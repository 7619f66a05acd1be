#ifndef PSEUDOFAM_H
#define PSEUDOFAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PfInitRule {
  PF_INIT_RULE_FIRST_TWO = 0,
  PF_INIT_RULE_FIRST_ONLY = 1,
} PfInitRule;

typedef enum PfMethod {
  PF_METHOD_MSE = 0,
  PF_METHOD_KL = 1,
  PF_METHOD_OVERLAP = 2,
} PfMethod;

/**
 * Result code of every fallible call.
 */
typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_INVALID_UTF8 = 2,
  PF_STATUS_IO = 3,
  PF_STATUS_PARSE = 4,
  PF_STATUS_INVALID_ARGUMENT = 5,
  PF_STATUS_HASH_MISMATCH = 6,
  PF_STATUS_NON_FINITE = 7,
  PF_STATUS_OUT_OF_RANGE = 8,
  PF_STATUS_PANIC = 9,
} PfStatus;

/**
 * Diagonal Fisher estimate for one language pair.
 */
typedef struct PfFim PfFim;

/**
 * Square pairwise similarity matrix.
 */
typedef struct PfMatrix PfMatrix;

/**
 * Trained model parameters.
 */
typedef struct PfModel PfModel;

/**
 * Token vocabulary.
 */
typedef struct PfVocab PfVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if it succeeded.
 * The pointer stays valid until the next `pf_*` call on this thread.
 */
const char *pf_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void pf_string_free(char *s);

/**
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum PfStatus pf_model_load(const char *path, struct PfModel **out);

/**
 * # Safety
 * `model` must be null or a handle from `pf_model_load`, freed once.
 */
void pf_model_free(struct PfModel *model);

/**
 * Number of scalar parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
size_t pf_model_num_params(const struct PfModel *model);

/**
 * Hex content hash of the parameters.
 *
 * # Safety
 * `model` must be a live model handle and `out` a valid pointer.
 */
enum PfStatus pf_model_hash(const struct PfModel *model, char **out);

/**
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum PfStatus pf_vocab_load(const char *path, struct PfVocab **out);

/**
 * # Safety
 * `vocab` must be null or a handle from `pf_vocab_load`, freed once.
 */
void pf_vocab_free(struct PfVocab *vocab);

/**
 * Estimates the Fisher diagonal of `model` on the tab-separated corpus at
 * `corpus_path`, labelled with `pair` (e.g. `"aa-en"`).
 *
 * # Safety
 * Handles must be live, strings valid C strings, `out` a valid pointer.
 */
enum PfStatus pf_fim_estimate(const struct PfModel *model,
                              const struct PfVocab *vocab,
                              const char *corpus_path,
                              const char *pair,
                              size_t batch_size,
                              uint64_t seed,
                              struct PfFim **out);

/**
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum PfStatus pf_fim_load(const char *path, struct PfFim **out);

/**
 * # Safety
 * `fim` must be a live handle and `path` a valid C string.
 */
enum PfStatus pf_fim_save(const struct PfFim *fim, const char *path);

/**
 * Number of entries, or 0 for a null handle.
 *
 * # Safety
 * `fim` must be null or a live handle.
 */
size_t pf_fim_len(const struct PfFim *fim);

/**
 * Copies up to `cap` values into `buf` and returns the full length.
 *
 * # Safety
 * `fim` must be null or a live handle; `buf` must hold `cap` doubles.
 */
size_t pf_fim_values(const struct PfFim *fim, double *buf, size_t cap);

/**
 * # Safety
 * `fim` must be null or a handle from this library, freed once.
 */
void pf_fim_free(struct PfFim *fim);

/**
 * Scores every ordered pair of `fims`. `sections` is `"ffn"`, `"all"`, or a
 * comma list of section labels such as `"E_f,D_f"`; null means `"ffn"`.
 *
 * # Safety
 * `fims` must point to `n` live handles; `out` must be a valid pointer.
 */
enum PfStatus pf_similarity_matrix(const struct PfFim *const *fims,
                                   size_t n,
                                   enum PfMethod method,
                                   double k_fraction,
                                   const char *sections,
                                   struct PfMatrix **out);

/**
 * Loads a matrix CSV together with its metadata sidecar.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum PfStatus pf_matrix_load(const char *path, enum PfMethod method, struct PfMatrix **out);

/**
 * Writes the matrix CSV and its metadata sidecar.
 *
 * # Safety
 * `matrix` must be a live handle and `path` a valid C string.
 */
enum PfStatus pf_matrix_save(const struct PfMatrix *matrix, const char *path);

/**
 * Number of rows (and columns), or 0 for a null handle.
 *
 * # Safety
 * `matrix` must be null or a live handle.
 */
size_t pf_matrix_size(const struct PfMatrix *matrix);

/**
 * Score of auxiliary `col` as seen from target `row`.
 *
 * # Safety
 * `matrix` must be a live handle and `out` a valid pointer.
 */
enum PfStatus pf_matrix_get(const struct PfMatrix *matrix, size_t row, size_t col, double *out);

/**
 * Pair code (e.g. `"aa-en"`) of row `i`.
 *
 * # Safety
 * `matrix` must be a live handle and `out` a valid pointer.
 */
enum PfStatus pf_matrix_pair(const struct PfMatrix *matrix, size_t i, char **out);

/**
 * # Safety
 * `matrix` must be null or a handle from this library, freed once.
 */
void pf_matrix_free(struct PfMatrix *matrix);

/**
 * Selects the pseudo family of `target` and returns its record as JSON.
 *
 * # Safety
 * `matrix` must be a live handle, `target` a valid C string, `out` a valid
 * pointer. The returned string must be released with `pf_string_free`.
 */
enum PfStatus pf_select_family(const struct PfMatrix *matrix,
                               const char *target,
                               enum PfInitRule init,
                               char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSEUDOFAM_H */
