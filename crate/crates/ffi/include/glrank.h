#ifndef GLRANK_H
#define GLRANK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of every fallible call.
typedef enum GlrStatus {
  GLR_OK = 0,
  // a required pointer argument was null
  GLR_NULL_ARGUMENT = 1,
  // a string argument was not valid UTF-8
  GLR_INVALID_UTF8 = 2,
  // inputs were rejected; see `glr_last_error`
  GLR_VALIDATION = 3,
  // a file could not be read or written
  GLR_IO = 4,
  // any other engine failure
  GLR_RUNTIME = 5,
  // the caller's buffer is too small; the needed length was written
  GLR_BUFFER_TOO_SMALL = 6,
  GLR_PANIC = 7,
} GlrStatus;

// Indexed corpus with its vocabulary and fused retrieval pool.
typedef struct GlrIndex GlrIndex;

// Loaded ranker checkpoint.
typedef struct GlrModel GlrModel;

// Ranked retrieval result.
typedef struct GlrRanking GlrRanking;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or null. Owned by the
// library and valid until the next failing call on the same thread.
const char *glr_last_error(void);

// Library version as a static string.
const char *glr_version(void);

// Indexes a JSON-lines corpus. `vocab_path` may be null, in which case the
// vocabulary is built from the corpus words. `k` is the default number of
// documents returned by [`glr_retrieve`].
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be valid for
// writes.
enum GlrStatus glr_index_open(const char *corpus_path,
                              const char *vocab_path,
                              struct GlrIndex **out);

// # Safety
// `idx` must be null or a handle from [`glr_index_open`] not yet freed.
void glr_index_free(struct GlrIndex *idx);

// Number of indexed documents; 0 for a null handle.
//
// # Safety
// `idx` must be null or a live handle.
size_t glr_index_len(const struct GlrIndex *idx);

// Vocabulary size, including the special tokens; 0 for a null handle.
//
// # Safety
// `idx` must be null or a live handle.
size_t glr_index_vocab_size(const struct GlrIndex *idx);

// Tokenizes `text` into `ids`. `out_len` receives the token count even
// when it exceeds `cap`, in which case `GLR_BUFFER_TOO_SMALL` is returned.
//
// # Safety
// `ids` must be valid for `cap` writes (it may be null when `cap` is 0).
enum GlrStatus glr_tokenize(const struct GlrIndex *idx,
                            const char *text,
                            uint32_t *ids,
                            size_t cap,
                            size_t *out_len);

// Fused retrieval with document `doc_id` as the query, excluding itself.
// `k` of 0 uses the index default.
//
// # Safety
// `idx` must be a live handle, `doc_id` NUL-terminated and `out` valid for
// writes.
enum GlrStatus glr_retrieve(const struct GlrIndex *idx,
                            const char *doc_id,
                            size_t k,
                            struct GlrRanking **out);

// # Safety
// `r` must be null or a live ranking handle.
size_t glr_ranking_len(const struct GlrRanking *r);

// Document id at `i`, or null when out of range. Valid while `r` lives.
//
// # Safety
// `r` must be null or a live ranking handle.
const char *glr_ranking_id(const struct GlrRanking *r, size_t i);

// Score at `i`, or NaN when out of range.
//
// # Safety
// `r` must be null or a live ranking handle.
double glr_ranking_score(const struct GlrRanking *r, size_t i);

// # Safety
// `r` must be null or a handle from [`glr_retrieve`] not yet freed.
void glr_ranking_free(struct GlrRanking *r);

// Loads a ranker checkpoint.
//
// # Safety
// `path` must be NUL-terminated and `out` valid for writes.
enum GlrStatus glr_model_load(const char *path, struct GlrModel **out);

// # Safety
// `m` must be null or a handle from [`glr_model_load`] not yet freed.
void glr_model_free(struct GlrModel *m);

// Scores `k` candidate documents against a query, writing `k` relevance
// likelihoods to `scores`. Candidate tokens are concatenated in `docs`;
// `doc_lens[i]` is the length of candidate `i`.
//
// # Safety
// `query` must hold `query_len` ids, `doc_lens` and `scores` `k` entries,
// and `docs` the sum of `doc_lens`.
enum GlrStatus glr_model_score(const struct GlrModel *m,
                               const uint32_t *query,
                               size_t query_len,
                               const uint32_t *docs,
                               const size_t *doc_lens,
                               size_t k,
                               double *scores);

// Runs the built-in oracle suite; `passed` receives the number of passing
// checks out of four.
//
// # Safety
// `passed` must be valid for writes.
enum GlrStatus glr_selfcheck(uint32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLRANK_H */
