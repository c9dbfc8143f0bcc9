#ifndef HYPERFIT_H
#define HYPERFIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HflStatus {
  HFL_STATUS_OK = 0,
  HFL_STATUS_NULL_POINTER = 1,
  HFL_STATUS_INVALID_ARGUMENT = 2,
  HFL_STATUS_IO = 3,
  HFL_STATUS_FORMAT = 4,
  HFL_STATUS_DECODE = 5,
  HFL_STATUS_CONTEXT_LENGTH = 6,
  HFL_STATUS_CAPACITY = 7,
  // The output buffer is too small; the required length was written.
  HFL_STATUS_BUFFER_TOO_SMALL = 8,
  HFL_STATUS_PANIC = 9,
} HflStatus;

typedef struct HflModel HflModel;

typedef struct HflSet HflSet;

typedef struct HflTokenizer HflTokenizer;

typedef struct HflGenerateOptions {
  size_t max_new_tokens;
  // Greedy decoding when true; otherwise temperature/top-p/top-k sampling.
  bool greedy;
  double temperature;
  double top_p;
  size_t top_k;
  uint64_t seed;
  // Hyperfit set for the citation blocker; null disables blocking.
  const struct HflSet *block_set;
  size_t block_n;
  // Let the current word finish before blocking; needs `tokenizer`.
  bool defer_to_word_end;
  const struct HflTokenizer *tokenizer;
} HflGenerateOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *hfl_version(void);

// Message of the last failure on this thread; empty when none. Valid
// until the next failing call on the same thread.
const char *hfl_last_error(void);

// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum HflStatus hfl_tokenizer_new_byte(struct HflTokenizer **out);

// Loads a tokenizer JSON file as written by `hfl ingest`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HflStatus hfl_tokenizer_load(const char *path, struct HflTokenizer **out);

// # Safety
// `tok` must come from this library and not be used afterwards; null is ignored.
void hfl_tokenizer_free(struct HflTokenizer *tok);

// Vocabulary size, or 0 for a null handle.
//
// # Safety
// `tok` must be null or a live handle.
size_t hfl_tokenizer_vocab_size(const struct HflTokenizer *tok);

// Encodes `len` bytes of UTF-8 text into at most `cap` token ids.
//
// # Safety
// Pointers must be valid for the given lengths; `out_len` must be writable.
enum HflStatus hfl_tokenizer_encode(const struct HflTokenizer *tok,
                                    const uint8_t *text,
                                    size_t len,
                                    uint32_t *out,
                                    size_t cap,
                                    size_t *out_len);

// Decodes token ids into at most `cap` bytes (not NUL-terminated).
//
// # Safety
// Pointers must be valid for the given lengths; `out_len` must be writable.
enum HflStatus hfl_tokenizer_decode(const struct HflTokenizer *tok,
                                    const uint32_t *ids,
                                    size_t n,
                                    uint8_t *out,
                                    size_t cap,
                                    size_t *out_len);

// Loads a checkpoint, converting it to 32-bit floats.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HflStatus hfl_model_load(const char *path, struct HflModel **out);

// Freshly initialized model.
//
// # Safety
// `out` must be writable.
enum HflStatus hfl_model_new(size_t n_layers,
                             size_t n_heads,
                             size_t d_model,
                             size_t d_ff,
                             size_t vocab_size,
                             size_t max_ctx,
                             uint64_t seed,
                             struct HflModel **out);

// # Safety
// `model` must come from this library and not be used afterwards; null is ignored.
void hfl_model_free(struct HflModel *model);

// # Safety
// `model` must be null or a live handle.
size_t hfl_model_vocab_size(const struct HflModel *model);

// Loads an `HFS1` set file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HflStatus hfl_set_load(const char *path, struct HflSet **out);

// Builds a set from `n_samples * sample_len` row-major token ids.
//
// # Safety
// `tokens` must hold `n_samples * sample_len` ids; `out` must be writable.
enum HflStatus hfl_set_new(const uint32_t *tokens,
                           size_t n_samples,
                           size_t sample_len,
                           size_t vocab_size,
                           struct HflSet **out);

// # Safety
// `set` must come from this library and not be used afterwards; null is ignored.
void hfl_set_free(struct HflSet *set);

// Number of samples, or 0 for a null handle.
//
// # Safety
// `set` must be null or a live handle.
size_t hfl_set_len(const struct HflSet *set);

// Greedy, 96 tokens, no blocking; sampling fields hold 0.7 / 0.9 / 50.
struct HflGenerateOptions hfl_generate_options_default(void);

// Generates up to `cap` tokens after `ctx`.
//
// # Safety
// Handles in `opts` must be null or live; buffers valid for their lengths.
enum HflStatus hfl_generate(const struct HflModel *model,
                            const uint32_t *ctx,
                            size_t ctx_len,
                            const struct HflGenerateOptions *opts,
                            uint32_t *out,
                            size_t cap,
                            size_t *out_len);

// Type-token ratio of the last `window` ids.
//
// # Safety
// `ids` must hold `n` values; `out` must be writable.
enum HflStatus hfl_ttr(const uint32_t *ids, size_t n, size_t window, double *out);

// Token BLEU-4 of `cand` against `reference`, in [0, 100].
//
// # Safety
// Arrays must hold the given counts; `out` must be writable.
enum HflStatus hfl_bleu(const uint32_t *cand,
                        size_t cand_len,
                        const uint32_t *reference,
                        size_t ref_len,
                        double *out);

// Longest contiguous run of `seq` found in any sample of `set`. The
// location outputs may be null; they are left untouched without a match.
//
// # Safety
// `set` must be live, `seq` hold `n` ids and `out_len` be writable.
enum HflStatus hfl_longest_overlap(const struct HflSet *set,
                                   const uint32_t *seq,
                                   size_t n,
                                   size_t *out_len,
                                   size_t *out_sample,
                                   size_t *out_sample_offset,
                                   size_t *out_seq_offset);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYPERFIT_H */
