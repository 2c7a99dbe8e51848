#ifndef SPEECHSEM_H
#define SPEECHSEM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Channel between the transmitter and the receiver.
 */
typedef enum SsChannel {
  SS_CHANNEL_AWGN = 0,
  SS_CHANNEL_RAYLEIGH = 1,
  /**
   * AWGN draw with σ² forced to 0.
   */
  SS_CHANNEL_NOISELESS = 2,
} SsChannel;

/**
 * Result code of every exported function.
 */
typedef enum SsStatus {
  SS_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  SS_STATUS_NULL_POINTER = 1,
  /**
   * An argument is out of range or malformed.
   */
  SS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The filesystem refused a read or write.
   */
  SS_STATUS_IO = 3,
  /**
   * A checkpoint or config could not be understood.
   */
  SS_STATUS_FORMAT = 4,
  /**
   * Non-finite or degenerate numerics.
   */
  SS_STATUS_NUMERIC = 5,
  /**
   * The output buffer is too small; the required length was written.
   */
  SS_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  SS_STATUS_INTERNAL = 7,
} SsStatus;

/**
 * Opaque trained model.
 */
typedef struct SsModel SsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `cap` bytes, and returns its full length without the NUL.
 *
 * # Safety
 * `buf` is null or valid for `cap` writes.
 */
size_t ss_last_error(char *buf, size_t cap);

/**
 * Fresh model with the default configuration and seeded weights.
 *
 * # Safety
 * `out` is valid for one write.
 */
enum SsStatus ss_model_new(uint64_t seed, struct SsModel **out);

/**
 * Loads a checkpoint written by the CLI or [`ss_model_save`].
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is valid for one write.
 */
enum SsStatus ss_model_load(const char *path, struct SsModel **out);

/**
 * # Safety
 * `model` is a live handle; `path` is a NUL-terminated string.
 */
enum SsStatus ss_model_save(const struct SsModel *model, const char *path);

/**
 * Releases a handle; null is a no-op.
 *
 * # Safety
 * `model` is null or a handle not yet freed.
 */
void ss_model_free(struct SsModel *model);

/**
 * Trainable scalar count.
 *
 * # Safety
 * `model` is a live handle; `out` is valid for one write.
 */
enum SsStatus ss_model_param_count(const struct SsModel *model, size_t *out);

/**
 * Vocabulary size including the specials.
 *
 * # Safety
 * `model` is a live handle; `out` is valid for one write.
 */
enum SsStatus ss_model_vocab_size(const struct SsModel *model, size_t *out);

/**
 * Filterbank spectrum (`n_frames × 120`, channel fastest) of 16 kHz mono PCM.
 *
 * # Safety
 * `samples` is valid for `n` reads; `out` for `cap` writes; `out_len` for one.
 */
enum SsStatus ss_spectrum(const int16_t *samples,
                          size_t n,
                          double *out,
                          size_t cap,
                          size_t *out_len);

/**
 * Word error rate of `hyp` against a non-empty `reference`.
 *
 * # Safety
 * Both buffers are valid for their lengths; `out` for one write.
 */
enum SsStatus ss_wer(const uint32_t *reference,
                     size_t reference_len,
                     const uint32_t *hyp,
                     size_t hyp_len,
                     double *out);

/**
 * Lexical similarity in `[0, 1]` of two token sequences.
 *
 * # Safety
 * Both buffers are valid for their lengths; `out` for one write.
 */
enum SsStatus ss_similarity(const uint32_t *a,
                            size_t a_len,
                            const uint32_t *b,
                            size_t b_len,
                            double *out);

/**
 * Cuts at the first end-of-sentence token and drops the specials.
 *
 * # Safety
 * `tokens` is valid for `n` reads; `out` for `cap` writes; `out_len` for one.
 */
enum SsStatus ss_prune(const uint32_t *tokens,
                       size_t n,
                       uint32_t *out,
                       size_t cap,
                       size_t *out_len);

/**
 * Sends one spectrum through the whole chain and returns the receiver's
 * pruned transcript. `symbols`, when non-null, receives the count of
 * complex channel symbols spent. `channel` is an [`SsChannel`] value.
 *
 * # Safety
 * `model` is a live handle; `feats` is valid for `feats_len` reads; `out` for
 * `cap` writes; `out_len` for one; `symbols` is null or valid for one.
 */
enum SsStatus ss_transcribe(const struct SsModel *model,
                            const double *feats,
                            size_t feats_len,
                            uint32_t channel,
                            double snr_db,
                            uint64_t seed,
                            size_t max_len,
                            uint32_t *out,
                            size_t cap,
                            size_t *out_len,
                            size_t *symbols);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPEECHSEM_H */
