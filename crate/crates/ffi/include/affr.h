#ifndef AFFR_H
#define AFFR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum AffrStatus {
  AFFR_STATUS_OK = 0,
  AFFR_STATUS_NULL_POINTER = 1,
  AFFR_STATUS_INVALID_ARGUMENT = 2,
  AFFR_STATUS_CONFIG_ERROR = 3,
  AFFR_STATUS_RUNTIME_ERROR = 4,
  AFFR_STATUS_PROTOCOL_ABORT = 5,
  AFFR_STATUS_PANIC = 6,
} AffrStatus;

/**
 * Parsed scenario configuration.
 */
typedef struct AffrConfig AffrConfig;

/**
 * Secure-aggregation session for one round.
 */
typedef struct AffrMaskSession AffrMaskSession;

/**
 * Aggregate results of a multi-seed run.
 */
typedef struct AffrRunSummary {
  double mean_accuracy;
  double std_accuracy;
  double mean_dropout_rate;
  double mean_participants;
  /**
   * Infinite when the scenario adds no noise.
   */
  double epsilon_spent;
  size_t num_seeds;
} AffrRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *affr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *affr_version(void);

/**
 * Parses TOML config text with `n_overrides` `key=value` overrides.
 *
 * # Safety
 * `toml` must be a NUL-terminated string, `overrides` an array of
 * `n_overrides` such strings (may be NULL when zero), `out` writable.
 */
enum AffrStatus affr_config_parse(const char *toml,
                                  const char *const *overrides,
                                  size_t n_overrides,
                                  struct AffrConfig **out);

/**
 * # Safety
 * `config` must come from [`affr_config_parse`] and not be used afterwards.
 */
void affr_config_free(struct AffrConfig *config);

/**
 * Writes the 16-hex-digit config hash plus NUL into `buf` (at least 17 bytes).
 *
 * # Safety
 * `config` must be a live handle and `buf` writable for `len` bytes.
 */
enum AffrStatus affr_config_hash(const struct AffrConfig *config, char *buf, size_t len);

/**
 * Runs the configured scenario over all seeds, writes its CSVs to `out_dir`
 * and fills `summary`.
 *
 * # Safety
 * `config` must be a live handle, `out_dir` a NUL-terminated path,
 * `summary` writable.
 */
enum AffrStatus affr_run(const struct AffrConfig *config,
                         const char *out_dir,
                         struct AffrRunSummary *summary);

/**
 * Runs all four scenarios for each configured model and writes the
 * comparison CSVs to `out_dir`.
 *
 * # Safety
 * `config` must be a live handle and `out_dir` a NUL-terminated path.
 */
enum AffrStatus affr_compare(const struct AffrConfig *config, const char *out_dir);

/**
 * (ε, δ) spend of `rounds` Gaussian mechanisms with noise `sigma` and
 * sensitivity `clip_norm`.
 *
 * # Safety
 * `epsilon` must be writable.
 */
enum AffrStatus affr_rdp_epsilon(double sigma,
                                 size_t rounds,
                                 double delta,
                                 double clip_norm,
                                 double *epsilon);

/**
 * Smallest noise level whose spend after `rounds` stays within `target_epsilon`.
 *
 * # Safety
 * `sigma` must be writable.
 */
enum AffrStatus affr_sigma_for_budget(double target_epsilon,
                                      double delta,
                                      size_t rounds,
                                      double clip_norm,
                                      double *sigma);

/**
 * Opens a masking session over `n` distinct participant ids.
 *
 * # Safety
 * `participants` must hold `n` ids and `out` be writable.
 */
enum AffrStatus affr_mask_session_new(uint64_t master_seed,
                                      uint64_t round,
                                      uint64_t attempt,
                                      const uint64_t *participants,
                                      size_t n,
                                      uint32_t fraction_bits,
                                      struct AffrMaskSession **out);

/**
 * # Safety
 * `session` must come from [`affr_mask_session_new`] and not be used afterwards.
 */
void affr_mask_session_free(struct AffrMaskSession *session);

/**
 * Quantizes and masks one client's `len` values into `words`.
 *
 * # Safety
 * `session` must be live, `values` readable and `words` writable for `len`
 * elements.
 */
enum AffrStatus affr_mask(const struct AffrMaskSession *session,
                          uint64_t client_id,
                          const double *values,
                          size_t len,
                          uint64_t *words);

/**
 * Sums `n` masked vectors of `len` words (row-major in `words`, one row per
 * entry of `client_ids`) and writes their mean to `mean`. Returns
 * [`AffrStatus::ProtocolAbort`] unless exactly the session's participants
 * contributed.
 *
 * # Safety
 * `session` must be live; `client_ids` readable for `n`, `words` for
 * `n * len`, and `mean` writable for `len` elements.
 */
enum AffrStatus affr_aggregate(const struct AffrMaskSession *session,
                               const uint64_t *client_ids,
                               const uint64_t *words,
                               size_t n,
                               size_t len,
                               double *mean);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AFFR_H */
