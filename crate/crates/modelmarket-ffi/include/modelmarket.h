#ifndef MODELMARKET_H
#define MODELMARKET_H

/* Generated by cbindgen from modelmarket-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum MmStatus {
  MM_STATUS_OK = 0,
  /**
   * Null pointer or malformed UTF-8 argument.
   */
  MM_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Scenario or instance file failed to parse or validate.
   */
  MM_STATUS_BAD_SCENARIO = 2,
  /**
   * The run itself failed (benchmark aborted, exchange failed ...).
   */
  MM_STATUS_RUN_FAILED = 3,
} MmStatus;

/**
 * A finished whole-market run.
 */
typedef struct MmRun MmRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread. Borrowed;
 * valid until the next failing call on the same thread.
 */
const char *mm_last_error(void);

/**
 * Library version as a static string.
 */
const char *mm_version(void);

/**
 * Free a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must be a pointer previously returned by one of the
 * string-returning functions here, not yet freed.
 */
void mm_string_free(char *s);

/**
 * Run a full market scenario. `scenario_toml` may be null for the
 * built-in scenario; `out_run` receives an owned handle on success.
 *
 * # Safety
 * `scenario_toml` must be null or a valid NUL-terminated UTF-8 string;
 * `out_run` must be a valid pointer to writable memory.
 */
enum MmStatus mm_simulate(const char *scenario_toml, uint64_t seed, struct MmRun **out_run);

/**
 * Free a run handle. Null is a no-op.
 *
 * # Safety
 * `run` must be a handle from [`mm_simulate`], not yet freed.
 */
void mm_run_free(struct MmRun *run);

/**
 * Market outcome of a run as a JSON string (caller frees).
 *
 * # Safety
 * `run` must be a live handle from [`mm_simulate`].
 */
char *mm_run_outcome_json(const struct MmRun *run);

/**
 * Full transcript of a run as JSON lines (caller frees).
 *
 * # Safety
 * `run` must be a live handle from [`mm_simulate`].
 */
char *mm_run_transcript_jsonl(const struct MmRun *run);

/**
 * Hex digest of the transcript: the determinism witness (caller frees).
 *
 * # Safety
 * `run` must be a live handle from [`mm_simulate`].
 */
char *mm_run_transcript_digest_hex(const struct MmRun *run);

/**
 * Run one benchmark flow and return the on-chain result as JSON
 * (caller frees via [`mm_string_free`]).
 *
 * # Safety
 * `scenario_toml` must be null or valid UTF-8; `out_json` must be
 * writable.
 */
enum MmStatus mm_bench(const char *scenario_toml, uint64_t seed, char **out_json);

/**
 * Run a benchmark followed by an exchange; returns settlement JSON.
 *
 * # Safety
 * Same contracts as [`mm_bench`].
 */
enum MmStatus mm_trade(const char *scenario_toml, uint64_t seed, char **out_json);

/**
 * Run one adversary strategy; returns the attack-cell verdict as JSON.
 * Strategies: forge_model, rollback, tamper_samples, withhold_key,
 * swap_key, repudiate.
 *
 * # Safety
 * `strategy` must be a valid NUL-terminated UTF-8 string; `out_json`
 * must be writable.
 */
enum MmStatus mm_attack(const char *strategy, uint64_t seed, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODELMARKET_H */
