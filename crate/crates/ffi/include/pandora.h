#ifndef PANDORA_H
#define PANDORA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PandoraStatus {
  PANDORA_STATUS_OK = 0,
  PANDORA_STATUS_NULL_POINTER = 1,
  PANDORA_STATUS_INVALID_UTF8 = 2,
  PANDORA_STATUS_PARSE = 3,
  PANDORA_STATUS_VALIDATION = 4,
  PANDORA_STATUS_CAPACITY = 5,
  PANDORA_STATUS_PRECONDITION = 6,
  PANDORA_STATUS_INTERNAL = 7,
  PANDORA_STATUS_PANIC = 8,
  PANDORA_STATUS_OUT_OF_RANGE = 9,
} PandoraStatus;

typedef enum PandoraStrategy {
  PANDORA_STRATEGY_MAIN = 0,
  PANDORA_STRATEGY_INSTANT = 1,
  PANDORA_STRATEGY_FIXED = 2,
  PANDORA_STRATEGY_FIXED_HEURISTIC = 3,
  PANDORA_STRATEGY_WEITZMAN = 4,
} PandoraStrategy;

/**
 * Opaque instance handle.
 */
typedef struct PandoraInstance PandoraInstance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a `pandora-time/1` JSON document and validates it.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PandoraStatus pandora_instance_from_json(const char *json, struct PandoraInstance **out);

/**
 * Releases an instance. Null is ignored.
 *
 * # Safety
 * `handle` must come from [`pandora_instance_from_json`] and not be used afterwards.
 */
void pandora_instance_free(struct PandoraInstance *handle);

/**
 * # Safety
 * `handle` must be a live instance and `out` writable.
 */
enum PandoraStatus pandora_instance_box_count(const struct PandoraInstance *handle, size_t *out);

/**
 * # Safety
 * `handle` must be a live instance and `out` writable.
 */
enum PandoraStatus pandora_instance_horizon(const struct PandoraInstance *handle, size_t *out);

/**
 * Reservation value of box `box_idx` (0-based) at round `time` (1-based).
 * Fails with `OutOfRange` when the box cannot be inspected at that round.
 *
 * # Safety
 * `handle` must be a live instance and `out` writable.
 */
enum PandoraStatus pandora_reservation_value(const struct PandoraInstance *handle,
                                             size_t box_idx,
                                             size_t time,
                                             double *out);

/**
 * Exact expected utility of a strategy.
 *
 * # Safety
 * `handle` must be a live instance and `out` writable.
 */
enum PandoraStatus pandora_exact_utility(const struct PandoraInstance *handle,
                                         enum PandoraStrategy strategy,
                                         uint64_t seed,
                                         double *out);

/**
 * Optimal adaptive value under the default size guards.
 *
 * # Safety
 * `handle` must be a live instance and `out` writable.
 */
enum PandoraStatus pandora_oracle_value(const struct PandoraInstance *handle, double *out);

/**
 * Full pipeline report as a JSON string, to be freed with [`pandora_string_free`].
 *
 * # Safety
 * `handle` must be a live instance and `out_json` writable.
 */
enum PandoraStatus pandora_pipeline_json(const struct PandoraInstance *handle,
                                         uint64_t seed,
                                         bool with_oracle,
                                         char **out_json);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void pandora_string_free(char *s);

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next library call on this thread.
 */
const char *pandora_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pandora_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PANDORA_H */
