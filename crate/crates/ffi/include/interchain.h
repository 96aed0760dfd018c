#ifndef INTERCHAIN_H
#define INTERCHAIN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IcParty {
  IC_PARTY_VES = 0,
  IC_PARTY_CLIENT = 1,
} IcParty;

typedef enum IcStatus {
  IC_STATUS_OK = 0,
  IC_STATUS_NULL_ARGUMENT = 1,
  IC_STATUS_INVALID_UTF8 = 2,
  IC_STATUS_NOT_FOUND = 3,
  IC_STATUS_PARSE = 4,
  IC_STATUS_COMPILE = 5,
  IC_STATUS_RUN = 6,
  IC_STATUS_CAP_EXCEEDED = 7,
  IC_STATUS_DECODE = 8,
  IC_STATUS_PANIC = 9,
} IcStatus;

/**
 * The report of one scenario run.
 */
typedef struct IcReport IcReport;

/**
 * A compiled transaction dependency graph.
 */
typedef struct IcTdg IcTdg;

/**
 * Message for the last failed call on this thread, or null after a
 * success. Valid until the next call on the same thread.
 */
const char *ic_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a pointer returned by this library, not yet freed.
 */
void ic_string_free(char *s);

/**
 * Compiles an HSL program. `config` may be null, in which case
 * `<ifaces>/ves.toml` is used.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum IcStatus ic_compile(const char *program,
                         const char *ifaces,
                         const char *config,
                         struct IcTdg **out);

/**
 * Parses a graph from its JSON form.
 *
 * # Safety
 * `json` must be null or NUL-terminated; `out` must be writable.
 */
enum IcStatus ic_tdg_from_json(const char *json, struct IcTdg **out);

/**
 * Canonical JSON of the graph, or null if `tdg` is null.
 *
 * # Safety
 * `tdg` must be null or a live handle.
 */
char *ic_tdg_to_json(const struct IcTdg *tdg);

/**
 * Number of transaction wrappers; 0 for a null handle.
 *
 * # Safety
 * `tdg` must be null or a live handle.
 */
size_t ic_tdg_len(const struct IcTdg *tdg);

/**
 * Stake `party` must lock for the graph.
 *
 * # Safety
 * `tdg` must be null or a live handle; `out` must be writable.
 */
enum IcStatus ic_tdg_stake(const struct IcTdg *tdg, enum IcParty party, size_t cap, uint64_t *out);

/**
 * # Safety
 * `tdg` must be null or a handle not yet freed.
 */
void ic_tdg_free(struct IcTdg *tdg);

/**
 * Runs a scenario file. A negative `seed` keeps the file's seed.
 *
 * # Safety
 * `scenario` must be null or NUL-terminated; `out` must be writable.
 */
enum IcStatus ic_run_scenario(const char *scenario, int64_t seed, struct IcReport **out);

/**
 * True when atomicity held and every declared expectation was met.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
bool ic_report_passed(const struct IcReport *report);

/**
 * `committed`, `reverted`, `aborted` or `unsettled`; null for a null handle.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
char *ic_report_outcome(const struct IcReport *report);

/**
 * The full report as JSON with sorted keys.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
char *ic_report_to_json(const struct IcReport *report);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void ic_report_free(struct IcReport *report);

/**
 * Checks an encoded membership proof against a 32-byte root.
 *
 * # Safety
 * `root` must point to 32 bytes, `proof` to `len` bytes; `valid` must be
 * writable.
 */
enum IcStatus ic_verify_membership(const uint8_t *root,
                                   const uint8_t *proof,
                                   size_t len,
                                   bool *valid);

/**
 * Checks an encoded non-membership proof for `key` against a root.
 *
 * # Safety
 * `root` must point to 32 bytes, `key` to `key_len` bytes and `proof` to
 * `len` bytes; `valid` must be writable.
 */
enum IcStatus ic_verify_non_membership(const uint8_t *root,
                                       const uint8_t *key,
                                       size_t key_len,
                                       const uint8_t *proof,
                                       size_t len,
                                       bool *valid);

#endif  /* INTERCHAIN_H */
