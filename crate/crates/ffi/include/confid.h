#ifndef CONFID_H
#define CONFID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ConfidStatus {
  CONFID_STATUS_OK = 0,
  CONFID_STATUS_NULL_POINTER = 1,
  CONFID_STATUS_INVALID_UTF8 = 2,
  CONFID_STATUS_INVALID_CONFIG = 3,
  CONFID_STATUS_TRUNCATED_LEASE = 4,
  CONFID_STATUS_SIG_LEN_MISMATCH = 5,
  CONFID_STATUS_INVALID_ROLE = 6,
  CONFID_STATUS_INVALID_EXPIRATION = 7,
  CONFID_STATUS_BUFFER_TOO_SMALL = 8,
  CONFID_STATUS_INVALID_KEY = 9,
  CONFID_STATUS_PANIC = 10,
} ConfidStatus;

typedef struct ConfidLease ConfidLease;

typedef struct ConfidResult ConfidResult;

typedef struct ConfidScenario ConfidScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (UTF-8, not NUL-terminated).
 *
 * # Safety
 * See the buffer convention in the crate docs.
 */
enum ConfidStatus confid_last_error(uint8_t *buf, size_t cap, size_t *len_out);

/**
 * NUL-terminated crate version; static storage.
 */
const char *confid_version(void);

/**
 * SHA-256 of `data[0..len]` into `out[0..32]`.
 *
 * # Safety
 * `data` valid for `len` bytes; `out` valid for 32 writable bytes.
 */
enum ConfidStatus confid_hash(const uint8_t *data, size_t len, uint8_t *out);

/**
 * Parses and validates a TOML scenario.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be valid for one pointer write.
 */
enum ConfidStatus confid_scenario_from_toml(const char *toml, struct ConfidScenario **out);

/**
 * Honest baseline cluster with `agents` agents.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum ConfidStatus confid_scenario_baseline(uint32_t n,
                                           uint32_t k,
                                           uint32_t agents,
                                           uint64_t seed,
                                           struct ConfidScenario **out);

/**
 * # Safety
 * `scenario` must be null or a live handle; it is invalid afterwards.
 */
void confid_scenario_free(struct ConfidScenario *scenario);

/**
 * Serializes the scenario back to TOML.
 *
 * # Safety
 * `scenario` must be a live handle; see the buffer convention.
 */
enum ConfidStatus confid_scenario_toml(const struct ConfidScenario *scenario,
                                       uint8_t *buf,
                                       size_t cap,
                                       size_t *len_out);

/**
 * Runs the scenario to completion.
 *
 * # Safety
 * `scenario` must be a live handle; `out` valid for one pointer write.
 */
enum ConfidStatus confid_run(const struct ConfidScenario *scenario, struct ConfidResult **out);

/**
 * # Safety
 * `result` must be a live handle; `pass` valid for one write.
 */
enum ConfidStatus confid_result_all_pass(const struct ConfidResult *result, bool *pass);

/**
 * Canonical JSON of the result.
 *
 * # Safety
 * `result` must be a live handle; see the buffer convention.
 */
enum ConfidStatus confid_result_json(const struct ConfidResult *result,
                                     uint8_t *buf,
                                     size_t cap,
                                     size_t *len_out);

/**
 * # Safety
 * `result` must be null or a live handle; it is invalid afterwards.
 */
void confid_result_free(struct ConfidResult *result);

/**
 * Decodes a wire-format lease; the error status names the framing failure.
 *
 * # Safety
 * `data` valid for `len` bytes; `out` valid for one pointer write.
 */
enum ConfidStatus confid_lease_decode(const uint8_t *data, size_t len, struct ConfidLease **out);

/**
 * # Safety
 * `lease` must be a live handle; see the buffer convention.
 */
enum ConfidStatus confid_lease_encode(const struct ConfidLease *lease,
                                      uint8_t *buf,
                                      size_t cap,
                                      size_t *len_out);

/**
 * Issuing administrator, role bits and expiration (agent trusted-time seconds).
 *
 * # Safety
 * `lease` must be a live handle; each output pointer may be null to skip it.
 */
enum ConfidStatus confid_lease_fields(const struct ConfidLease *lease,
                                      uint32_t *admin_id,
                                      uint32_t *role,
                                      uint64_t *expiration);

/**
 * Checks the lease signature against one encoded administrator key.
 *
 * # Safety
 * `lease` must be a live handle; `key` valid for `key_len` bytes; `valid` for one write.
 */
enum ConfidStatus confid_lease_verify(const struct ConfidLease *lease,
                                      const uint8_t *key,
                                      size_t key_len,
                                      bool *valid);

/**
 * # Safety
 * `lease` must be null or a live handle; it is invalid afterwards.
 */
void confid_lease_free(struct ConfidLease *lease);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONFID_H */
