#ifndef VNFACTOR_H
#define VNFACTOR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VnStatus {
  VN_STATUS_OK = 0,
  VN_STATUS_INPUT_ERROR = 1,
  VN_STATUS_ASSERTION_FAILURE = 2,
  VN_STATUS_INFEASIBLE = 3,
  VN_STATUS_CONSTRUCTION_FAILURE = 4,
  VN_STATUS_NULL_POINTER = 5,
  VN_STATUS_PANIC = 6,
} VnStatus;

// A chain transcript.
typedef struct VnChain VnChain;

// A run report (bounds, stabilize or star-equiv).
typedef struct VnReport VnReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a successful call.
// The pointer stays valid until the next vnfactor call on this thread.
const char *vn_last_error(void);

// Library version as a static string.
const char *vn_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void vn_string_free(char *s);

// K(p) in decimal.
//
// # Safety
// `out` must be a valid pointer.
enum VnStatus vn_k_constant(uint32_t p, char **out);

// Randomized bound campaigns. `field_name` is "q", "qi" or "gf:p"; `shape` lists block sizes, e.g. "2,3".
// A negative `k_trials` uses `trials` for the stabilization campaigns.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be a valid pointer.
enum VnStatus vn_bounds(const char *field_name,
                        const char *shape,
                        uint64_t trials,
                        int64_t k_trials,
                        uint64_t seed,
                        struct VnReport **out);

// Stabilizes the matrix units of an instance given as JSON text.
//
// # Safety
// `instance_json` must be NUL-terminated; `out` must be a valid pointer.
enum VnStatus vn_stabilize(const char *instance_json, struct VnReport **out);

// Decides *-equivalence for a projection pair given as JSON text.
//
// # Safety
// `pair_json` must be NUL-terminated; `out` must be a valid pointer.
enum VnStatus vn_star_equiv(const char *pair_json, struct VnReport **out);

// Generates an instance file. `kind` is "stabilization" or "pair".
//
// # Safety
// String arguments must be NUL-terminated; `out` must be a valid pointer.
enum VnStatus vn_gen(const char *kind,
                     const char *field_name,
                     uint32_t p,
                     uint32_t ambient,
                     uint32_t budget,
                     uint32_t noise,
                     bool star,
                     uint64_t seed,
                     char **out);

// Builds a finite-stage chain in M_n at θ given as "a/b".
//
// # Safety
// String arguments must be NUL-terminated; `out` must be a valid pointer.
enum VnStatus vn_halperin(const char *field_name,
                          const char *theta,
                          uint32_t stages,
                          uint64_t ambient,
                          uint64_t seed,
                          struct VnChain **out);

// True when every assertion in the report passed. Null yields false.
//
// # Safety
// `r` must be null or a live report handle.
bool vn_report_all_pass(const struct VnReport *r);

// Number of assertions in the report. Null yields 0.
//
// # Safety
// `r` must be null or a live report handle.
size_t vn_report_assertion_count(const struct VnReport *r);

// The report as JSON, without timing fields.
//
// # Safety
// `r` must be a live report handle; `out` must be a valid pointer.
enum VnStatus vn_report_to_json(const struct VnReport *r, char **out);

// # Safety
// `r` must be null or a report handle not freed before.
void vn_report_free(struct VnReport *r);

// Number of stages after stage 0. Null yields 0.
//
// # Safety
// `c` must be null or a live chain handle.
size_t vn_chain_stage_count(const struct VnChain *c);

// True when every chain check (and the doubling bookkeeping, if present) holds.
//
// # Safety
// `c` must be null or a live chain handle.
bool vn_chain_all_hold(const struct VnChain *c);

// p_j and q_j of stage j (stage 0 is p = q = 1).
//
// # Safety
// `c` must be a live chain handle; `p` and `q` must be valid pointers.
enum VnStatus vn_chain_stage(const struct VnChain *c, size_t j, uint64_t *p, uint64_t *q);

// The chain transcript as JSON.
//
// # Safety
// `c` must be a live chain handle; `out` must be a valid pointer.
enum VnStatus vn_chain_to_json(const struct VnChain *c, char **out);

// # Safety
// `c` must be null or a chain handle not freed before.
void vn_chain_free(struct VnChain *c);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VNFACTOR_H */
