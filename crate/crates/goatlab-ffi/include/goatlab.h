#ifndef GOATLAB_H
#define GOATLAB_H

/* Generated by cbindgen from the goatlab-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum GoatlabStatus {
  GOATLAB_OK = 0,
  // A null pointer or otherwise unusable argument.
  GOATLAB_BAD_ARGUMENT = 1,
  // Rejected configuration or parameter value.
  GOATLAB_CONFIG_ERROR = 2,
  // Non-finite arithmetic or a failed numeric invariant.
  GOATLAB_NUMERIC_ERROR = 3,
  // File system failure.
  GOATLAB_IO_ERROR = 4,
  // Internal panic captured at the boundary.
  GOATLAB_PANIC = 5,
} GoatlabStatus;

// Opaque behavior-dataset handle.
typedef struct goatlab_dataset goatlab_dataset;

// Opaque trained-policy handle.
typedef struct goatlab_policy goatlab_policy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the most recent error message on this thread into `buf` (always
// NUL-terminated, truncated to `cap` bytes). Returns the full message
// length in bytes, excluding the terminator.
//
// # Safety
// `buf` must point to `cap` writable bytes, or be null (query mode).
size_t goatlab_last_error(char *buf, size_t cap);

// Library version as a static NUL-terminated string.
const char *goatlab_version(void);

// Generate a behavior dataset. `expert` nonzero rolls the optimal policy;
// zero rolls the reference noisy policy.
//
// # Safety
// `out` must be a valid pointer; the returned handle must be released with
// [`goatlab_dataset_free`].
enum GoatlabStatus goatlab_dataset_generate(int32_t expert,
                                            size_t n_traj,
                                            uint64_t seed,
                                            struct goatlab_dataset **out);

// Load a dataset from an NDJSON file.
//
// # Safety
// `path` must be NUL-terminated; `out` must be valid; release the handle
// with [`goatlab_dataset_free`].
enum GoatlabStatus goatlab_dataset_load(const char *path, struct goatlab_dataset **out);

// Write a dataset as NDJSON.
//
// # Safety
// `ds` must be a live handle from this library; `path` NUL-terminated.
enum GoatlabStatus goatlab_dataset_save(const struct goatlab_dataset *ds, const char *path);

// Number of transitions in the dataset.
//
// # Safety
// `ds` must be a live handle; `out` must be valid.
enum GoatlabStatus goatlab_dataset_len(const struct goatlab_dataset *ds, size_t *out);

// Release a dataset handle. Null is a no-op.
//
// # Safety
// `ds` must have come from this library and not been freed before.
void goatlab_dataset_free(struct goatlab_dataset *ds);

// Train `algo` (by name: bc, gcsl, marwil_her, wgcsl, goat, goat_tau,
// ddpg_her, cql_her) on the dataset for `updates` gradient steps (0 keeps
// the algorithm's preset budget) and return the trained policy.
//
// # Safety
// `ds` must be a live handle; `algo` NUL-terminated; `out` valid; release
// the policy with [`goatlab_policy_free`].
enum GoatlabStatus goatlab_train(const char *algo,
                                 const struct goatlab_dataset *ds,
                                 uint64_t seed,
                                 uint64_t updates,
                                 struct goatlab_policy **out);

// Load a policy from its single-file container.
//
// # Safety
// `path` NUL-terminated; `out` valid; release with [`goatlab_policy_free`].
enum GoatlabStatus goatlab_policy_load(const char *path, struct goatlab_policy **out);

// Save a policy to its single-file container.
//
// # Safety
// `policy` must be a live handle; `path` NUL-terminated.
enum GoatlabStatus goatlab_policy_save(const struct goatlab_policy *policy, const char *path);

// Evaluate the policy's action at a state and goal. Components are written
// to `out_ax` and `out_ay`; both lie within the action bound.
//
// # Safety
// `policy` must be a live handle; both output pointers must be valid.
enum GoatlabStatus goatlab_policy_act(const struct goatlab_policy *policy,
                                      double sx,
                                      double sy,
                                      double gx,
                                      double gy,
                                      double *out_ax,
                                      double *out_ay);

// Success rate of the policy over `n_goals` goals drawn uniformly on the
// circle of the given radius, episodes starting at the origin.
//
// # Safety
// `policy` must be a live handle; `out` must be valid.
enum GoatlabStatus goatlab_policy_success_rate(const struct goatlab_policy *policy,
                                               double radius,
                                               size_t n_goals,
                                               uint64_t seed,
                                               double *out);

// Release a policy handle. Null is a no-op.
//
// # Safety
// `policy` must have come from this library and not been freed before.
void goatlab_policy_free(struct goatlab_policy *policy);

// Worst-case variation divergence from the distribution `probs[0..n]` to
// the family of distributions with per-outcome probability at most `cap`.
//
// # Safety
// `probs` must point to `n` readable doubles; `out` must be valid.
enum GoatlabStatus goatlab_worst_case_shift(const double *probs, size_t n, double cap, double *out);

// Check that the uniform distribution minimizes the worst-case shift over
// `trials` random competitors. Writes the smallest observed margin; a
// positive margin means the property held everywhere.
//
// # Safety
// `out_min_margin` must be a valid pointer.
enum GoatlabStatus goatlab_verify_minimax(size_t n,
                                          double cap,
                                          size_t trials,
                                          uint64_t seed,
                                          double *out_min_margin);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GOATLAB_H */
