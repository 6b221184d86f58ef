#ifndef CBFAL_H
#define CBFAL_H

/* Generated from the cbfal-ffi crate by cbindgen; edit the Rust source instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a library call. Zero is success; everything else names the
 * first reason the call could not complete.
 */
typedef enum CbfStatus {
  /**
   * The call succeeded.
   */
  CBF_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  CBF_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  CBF_STATUS_INVALID_UTF8 = 2,
  /**
   * The scenario registry has no entry under the given name.
   */
  CBF_STATUS_UNKNOWN_SCENARIO = 3,
  /**
   * An override or configuration value violated a documented precondition.
   */
  CBF_STATUS_INVALID_CONFIG = 4,
  /**
   * The run could not produce a usable result, for example a constraint
   * became degenerate while violated.
   */
  CBF_STATUS_RUN_FAILED = 5,
  /**
   * Reading or writing a file failed.
   */
  CBF_STATUS_IO = 6,
  /**
   * A panic was caught at the boundary; treat in-flight handles as
   * suspect and rebuild them.
   */
  CBF_STATUS_INTERNAL = 7,
} CbfStatus;

/**
 * A completed run: the check report plus, for simulating modes, the recorded
 * trajectory. Opaque; produced by [`cbf_scenario_run`], released with
 * [`cbf_run_free`].
 */
typedef struct CbfRun CbfRun;

/**
 * A built scenario: plant, barrier functional, filter, and configuration
 * resolved from the registry with overrides applied. Opaque; create with
 * [`cbf_scenario_build`], release with [`cbf_scenario_free`].
 */
typedef struct CbfScenario CbfScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the message for the most recent failure on the calling thread, or
 * an empty string if none has occurred. The pointer stays valid until the
 * next failing call on the same thread; copy the contents out before making
 * another call. Do not free.
 */
const char *cbf_last_error(void);

/**
 * Builds a scenario from its registry name (`case1` through `case4`,
 * `predator_prey`) with optional TOML overrides. Pass null or an empty
 * string for defaults; the override keys match the CLI's `--set` names, with
 * nested tables flattened as dotted keys. On success stores a new handle in
 * `*out`; on failure `*out` is untouched.
 *
 * # Safety
 *
 * `name` and `overrides_toml` must be NUL-terminated when non-null; `out`
 * must be a valid location to store a pointer.
 */
enum CbfStatus cbf_scenario_build(const char *name,
                                  const char *overrides_toml,
                                  struct CbfScenario **out);

/**
 * Returns the scenario's registry name, or null for a null handle. The
 * pointer is owned by the handle and stays valid until
 * [`cbf_scenario_free`]; do not free.
 *
 * # Safety
 *
 * `scenario`, when non-null, must be a live handle from
 * [`cbf_scenario_build`].
 */
const char *cbf_scenario_name(const struct CbfScenario *scenario);

/**
 * Runs the scenario and evaluates its checks. Simulating modes record the
 * full trajectory; demonstration scenarios, which exist to show a structural
 * rejection, produce a report without records. On success stores a new
 * handle in `*out`.
 *
 * # Safety
 *
 * `scenario` must be a live handle from [`cbf_scenario_build`]; `out` must
 * be a valid location to store a pointer.
 */
enum CbfStatus cbf_scenario_run(const struct CbfScenario *scenario, struct CbfRun **out);

/**
 * Releases a scenario handle. Null is a no-op.
 *
 * # Safety
 *
 * `scenario` must be null or a handle from [`cbf_scenario_build`] not yet
 * freed.
 */
void cbf_scenario_free(struct CbfScenario *scenario);

/**
 * Stores whether every check in the run's report passed.
 *
 * # Safety
 *
 * `run` must be a live handle from [`cbf_scenario_run`]; `out` must be a
 * valid location to store a `bool`.
 */
enum CbfStatus cbf_run_pass(const struct CbfRun *run, bool *out);

/**
 * Serializes the run's check report as JSON. On success stores a heap
 * string in `*out`; release it with [`cbf_string_free`].
 *
 * # Safety
 *
 * `run` must be a live handle from [`cbf_scenario_run`]; `out` must be a
 * valid location to store a pointer.
 */
enum CbfStatus cbf_run_report_json(const struct CbfRun *run, char **out);

/**
 * Writes the recorded trajectory as CSV with header
 * `t,x_0..x_{n-1},u_0..u_{m-1},H,He,phi,active`. Demonstration runs record
 * no trajectory and fail with `CBF_STATUS_INVALID_CONFIG`.
 *
 * # Safety
 *
 * `run` must be a live handle from [`cbf_scenario_run`]; `path` must be a
 * NUL-terminated file path.
 */
enum CbfStatus cbf_run_write_csv(const struct CbfRun *run, const char *path);

/**
 * Releases a run handle. Null is a no-op.
 *
 * # Safety
 *
 * `run` must be null or a handle from [`cbf_scenario_run`] not yet freed.
 */
void cbf_run_free(struct CbfRun *run);

/**
 * Evaluates the closed-form minimum-norm filter on one constraint: given
 * the constraint value `phi` at the desired control, the input-path row
 * `phi0` (length `m`), and the desired control `u_des` (length `m`), writes
 * the filtered control to `u_out` (length `m`). A satisfied constraint
 * passes `u_des` through; a violated one is projected onto the constraint
 * boundary. Pass `epsilon_guard <= 0` for the library default denominator
 * guard. `active_out` may be null; when provided it receives whether the
 * constraint modified the control. A violated constraint with `|phi0|` at
 * or below the guard has no finite restoring control and fails with
 * `CBF_STATUS_RUN_FAILED`.
 *
 * # Safety
 *
 * `phi0`, `u_des`, and `u_out` must each point to `m` readable (writable
 * for `u_out`) doubles.
 */
enum CbfStatus cbf_qp_filter(double phi,
                             const double *phi0,
                             size_t m,
                             const double *u_des,
                             double epsilon_guard,
                             double *u_out,
                             bool *active_out);

/**
 * Returns the library version as a static string; do not free.
 */
const char *cbf_version(void);

/**
 * Returns a static human-readable name for a status code; do not free.
 */
const char *cbf_status_name(enum CbfStatus status);

/**
 * Releases a string returned through an out-parameter of this library.
 * Null is a no-op.
 *
 * # Safety
 *
 * `s` must be null or a string obtained from this library not yet freed.
 */
void cbf_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* CBFAL_H */
