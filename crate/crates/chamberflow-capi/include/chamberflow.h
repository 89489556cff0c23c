/* C interface to chamberflow. Strings returned through out-pointers are freed with cf_string_free; handles with their matching _free. */

#ifndef CHAMBERFLOW_H
#define CHAMBERFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible entry point. Nonzero means the
// call failed and `cf_last_error` holds a message.
typedef enum CfStatus {
  CF_STATUS_OK = 0,
  CF_STATUS_NULL_ARGUMENT = 1,
  CF_STATUS_INVALID_UTF8 = 2,
  CF_STATUS_CONFIG = 3,
  CF_STATUS_GEOMETRY = 4,
  CF_STATUS_WALL = 5,
  CF_STATUS_DEGENERACY = 6,
  CF_STATUS_QUADRATURE = 7,
  CF_STATUS_NUMERICAL = 8,
  CF_STATUS_INPUT = 9,
  CF_STATUS_IO = 10,
  CF_STATUS_PANIC = 11,
} CfStatus;

// Opaque run configuration.
typedef struct CfConfig CfConfig;

// Opaque finished trajectory.
typedef struct CfTrajectory CfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *cf_version(void);

// Message of the most recent failure on this thread, or null. Valid until
// the next failing call on the same thread; do not free.
const char *cf_last_error(void);

// Frees a string returned through an out-pointer.
//
// # Safety
// `s` must be a pointer previously returned by this library, or null.
void cf_string_free(char *s);

// Parses a TOML config from text and validates it end to end.
//
// # Safety
// `text` must be a NUL-terminated string, `out` a valid pointer.
enum CfStatus cf_config_parse(const char *text, struct CfConfig **out);

// Reads and parses a TOML config file.
//
// # Safety
// `path` must be a NUL-terminated string, `out` a valid pointer.
enum CfStatus cf_config_load(const char *path, struct CfConfig **out);

// # Safety
// `cfg` must come from `cf_config_parse`/`cf_config_load`, or be null.
void cf_config_free(struct CfConfig *cfg);

// Existence test at the origin plus the solved soliton vector and the
// test there; the result lands in `out_json` as the same JSON object the
// CLI writes under "criterion" (keys "ke" and "soliton").
//
// # Safety
// `cfg` must be a live config handle, `out_json` a valid pointer.
enum CfStatus cf_criterion_run(const struct CfConfig *cfg, char **out_json);

// Integrates the flow and hands back an opaque trajectory handle.
//
// # Safety
// `cfg` must be a live config handle, `out` a valid pointer.
enum CfStatus cf_flow_run(const struct CfConfig *cfg, struct CfTrajectory **out);

// # Safety
// `traj` must come from `cf_flow_run`/`cf_trajectory_parse`, or be null.
void cf_trajectory_free(struct CfTrajectory *traj);

// Serializes a trajectory (records, checkpoints, status) as JSON.
//
// # Safety
// `traj` must be a live trajectory handle, `out_json` a valid pointer.
enum CfStatus cf_trajectory_to_json(const struct CfTrajectory *traj, char **out_json);

// Rebuilds a trajectory handle from JSON produced by
// `cf_trajectory_to_json` (bit-exact round trip).
//
// # Safety
// `text` must be a NUL-terminated string, `out` a valid pointer.
enum CfStatus cf_trajectory_parse(const char *text, struct CfTrajectory **out);

// Classifies a finished run under the config's thresholds.
//
// # Safety
// `cfg` and `traj` must be live handles, `out_json` a valid pointer.
enum CfStatus cf_classify_run(const struct CfConfig *cfg,
                              const struct CfTrajectory *traj,
                              char **out_json);

// Degeneration data (root partition, generators, limit geometry) from an
// explicit drift vector of length `len`.
//
// # Safety
// `cfg` must be a live handle, `y` must point to `len` doubles, `out_json`
// must be a valid pointer.
enum CfStatus cf_degenerate(const struct CfConfig *cfg,
                            const double *y,
                            uintptr_t len,
                            char **out_json);

// criterion, then flow, then classify, with the same cross-checks the CLI
// appends; stages are skipped when no [grid] block or t_final = 0.
//
// # Safety
// `cfg` must be a live handle, `out_json` a valid pointer.
enum CfStatus cf_pipeline_run(const struct CfConfig *cfg, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHAMBERFLOW_H */
