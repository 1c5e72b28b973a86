#ifndef RHFLOW_H
#define RHFLOW_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RhCommand {
  RH_COMMAND_RUN = 0,
  RH_COMMAND_VERIFY = 1,
  RH_COMMAND_FUNCTIONALS = 2,
  RH_COMMAND_REDUCED_VOLUME = 3,
} RhCommand;

typedef enum RhModelKind {
  RH_MODEL_KIND_SPHERE2 = 0,
  RH_MODEL_KIND_PRODUCT_S2L = 1,
} RhModelKind;

typedef enum RhStatus {
  RH_STATUS_OK = 0,
  RH_STATUS_NULL_POINTER = 1,
  RH_STATUS_INVALID_ARGUMENT = 2,
  RH_STATUS_CONFIG = 3,
  RH_STATUS_NUMERICAL = 4,
  RH_STATUS_IO = 5,
  RH_STATUS_CHECKPOINT = 6,
  RH_STATUS_PANIC = 7,
} RhStatus;

/*
 A validated run configuration.
 */
typedef struct RhConfig RhConfig;

/*
 A grid flow that can be advanced in stages.
 */
typedef struct RhFlow RhFlow;

/*
 Scalar diagnostics of the current flow state.
 */
typedef struct RhDiagnostics {
  double t;
  double vol;
  double s_min;
  double s_max;
  double sup_grad_phi_sq;
  double sup_rm;
} RhDiagnostics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *rh_version(void);

/*
 Length in bytes of the last error message on this thread, excluding the NUL; 0 if none.
 */
size_t rh_last_error_length(void);

/*
 Copy the last error message into `buf` (truncated, always NUL-terminated when `len > 0`).

 Returns the number of bytes written, excluding the NUL.

 # Safety
 `buf` must be valid for `len` bytes or null.
 */
size_t rh_last_error_message(char *buf, size_t len);

/*
 Parse and validate a JSON configuration.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum RhStatus rh_config_from_json(const char *json, struct RhConfig **out);

/*
 # Safety
 `config` must come from [`rh_config_from_json`] and not be used afterwards.
 */
void rh_config_free(struct RhConfig *config);

/*
 Run a command with artifacts written to `out_dir`; `exit_code` receives the CLI exit code.

 # Safety
 Pointers must be valid; `out_dir` NUL-terminated.
 */
enum RhStatus rh_execute(enum RhCommand command,
                         const struct RhConfig *config,
                         const char *out_dir,
                         int32_t *exit_code);

/*
 Exact homogeneous state `(c, d)` at time `t`.

 # Safety
 `c` and `d` must be writable.
 */
enum RhStatus rh_homogeneous_closed_form(enum RhModelKind kind,
                                         bool normalized,
                                         double alpha,
                                         double t,
                                         double *c,
                                         double *d);

/*
 Initial grid state described by `config`.

 # Safety
 `config` must be a live handle; `out` writable.
 */
enum RhStatus rh_flow_new(const struct RhConfig *config, struct RhFlow **out);

/*
 Restore a flow from a checkpoint file; run settings come from `config`.

 # Safety
 `config` must be a live handle; `path` NUL-terminated; `out` writable.
 */
enum RhStatus rh_flow_load(const struct RhConfig *config, const char *path, struct RhFlow **out);

/*
 # Safety
 `flow` must come from this library and not be used afterwards.
 */
void rh_flow_free(struct RhFlow *flow);

/*
 Advance to `t_end` on the sample grid. `singular` is set when the run stopped early.

 # Safety
 `flow` must be a live handle; `singular` writable.
 */
enum RhStatus rh_flow_advance(struct RhFlow *flow, double t_end, bool *singular);

/*
 # Safety
 `flow` must be a live handle; `t` writable.
 */
enum RhStatus rh_flow_time(const struct RhFlow *flow, double *t);

/*
 # Safety
 `flow` must be a live handle; `out` writable.
 */
enum RhStatus rh_flow_diagnostics(const struct RhFlow *flow, struct RhDiagnostics *out);

/*
 Write the current state as a checkpoint.

 # Safety
 `flow` must be a live handle; `path` NUL-terminated.
 */
enum RhStatus rh_flow_save(const struct RhFlow *flow, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RHFLOW_H */
