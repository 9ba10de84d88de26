/* C ABI for the saceo training engine. */

#ifndef SACEO_H
#define SACEO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every FFI entry point.
 */
typedef enum SaceoStatus {
  SACEO_STATUS_OK = 0,
  /**
   * Invalid configuration or contradictory settings.
   */
  SACEO_STATUS_CONFIG_ERROR = 1,
  /**
   * API misuse (bad handle state, empty dataset, horizon overrun).
   */
  SACEO_STATUS_USAGE_ERROR = 2,
  /**
   * A NaN or infinity surfaced during training.
   */
  SACEO_STATUS_NUMERICAL_ERROR = 3,
  /**
   * A data file failed to parse.
   */
  SACEO_STATUS_PARSE_ERROR = 4,
  /**
   * Filesystem failure.
   */
  SACEO_STATUS_IO_ERROR = 5,
  /**
   * Null pointer or malformed UTF-8 argument.
   */
  SACEO_STATUS_INVALID_ARGUMENT = 6,
  /**
   * Internal panic; the message carries what is known.
   */
  SACEO_STATUS_PANIC = 7,
} SaceoStatus;

/**
 * Opaque run configuration handle.
 */
typedef struct SaceoConfig SaceoConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *saceo_last_error_message(void);

/**
 * Creates a configuration with built-in defaults. Free with
 * `saceo_config_free`.
 */
struct SaceoConfig *saceo_config_new(void);

/**
 * Releases a configuration handle. A null handle is a no-op.
 *
 * # Safety
 * `cfg` must be null or a pointer returned by `saceo_config_new` that has
 * not been freed yet.
 */
void saceo_config_free(struct SaceoConfig *cfg);

/**
 * Applies one `key = value` assignment, exactly like a config-file line.
 *
 * # Safety
 * `cfg` must be a live handle; `key` and `value` must be NUL-terminated.
 */
enum SaceoStatus saceo_config_set(struct SaceoConfig *cfg, const char *key, const char *value);

/**
 * Loads a flat `key = value` config file over the current values.
 *
 * # Safety
 * `cfg` must be a live handle; `path` must be NUL-terminated.
 */
enum SaceoStatus saceo_config_load_file(struct SaceoConfig *cfg, const char *path);

/**
 * Validates the configuration without running anything.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum SaceoStatus saceo_config_validate(struct SaceoConfig *cfg);

/**
 * Runs the configured training job; outputs land in the configured (or
 * derived) run directory.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum SaceoStatus saceo_run(struct SaceoConfig *cfg);

/**
 * Trains the expert agent. When `mean_return_out` is non-null it receives
 * the evaluated mean return of the trained expert.
 *
 * # Safety
 * `cfg` must be a live handle; `mean_return_out` must be null or writable.
 */
enum SaceoStatus saceo_train_expert(struct SaceoConfig *cfg, double *mean_return_out);

/**
 * Rolls out a checkpoint deterministically and writes the expert file.
 * `max_states = 0` means no cap.
 *
 * # Safety
 * String arguments must be NUL-terminated.
 */
enum SaceoStatus saceo_record_expert(const char *checkpoint,
                                     const char *env,
                                     uintptr_t horizon,
                                     uintptr_t trajectories,
                                     uintptr_t max_states,
                                     const char *out_path,
                                     uint64_t seed);

/**
 * Aggregates finished run directories against an expert record, writing
 * `report.txt`, `curves.csv`, and `learning_curves.svg` into `out_dir`.
 *
 * # Safety
 * `run_dirs` must point to `n_runs` valid NUL-terminated strings;
 * `thresholds` must point to `n_thresholds` doubles; other strings must be
 * NUL-terminated.
 */
enum SaceoStatus saceo_compare(const char *const *run_dirs,
                               uintptr_t n_runs,
                               const char *expert_record,
                               const char *out_dir,
                               const double *thresholds,
                               uintptr_t n_thresholds);

/**
 * Evaluates a checkpointed policy: `episodes` deterministic rollouts on a
 * fresh environment, writing the mean and standard deviation of returns.
 *
 * # Safety
 * String arguments must be NUL-terminated; out pointers null or writable.
 */
enum SaceoStatus saceo_evaluate_checkpoint(const char *checkpoint,
                                           const char *env,
                                           uintptr_t horizon,
                                           uintptr_t episodes,
                                           uint64_t seed,
                                           double *mean_out,
                                           double *std_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SACEO_H */
