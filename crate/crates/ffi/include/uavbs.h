#ifndef UAVBS_H
#define UAVBS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UavbsLoad {
  UAVBS_LOAD_LIGHT = 0,
  UAVBS_LOAD_HEAVY = 1,
} UavbsLoad;

typedef enum UavbsProfile {
  UAVBS_PROFILE_FULL = 0,
  UAVBS_PROFILE_FAST = 1,
} UavbsProfile;

typedef enum UavbsStatus {
  UAVBS_STATUS_OK = 0,
  UAVBS_STATUS_NULL_POINTER = 1,
  UAVBS_STATUS_INVALID_UTF8 = 2,
  UAVBS_STATUS_INVALID_CONFIG = 3,
  UAVBS_STATUS_INVALID_ARGUMENT = 4,
  UAVBS_STATUS_SIMULATION = 5,
  UAVBS_STATUS_IO = 6,
  UAVBS_STATUS_PANIC = 7,
} UavbsStatus;

typedef enum UavbsVariant {
  UAVBS_VARIANT_AE_VAS = 0,
  UAVBS_VARIANT_VAS_RETRAINED = 1,
  UAVBS_VARIANT_BASELINE = 2,
} UavbsVariant;

/**
 * Opaque run configuration.
 */
typedef struct UavbsConfig UavbsConfig;

/**
 * Opaque simulator: a validated configuration, its evaluation cache and
 * the normalization bounds in effect.
 */
typedef struct UavbsSimulator UavbsSimulator;

/**
 * Six-feature KPI vector; throughputs in bit/s, drop ratios in [0, 1].
 */
typedef struct UavbsKpi {
  double dl_tp_50;
  double dl_tp_5;
  double ul_tp_50;
  double ul_tp_5;
  double dl_drop;
  double ul_drop;
} UavbsKpi;

/**
 * One scored UAV state. Pose values are in degrees and metres.
 */
typedef struct UavbsEvaluation {
  size_t state_index;
  double tilt_deg;
  double x_m;
  double y_m;
  double z_m;
  struct UavbsKpi kpi;
  struct UavbsKpi normalized;
  double reward;
  bool kpi_valid;
  size_t uav_users;
  uint64_t relay_violations;
} UavbsEvaluation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *uavbs_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *uavbs_last_error(void);

/**
 * Default configuration for a profile.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum UavbsStatus uavbs_config_new(enum UavbsProfile profile, struct UavbsConfig **out);

/**
 * Parses and validates a JSON configuration. Missing keys take defaults.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum UavbsStatus uavbs_config_from_json(const char *json, struct UavbsConfig **out);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum UavbsStatus uavbs_config_set_seed(struct UavbsConfig *cfg, uint64_t seed);

/**
 * Serializes the configuration as pretty JSON. Release the string with
 * [`uavbs_string_free`].
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum UavbsStatus uavbs_config_to_json(const struct UavbsConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must be NULL or a handle not yet freed.
 */
void uavbs_config_free(struct UavbsConfig *cfg);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void uavbs_string_free(char *s);

/**
 * Builds a simulator from a configuration. The configuration is copied, so
 * `cfg` may be freed afterwards. Normalization bounds are derived here when
 * the configuration does not fix them, which sweeps phase 0 for both loads.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum UavbsStatus uavbs_simulator_new(const struct UavbsConfig *cfg, struct UavbsSimulator **out);

/**
 * # Safety
 * `sim` must be NULL or a handle not yet freed.
 */
void uavbs_simulator_free(struct UavbsSimulator *sim);

/**
 * Number of candidate states; 0 for a NULL handle.
 *
 * # Safety
 * `sim` must be NULL or a live handle.
 */
size_t uavbs_simulator_n_states(const struct UavbsSimulator *sim);

/**
 * Number of mobility phases in the schedule; 0 for a NULL handle.
 *
 * # Safety
 * `sim` must be NULL or a live handle.
 */
size_t uavbs_simulator_n_phases(const struct UavbsSimulator *sim);

/**
 * Index of the grid state with exactly these values.
 *
 * # Safety
 * `sim` must be a live handle; `out_index` must be writable.
 */
enum UavbsStatus uavbs_simulator_locate(const struct UavbsSimulator *sim,
                                        double tilt_deg,
                                        double x_m,
                                        double y_m,
                                        double z_m,
                                        size_t *out_index);

/**
 * Simulates and scores one grid state.
 *
 * # Safety
 * `sim` must be a live handle; `out` must be writable.
 */
enum UavbsStatus uavbs_simulator_evaluate(const struct UavbsSimulator *sim,
                                          size_t phase,
                                          enum UavbsLoad load,
                                          size_t state_index,
                                          struct UavbsEvaluation *out);

/**
 * Exhaustive sweep of one phase; writes the best-scoring state.
 *
 * # Safety
 * `sim` must be a live handle; `out` must be writable.
 */
enum UavbsStatus uavbs_simulator_oracle(const struct UavbsSimulator *sim,
                                        size_t phase,
                                        enum UavbsLoad load,
                                        struct UavbsEvaluation *out);

/**
 * Trains and validates one agent variant over the whole schedule and writes
 * its mean validation reward.
 *
 * # Safety
 * `sim` must be a live handle; `out_reward` must be writable.
 */
enum UavbsStatus uavbs_simulator_train(const struct UavbsSimulator *sim,
                                       enum UavbsVariant variant,
                                       enum UavbsLoad load,
                                       double *out_reward);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UAVBS_H */
