#ifndef ENSEMBLE_VAR_H
#define ENSEMBLE_VAR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  EV_STATUS_OK = 0,
  EV_STATUS_NULL_POINTER = 1,
  EV_STATUS_INVALID_ARGUMENT = 2,
  EV_STATUS_NUMERICAL = 3,
  EV_STATUS_IO = 4,
  EV_STATUS_PANIC = 5,
} EvStatus;

typedef enum {
  EV_CRITERION_ENSEMBLE_BIC = 0,
  EV_CRITERION_ENSEMBLE_BIC_FULL = 1,
  EV_CRITERION_ENSEMBLE_AIC = 2,
  EV_CRITERION_CLASSICAL_BIC_T1 = 3,
} EvCriterion;

typedef struct EvCurve EvCurve;

typedef struct EvPanel EvPanel;

typedef struct EvRefs EvRefs;

typedef struct EvSeries EvSeries;

/**
 * One row of a BIC curve. Scores are negated log-evidences (smaller is better).
 */
typedef struct {
  size_t p;
  double log_likelihood;
  double penalty_approx;
  double score_approx;
  double score_full;
  double score_aic;
} EvOrderScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next call.
 */
const char *ev_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ev_version(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ev_string_free(char *s);

/**
 * Copies `len × channels` row-major samples into a new series.
 *
 * # Safety
 * `data` must point to `len * channels` doubles; `out` must be writable.
 */
EvStatus ev_series_new(const double *data,
                       size_t len,
                       size_t channels,
                       double sample_rate,
                       EvSeries **out);

/**
 * # Safety
 * `series` must be null or a live handle.
 */
void ev_series_free(EvSeries *series);

/**
 * # Safety
 * `series` must be a live handle.
 */
EvStatus ev_series_shape(const EvSeries *series, size_t *len, size_t *channels);

/**
 * Copies the samples into `buf` (`capacity` doubles, row-major).
 *
 * # Safety
 * `buf` must hold `capacity` doubles.
 */
EvStatus ev_series_copy(const EvSeries *series, double *buf, size_t capacity);

/**
 * Simulates a scenario. `scenario_json` may be null for the default bivariate VAR(4).
 *
 * # Safety
 * Pointers must be valid; both outputs receive new handles.
 */
EvStatus ev_simulate(const char *scenario_json, EvSeries **out_series, EvRefs **out_refs);

/**
 * # Safety
 * `points` must hold `len` strictly increasing indices.
 */
EvStatus ev_refs_new(const size_t *points, size_t len, EvRefs **out);

/**
 * # Safety
 * `refs` must be null or a live handle.
 */
void ev_refs_free(EvRefs *refs);

/**
 * # Safety
 * `refs` must be a live handle.
 */
size_t ev_refs_len(const EvRefs *refs);

/**
 * # Safety
 * `buf` must hold `capacity` entries.
 */
EvStatus ev_refs_copy(const EvRefs *refs, size_t *buf, size_t capacity);

/**
 * Filters and thresholds one channel. `config_json` may be null for defaults.
 *
 * # Safety
 * Pointers must be valid.
 */
EvStatus ev_detect(const EvSeries *series, const char *config_json, EvRefs **out);

/**
 * Window is `[start_offset, end_offset)` samples around each reference.
 *
 * # Safety
 * Pointers must be valid.
 */
EvStatus ev_panel_extract(const EvSeries *series,
                          const EvRefs *refs,
                          int64_t start_offset,
                          int64_t end_offset,
                          EvPanel **out);

/**
 * Copies an `n_trials × n_times × channels` array (trial-major) into a panel.
 *
 * # Safety
 * `data` must hold `n_trials * n_times * channels` doubles.
 */
EvStatus ev_panel_new(const double *data,
                      size_t n_trials,
                      size_t n_times,
                      size_t channels,
                      double sample_rate,
                      EvPanel **out);

/**
 * # Safety
 * `panel` must be null or a live handle.
 */
void ev_panel_free(EvPanel *panel);

/**
 * # Safety
 * `panel` must be a live handle; null outputs are skipped.
 */
EvStatus ev_panel_shape(const EvPanel *panel, size_t *n_trials, size_t *n_times, size_t *channels);

/**
 * Reads a panel from its JSON sidecar path.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
EvStatus ev_panel_read(const char *path, EvPanel **out);

/**
 * Writes the JSON sidecar at `path` and the `.bin` blob next to it.
 *
 * # Safety
 * Pointers must be valid.
 */
EvStatus ev_panel_write(const EvPanel *panel, const char *path);

/**
 * Scans orders `p_min..=p_max` on the panel.
 *
 * # Safety
 * Pointers must be valid.
 */
EvStatus ev_select_order(const EvPanel *panel,
                         EvCriterion criterion,
                         size_t p_min,
                         size_t p_max,
                         double ridge,
                         EvCurve **out);

/**
 * # Safety
 * `curve` must be null or a live handle.
 */
void ev_curve_free(EvCurve *curve);

/**
 * Number of orders scored.
 *
 * # Safety
 * `curve` must be a live handle.
 */
size_t ev_curve_len(const EvCurve *curve);

/**
 * Selected orders for the configured criterion and both BIC forms.
 *
 * # Safety
 * `curve` must be a live handle; null outputs are skipped.
 */
EvStatus ev_curve_selected(const EvCurve *curve,
                           size_t *selected,
                           size_t *selected_approx,
                           size_t *selected_full);

/**
 * # Safety
 * `curve` must be a live handle and `out` writable.
 */
EvStatus ev_curve_score(const EvCurve *curve, size_t index, EvOrderScore *out);

/**
 * The whole curve as JSON; free with [`ev_string_free`].
 *
 * # Safety
 * `curve` must be a live handle.
 */
EvStatus ev_curve_to_json(const EvCurve *curve, char **out);

/**
 * Runs the three-alignment experiment and returns the report as JSON.
 * `config_json` may be null for the default configuration.
 *
 * # Safety
 * Pointers must be valid; free the report with [`ev_string_free`].
 */
EvStatus ev_run_experiment(const char *config_json, char **out_report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENSEMBLE_VAR_H */
