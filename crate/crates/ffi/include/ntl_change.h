#ifndef NTL_CHANGE_H
#define NTL_CHANGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes. Values 2–13 mirror the library's error kinds and the CLI exit codes.
typedef enum NtlStatus {
  NTL_STATUS_OK = 0,
  NTL_STATUS_DOMAIN = 2,
  NTL_STATUS_INPUT = 3,
  NTL_STATUS_PARSE = 4,
  NTL_STATUS_VALIDATION = 5,
  NTL_STATUS_SHAPE = 6,
  NTL_STATUS_STATE = 7,
  NTL_STATUS_CONFIG = 8,
  NTL_STATUS_INSUFFICIENT_DATA = 9,
  NTL_STATUS_ALIGNMENT = 10,
  NTL_STATUS_CHECKPOINT = 11,
  NTL_STATUS_IO = 12,
  NTL_STATUS_JSON = 13,
  NTL_STATUS_NULL_POINTER = 20,
  NTL_STATUS_INVALID_UTF8 = 21,
  NTL_STATUS_OUT_OF_RANGE = 22,
  NTL_STATUS_PANIC = 23,
} NtlStatus;

typedef enum NtlArchitecture {
  NTL_ARCHITECTURE_FCNN = 0,
  NTL_ARCHITECTURE_CNN = 1,
  NTL_ARCHITECTURE_LSTM = 2,
} NtlArchitecture;

// Trained forecasters, at most one per architecture.
typedef struct NtlModelSet NtlModelSet;

// A change report.
typedef struct NtlReport NtlReport;

// A daily zone series.
typedef struct NtlSeries NtlSeries;

// One persistent change segment; days are counted from the first monitored day.
typedef struct NtlSegment {
  int64_t start;
  int64_t inflection;
  int64_t end;
  bool open;
  double lambda_s;
  double lambda_e;
  double mean_severity;
  int8_t direction;
} NtlSegment;

// Evaluation result. Undefined metrics are NaN; `has_delay` guards `delay`.
typedef struct NtlEval {
  double recall;
  double precision;
  double f_beta;
  bool has_delay;
  int64_t delay;
  size_t tp;
  size_t fp;
  size_t fn_;
} NtlEval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message on this thread, or null. Valid until the next failing call.
const char *ntl_last_error(void);

// Library version, statically allocated.
const char *ntl_version(void);

// Frees a string returned by this library.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void ntl_string_free(char *s);

// Builds a series from `len` values; `gap_mask` may be null (nothing masked).
//
// # Safety
// Strings are NUL-terminated; `values` (and `gap_mask` if non-null) hold `len` elements.
enum NtlStatus ntl_series_from_values(const char *zone_id,
                                      const char *start_date,
                                      const double *values,
                                      const uint8_t *gap_mask,
                                      size_t len,
                                      struct NtlSeries **out);

// Reads a pixel or zone CSV and smooths it over `smoothing_window` days.
//
// # Safety
// Strings are NUL-terminated; `out` is writable.
enum NtlStatus ntl_series_load(const char *path,
                               const char *zone_id,
                               size_t smoothing_window,
                               struct NtlSeries **out);

// Generates a preset scenario (`disaster`, `conflict`, `urbanization`, `none`).
//
// # Safety
// `preset` is NUL-terminated; `out` is writable.
enum NtlStatus ntl_series_simulate(const char *preset, uint64_t seed, struct NtlSeries **out);

// Number of days in the series (0 for null).
//
// # Safety
// `series` is null or a live handle.
size_t ntl_series_len(const struct NtlSeries *series);

// Copies up to `len` values into `out`; masked days are NaN.
//
// # Safety
// `series` is a live handle; `out` holds `len` writable doubles.
enum NtlStatus ntl_series_values(const struct NtlSeries *series, double *out, size_t len);

// # Safety
// `series` is null or a live handle, not used afterwards.
void ntl_series_free(struct NtlSeries *series);

// Trains FCNN, CNN and LSTM on the series up to `training_end`.
// `train_config_json` may be null for defaults.
//
// # Safety
// Handles are live; strings are NUL-terminated; `out` is writable.
enum NtlStatus ntl_models_train(const struct NtlSeries *series,
                                const char *training_end,
                                const char *train_config_json,
                                struct NtlModelSet **out);

// Loads `fcnn.json`, `cnn.json` and `lstm.json` from `dir`, skipping absent files.
//
// # Safety
// `dir` is NUL-terminated; `out` is writable.
enum NtlStatus ntl_models_load(const char *dir, struct NtlModelSet **out);

// Writes one checkpoint per model into the existing directory `dir`.
//
// # Safety
// `models` is live; `dir` is NUL-terminated.
enum NtlStatus ntl_models_save(const struct NtlModelSet *models, const char *dir);

// Number of models in the set (0 for null).
//
// # Safety
// `models` is null or a live handle.
size_t ntl_models_count(const struct NtlModelSet *models);

// One forecast of `output_len` (= w_o) values from `input_len` (= w_i) inputs.
//
// # Safety
// `models` is live; `input` and `output` hold the stated number of elements.
enum NtlStatus ntl_models_predict(const struct NtlModelSet *models,
                                  enum NtlArchitecture architecture,
                                  const double *input,
                                  size_t input_len,
                                  double *output,
                                  size_t output_len);

// # Safety
// `models` is null or a live handle, not used afterwards.
void ntl_models_free(struct NtlModelSet *models);

// Forecasts and detects. `options_json` may be null, or `{"weights": {...}, "detect": {...}}`.
//
// # Safety
// Handles are live; strings are NUL-terminated; `out` is writable.
enum NtlStatus ntl_detect(const struct NtlModelSet *models,
                          const struct NtlSeries *series,
                          const char *training_end,
                          const char *options_json,
                          struct NtlReport **out);

// The report as JSON; free with [`ntl_string_free`].
//
// # Safety
// `report` is live; `out` is writable.
enum NtlStatus ntl_report_json(const struct NtlReport *report, char **out);

// Number of monitored steps in the report (0 for null).
//
// # Safety
// `report` is null or a live handle.
size_t ntl_report_step_count(const struct NtlReport *report);

// Writes 1 for each persistent flagged step, else 0, for the first `len` monitored steps.
//
// # Safety
// `report` is live; `out` holds `len` writable bytes.
enum NtlStatus ntl_report_persistent_flags(const struct NtlReport *report,
                                           uint8_t *out,
                                           size_t len);

// Number of persistent segments (0 for null).
//
// # Safety
// `report` is null or a live handle.
size_t ntl_report_segment_count(const struct NtlReport *report);

// Segment `index`, with days counted from the first monitored step.
//
// # Safety
// `report` is live; `out` is writable.
enum NtlStatus ntl_report_segment(const struct NtlReport *report,
                                  size_t index,
                                  struct NtlSegment *out);

// Scores the report against ground-truth CSV text (`zone_id,start,end,change_type,unit`).
//
// # Safety
// `report` is live; `truth_csv` is NUL-terminated; `out` is writable.
enum NtlStatus ntl_report_evaluate(const struct NtlReport *report,
                                   const char *truth_csv,
                                   double beta,
                                   struct NtlEval *out);

// # Safety
// `report` is null or a live handle, not used afterwards.
void ntl_report_free(struct NtlReport *report);

// F-β of precision `p` and recall `r`, both in [0, 1].
//
// # Safety
// `out` is writable.
enum NtlStatus ntl_f_beta(double p, double r, double beta, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NTL_CHANGE_H */
