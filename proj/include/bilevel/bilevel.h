/* Bilevel-optimization toolkit: C API.
 *
 * Momentum-based solvers for two-level problems whose lower level is
 * nonconvex but gradient-dominated, with clipped spectral hyper-gradient
 * estimation, problem generators, verification suites and rate fitting.
 *
 * All functions return BLO_OK (0) on success; on failure they return a
 * nonzero status and blo_last_error() carries a thread-local message.
 * Strings returned through char** are heap-allocated; release them with
 * blo_string_free().
 */
#ifndef BILEVEL_BILEVEL_H
#define BILEVEL_BILEVEL_H

#include <stdint.h>

#if defined(_WIN32)
#define BLO_API __declspec(dllexport)
#else
#define BLO_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef int32_t blo_status;

enum {
  BLO_OK = 0,
  BLO_ERR_INVALID_ARGUMENT = 1, /* bad pointer, dimension or value */
  BLO_ERR_CONFIG = 2,           /* malformed or inconsistent configuration */
  BLO_ERR_IO = 3,               /* filesystem failure */
  BLO_ERR_NUMERIC = 4,          /* non-finite iterate or numeric breakdown */
  BLO_ERR_UNAVAILABLE = 5,      /* reference oracle or data out of reach */
  BLO_ERR_INTERNAL = 6
};

BLO_API const char* blo_version(void);
BLO_API const char* blo_last_error(void);
BLO_API void blo_string_free(char* s);

/* ------------------------------------------------------------------------
 * Problem instances (opaque handles).
 * family: "plgame" | "sensing" | "quad"; params_json uses the same keys as
 * the run-config "problem" object, e.g.
 *   {"d":50,"l":48,"n":2500,"mu":1.0,"lg":4.0,"seed":7}
 * ---------------------------------------------------------------------- */

typedef struct blo_instance blo_instance;

BLO_API blo_status blo_instance_generate(const char* family,
                                         const char* params_json,
                                         blo_instance** out);
BLO_API blo_status blo_instance_load(const char* path, blo_instance** out);
BLO_API blo_status blo_instance_save(const blo_instance* inst, const char* path);
BLO_API blo_status blo_instance_summary(const blo_instance* inst, char** out_json);
BLO_API blo_status blo_instance_dims(const blo_instance* inst, int64_t* d,
                                     int64_t* p);
BLO_API void blo_instance_free(blo_instance* inst);

/* ------------------------------------------------------------------------
 * Runs. config_json is the documented run-config schema. The trace (CSV plus
 * JSON header sidecar) is written under the configured output directory; the
 * returned summary names the files and the final metrics. On
 * BLO_ERR_NUMERIC a partial trace is still written and the summary (when
 * requested) records the failing iteration.
 * ---------------------------------------------------------------------- */

BLO_API blo_status blo_run(const char* config_json, char** out_summary_json);

/* Property suites: "spectral", "derivatives", "hypergrad", "lemma3",
 * "lyapunov", "bounds". The report lists each property with its measured
 * value and tolerance. */
BLO_API blo_status blo_verify(const char* suite, uint64_t seed,
                              char** out_report_json);

/* Multi-seed solver comparison (compare-config schema). */
BLO_API blo_status blo_compare(const char* config_json, char** out_summary_json);

/* Log-log slope of the running mean of a trace column over [t_lo, t_hi]. */
BLO_API blo_status blo_fit_rate(const char* trace_csv_path, const char* metric,
                                int64_t t_lo, int64_t t_hi, double* out_slope,
                                double* out_r2);

#ifdef __cplusplus
}
#endif

#endif /* BILEVEL_BILEVEL_H */
