/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface to the pixel-antenna simulation core. All entry points are
 * thread-safe as long as each pfas_config and pfas_result object is used by
 * one thread at a time. Functions returning int use the pfas_status codes;
 * on any failure pfas_last_error() carries a message for the calling thread
 * until the next call.
 */

#ifndef PFAS_H
#define PFAS_H

#ifdef __cplusplus
extern "C" {
#endif

#define PFAS_VERSION_MAJOR 1
#define PFAS_VERSION_MINOR 0
#define PFAS_VERSION_PATCH 0

typedef enum pfas_status {
    PFAS_OK = 0,
    PFAS_ARGUMENT = 1,  /* null handle, bad index, invalid call */
    PFAS_CONFIG = 2,    /* unusable scenario: bad key, value, or combination */
    PFAS_NUMERICAL = 3, /* computation failed: singular or ill-conditioned system */
    PFAS_IO = 4,        /* file could not be read or written */
    PFAS_INTERNAL = 5   /* unexpected failure; last_error has details */
} pfas_status;

/* "major.minor.patch" of the library actually loaded. */
const char* pfas_version_string(void);

/* Message for the most recent failure on this thread; empty after success. */
const char* pfas_last_error(void);

/*
 * Scenario handle. Created with library defaults; mutated by profile, file,
 * and key assignments in whatever order the caller wants (later writes win).
 */
typedef struct pfas_config pfas_config;

pfas_config* pfas_config_create(void);
void pfas_config_destroy(pfas_config* config);

/* Named preset: "desk" or "paper". */
int pfas_config_apply_profile(pfas_config* config, const char* name);

/* Apply a key = value scenario file on top of the current state. */
int pfas_config_load_file(pfas_config* config, const char* path);

/*
 * Assign one scenario key; keys and value syntax match the file format
 * (for example "n_subc", "estimator", "seed"). Additionally accepts
 * "trace_prefix", the output stem for per-trial estimator traces, which has
 * no file-format equivalent.
 */
int pfas_config_set(pfas_config* config, const char* key, const char* value);

/*
 * Result handle: per-trial metric rows plus per-metric summaries, owned by
 * the caller and released with pfas_result_destroy. String pointers
 * returned by the accessors stay valid for the lifetime of the result.
 */
typedef struct pfas_result pfas_result;

/* Channel estimation experiment (metrics nmse_train_db, nmse_test_db,
 * nmse_coeff_db). On success *out owns the result. */
int pfas_run_nmse(const pfas_config* config, pfas_result** out);

/* Downlink rate experiment (metrics rate_bits, pilot_symbols). */
int pfas_run_rate(const pfas_config* config, pfas_result** out);

void pfas_result_destroy(pfas_result* result);

long pfas_result_row_count(const pfas_result* result);
int pfas_result_row(const pfas_result* result, long index, int* trial, const char** metric,
                    double* value);

long pfas_result_summary_count(const pfas_result* result);
int pfas_result_summary(const pfas_result* result, long index, const char** metric,
                        double* mean, double* stddev, int* count);

/* Write the result as CSV; path NULL or "-" streams to stdout. */
int pfas_result_write_csv(const pfas_result* result, const char* path);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* PFAS_H */
