/*
 * dgpic — multi-domain multi-task point-cloud learning with test-time
 * prototype-based feature shifting.
 *
 * C API over the shared library. All functions return dgpic_status; on any
 * non-zero status dgpic_last_error() carries a thread-local message. Handles
 * are opaque and must be released with their matching close function.
 */
#ifndef DGPIC_H
#define DGPIC_H

#include <stddef.h>

#if defined(_WIN32)
#define DGPIC_API __declspec(dllexport)
#else
#define DGPIC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dgpic_status {
  DGPIC_OK = 0,
  DGPIC_USAGE_ERROR = 2,   /* bad arguments, invalid inputs, bad config */
  DGPIC_DATA_ERROR = 3,    /* missing/corrupt artifacts, staleness */
  DGPIC_NUMERIC_ERROR = 4, /* non-finite values or numeric failures */
} dgpic_status;

typedef struct dgpic_config dgpic_config;

DGPIC_API const char* dgpic_version(void);

/* Message for the most recent failure on this thread; never NULL. */
DGPIC_API const char* dgpic_last_error(void);

/* Loads an experiment config file (line-oriented `key = value` sections). */
DGPIC_API dgpic_status dgpic_config_open(const char* path, dgpic_config** out);

/* Overrides a single key, e.g. ("output.dir", "/tmp/run") or
 * ("eval.seeds", "1, 2"). Section-qualified key names. */
DGPIC_API dgpic_status dgpic_config_set(dgpic_config* config, const char* key,
                                        const char* value);

/* Canonical text form of the config; returns the number of bytes that the
 * full text requires (excluding the terminator). buf may be NULL to query. */
DGPIC_API dgpic_status dgpic_config_format(const dgpic_config* config, char* buf,
                                           size_t buflen, size_t* needed);

DGPIC_API void dgpic_config_close(dgpic_config* config);

/* Pipeline commands. seed < 0 runs every seed listed in the config. */
DGPIC_API dgpic_status dgpic_gen_data(const dgpic_config* config, int force);
DGPIC_API dgpic_status dgpic_train(const dgpic_config* config, long long seed);
DGPIC_API dgpic_status dgpic_estimate_prototypes(const dgpic_config* config,
                                                 long long seed);

/* modes_csv: comma-separated shift-mode names, or NULL for the config list. */
DGPIC_API dgpic_status dgpic_eval(const dgpic_config* config, const char* modes_csv,
                                  long long seed, int self_check);
DGPIC_API dgpic_status dgpic_ablate(const dgpic_config* config, long long seed);

/* Chamfer distance between two packed xyz arrays (x0 y0 z0 x1 y1 z1 ...). */
DGPIC_API dgpic_status dgpic_chamfer(const double* a, size_t n_a, const double* b,
                                     size_t n_b, double* out);

#ifdef __cplusplus
}
#endif

#endif /* DGPIC_H */
