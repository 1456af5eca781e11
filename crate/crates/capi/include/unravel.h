#ifndef UNRAVEL_H
#define UNRAVEL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define UNRAVEL_OK 0

/**
 * Null pointer or malformed UTF-8 argument.
 */
#define UNRAVEL_ERR_INVALID_ARGUMENT 1

/**
 * Configuration text failed to parse.
 */
#define UNRAVEL_ERR_PARSE 2

/**
 * Configuration parsed but failed validation.
 */
#define UNRAVEL_ERR_VALIDATION 3

/**
 * Numerical failure while running (non-finite state, step size, ...).
 */
#define UNRAVEL_ERR_NUMERIC 4

/**
 * Filesystem failure while writing outputs.
 */
#define UNRAVEL_ERR_IO 5

/**
 * Opaque experiment-configuration handle.
 */
typedef struct UnravelConfig UnravelConfig;

/**
 * Library version as a static NUL-terminated string.
 */
const char *unravel_version(void);

/**
 * Message for the most recent error on this thread (valid until the next
 * failing call on the same thread).
 */
const char *unravel_last_error_message(void);

/**
 * Parse configuration text into a handle. On success writes the new handle
 * through `out` and returns UNRAVEL_OK; the handle must be released with
 * unravel_config_free.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string and `out` a valid pointer.
 */
int32_t unravel_config_parse(const char *text, struct UnravelConfig **out);

/**
 * Release a configuration handle. A null handle is a no-op.
 *
 * # Safety
 * `cfg` must be a handle returned by unravel_config_parse, freed only once.
 */
void unravel_config_free(struct UnravelConfig *cfg);

/**
 * Override the RNG master seed.
 *
 * # Safety
 * `cfg` must be a live handle from unravel_config_parse.
 */
int32_t unravel_config_set_seed(struct UnravelConfig *cfg, uint64_t seed);

/**
 * Override the output directory.
 *
 * # Safety
 * `cfg` must be a live handle and `dir` a valid NUL-terminated string.
 */
int32_t unravel_config_set_output_dir(struct UnravelConfig *cfg, const char *dir);

/**
 * Dry-run validation of a parsed configuration.
 *
 * # Safety
 * `cfg` must be a live handle from unravel_config_parse.
 */
int32_t unravel_validate(const struct UnravelConfig *cfg);

/**
 * Execute the configured experiment, writing CSV files to the configured
 * output directory.
 *
 * # Safety
 * `cfg` must be a live handle from unravel_config_parse.
 */
int32_t unravel_run(const struct UnravelConfig *cfg);

#endif  /* UNRAVEL_H */
