/* C ABI for the etsmc simulation and verification engine.
 *
 * Conventions:
 *   - fallible calls return etsmc_status; out-pointers are written only on
 *     ETSMC_OK
 *   - handles are opaque; free them with the matching *_free function
 *   - strings returned by the library are NUL-terminated UTF-8 and must be
 *     released with etsmc_string_free
 *   - etsmc_last_error_message() describes the most recent failure on the
 *     calling thread; the pointer is valid until the next failing call
 */

#ifndef ETSMC_H
#define ETSMC_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum etsmc_status {
  ETSMC_OK = 0,
  ETSMC_NULL_ARGUMENT = 1,
  ETSMC_INVALID_UTF8 = 2,
  ETSMC_CONFIG_ERROR = 3,
  ETSMC_RUNTIME_DIVERGENCE = 4,
  ETSMC_IO_ERROR = 5,
} etsmc_status;

/* Opaque resolved scenario (plant, topologies, gains, trigger, switching). */
typedef struct EtsmcScenario EtsmcScenario;

/* Opaque finished run: trace, metrics and config echo. */
typedef struct EtsmcTrace EtsmcTrace;

/* Build a scenario from a built-in preset name ("paper-sec4", "no-fault",
 * "continuous-smc"). */
etsmc_status etsmc_scenario_from_preset(const char *name, EtsmcScenario **out);

/* Build a scenario from TOML text (same schema as the CLI config files). */
etsmc_status etsmc_scenario_from_toml(const char *text, EtsmcScenario **out);

void etsmc_scenario_free(EtsmcScenario *scenario);

/* Run one seed; on ETSMC_OK the caller owns the trace handle. */
etsmc_status etsmc_run(const EtsmcScenario *scenario, uint64_t seed,
                       EtsmcTrace **out);

/* Metrics of a finished run as pretty-printed JSON. */
etsmc_status etsmc_trace_metrics_json(const EtsmcTrace *trace,
                                      char **out_json);

/* Number of released trigger events in the run (0 for a null handle). */
uint64_t etsmc_trace_release_count(const EtsmcTrace *trace);

/* Write trace.csv, events.csv, modes.csv, metrics.json and config.toml
 * into the given directory (created if missing). */
etsmc_status etsmc_trace_write_outputs(const EtsmcTrace *trace,
                                       const char *dir);

void etsmc_trace_free(EtsmcTrace *trace);

/* Check a certificate (TOML text) against the scenario's plant, topologies
 * and switching process; the feasibility report comes back as JSON. */
etsmc_status etsmc_verify_certificate(const EtsmcScenario *scenario,
                                      const char *certificate_toml,
                                      char **out_json);

/* Release a string returned by this library. */
void etsmc_string_free(char *s);

/* Most recent failure on this thread, or NULL. */
const char *etsmc_last_error_message(void);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* ETSMC_H */
