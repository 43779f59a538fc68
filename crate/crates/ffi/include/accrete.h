#ifndef ACCRETE_H
#define ACCRETE_H

/* Generated by cbindgen from src/lib.rs; regenerate with `cbindgen --config cbindgen.toml --output include/accrete.h`. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define ACCRETE_OK 0

#define ACCRETE_NULL_POINTER 1

#define ACCRETE_INVALID_ARGUMENT 2

#define ACCRETE_CONFIG_ERROR 3

#define ACCRETE_NUMERICAL_ERROR 4

#define ACCRETE_IO_ERROR 5

#define ACCRETE_BUFFER_TOO_SMALL 6

#define ACCRETE_PANIC 7

// Run configuration.
typedef struct AccreteConfig AccreteConfig;

// Outcome of a full run with artifacts on disk.
typedef struct AccreteRun AccreteRun;

// In-memory coupled solution.
typedef struct AccreteSolution AccreteSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *accrete_version(void);

// Copies the calling thread's last error message into `buf`. Returns the
// size needed including the NUL, or 0 when there is no error recorded.
// Truncates to `len - 1` bytes when `buf` is too small.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t accrete_last_error_message(char *buf, size_t len);

// Default configuration.
//
// # Safety
// `out` must be valid for writes.
int32_t accrete_config_default(struct AccreteConfig **out);

// Configuration parsed from TOML text; omitted keys take their defaults.
//
// # Safety
// `text` must be a NUL-terminated string, `out` valid for writes.
int32_t accrete_config_from_toml(const char *text, struct AccreteConfig **out);

// Configuration read from a TOML file.
//
// # Safety
// `path` must be a NUL-terminated string, `out` valid for writes.
int32_t accrete_config_from_file(const char *path, struct AccreteConfig **out);

// Selects the mode by its command name (`simulate`, `eikonal`,
// `energy-audit`, `sharp-limit`, `gradcheck`).
//
// # Safety
// `config` must come from this library; `mode` must be NUL-terminated.
int32_t accrete_config_set_mode(struct AccreteConfig *config, const char *mode);

// Overrides the output directory.
//
// # Safety
// `config` must come from this library; `dir` must be NUL-terminated.
int32_t accrete_config_set_output_dir(struct AccreteConfig *config, const char *dir);

// Runs the pre-flight checks without executing anything.
//
// # Safety
// `config` must come from this library.
int32_t accrete_config_validate(const struct AccreteConfig *config);

// Hex SHA-256 of the configuration, as recorded in the manifest.
//
// # Safety
// `config` must come from this library; `buf` valid for `len` bytes or
// null; `needed` null or valid for writes.
int32_t accrete_config_hash(const struct AccreteConfig *config,
                            char *buf,
                            size_t len,
                            size_t *needed);

// # Safety
// `config` must be null or come from this library, and not be used again.
void accrete_config_free(struct AccreteConfig *config);

// Executes the configured mode and writes its artifacts and manifest.
// A run whose checks fail still returns `ACCRETE_OK`; inspect
// [`accrete_run_exit_code`].
//
// # Safety
// `config` must come from this library, `out` valid for writes.
int32_t accrete_run(const struct AccreteConfig *config, struct AccreteRun **out);

// Exit code the command-line tool would return for this run.
//
// # Safety
// `run` must come from this library, `out` valid for writes.
int32_t accrete_run_exit_code(const struct AccreteRun *run, int32_t *out);

// 1 when every check of the run passed, else 0.
//
// # Safety
// `run` must come from this library, `out` valid for writes.
int32_t accrete_run_passed(const struct AccreteRun *run, int32_t *out);

// # Safety
// `run` must come from this library; `buf` valid for `len` bytes or null;
// `needed` null or valid for writes.
int32_t accrete_run_manifest_path(const struct AccreteRun *run,
                                  char *buf,
                                  size_t len,
                                  size_t *needed);

// Human-readable summary, one item per line.
//
// # Safety
// As for [`accrete_run_manifest_path`].
int32_t accrete_run_summary(const struct AccreteRun *run, char *buf, size_t len, size_t *needed);

// # Safety
// `run` must be null or come from this library, and not be used again.
void accrete_run_free(struct AccreteRun *run);

// Coupled run kept in memory; nothing is written.
//
// # Safety
// `config` must come from this library, `out` valid for writes.
int32_t accrete_simulate(const struct AccreteConfig *config, struct AccreteSolution **out);

// Grid size and number of time steps of a solution.
//
// # Safety
// `sol` must come from this library; each output pointer must be valid for
// writes.
int32_t accrete_solution_dims(const struct AccreteSolution *sol,
                              size_t *nx,
                              size_t *ny,
                              size_t *steps);

// 1 when the coupled iteration met its tolerance, else 0.
//
// # Safety
// `sol` must come from this library, `out` valid for writes.
int32_t accrete_solution_converged(const struct AccreteSolution *sol, int32_t *out);

// Attachment times `θ`, row-major with `x` fastest, `nx * ny` values.
//
// # Safety
// `sol` must come from this library; `out` valid for `len` doubles.
int32_t accrete_solution_theta(const struct AccreteSolution *sol, double *out, size_t len);

// Deformation at step `step` as interleaved `(x, y)` pairs in node order,
// `2 * nx * ny` values.
//
// # Safety
// `sol` must come from this library; `out` valid for `len` doubles.
int32_t accrete_solution_deformation(const struct AccreteSolution *sol,
                                     size_t step,
                                     double *out,
                                     size_t len);

// # Safety
// `sol` must be null or come from this library, and not be used again.
void accrete_solution_free(struct AccreteSolution *sol);

// Fast-marching solve on an `nx × ny` grid over `[x0, x1] × [y0, y1]`
// (`extent = {x0, x1, y0, y1}`). `speed` and `theta` hold one value per
// node in row-major order; nodes with a nonzero `seed` start at `θ = 0`.
//
// # Safety
// `extent` must point to 4 doubles; `speed`, `seed` and `theta` to
// `nx * ny` elements each.
int32_t accrete_eikonal(size_t nx,
                        size_t ny,
                        const double *extent,
                        const double *speed,
                        const uint8_t *seed,
                        double *theta);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACCRETE_H */
