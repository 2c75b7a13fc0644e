#ifndef SPINVMC_H
#define SPINVMC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes shared by every entry point.
 */
typedef enum SpinvmcStatus {
  SPINVMC_STATUS_OK = 0,
  SPINVMC_STATUS_NULL_POINTER = 1,
  SPINVMC_STATUS_INVALID_STRING = 2,
  SPINVMC_STATUS_CONFIG = 3,
  SPINVMC_STATUS_NUMERICAL = 4,
  SPINVMC_STATUS_DIMENSION = 5,
  SPINVMC_STATUS_UNSUPPORTED = 6,
  SPINVMC_STATUS_IO = 7,
  SPINVMC_STATUS_CHECKPOINT = 8,
  SPINVMC_STATUS_DEGENERATE_AMPLITUDE = 9,
  SPINVMC_STATUS_PANIC = 10,
} SpinvmcStatus;

/*
 A network with its Hamiltonian, ready for evaluation.
 */
typedef struct SpinvmcModel SpinvmcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread; empty if none. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *spinvmc_last_error(void);

/*
 Library version as a static string.
 */
const char *spinvmc_version(void);

/*
 Creates a model from a TOML config, with parameters initialized from its seed.

 # Safety
 `config_toml` must be a NUL-terminated string; `out` must be writable.
 */
enum SpinvmcStatus spinvmc_model_new(const char *config_toml, struct SpinvmcModel **out);

/*
 Creates a model holding the parameters saved in a checkpoint file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SpinvmcStatus spinvmc_model_from_checkpoint(const char *path, struct SpinvmcModel **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must come from this library and not be used afterwards.
 */
void spinvmc_model_free(struct SpinvmcModel *model);

/*
 Number of electrons the model expects.

 # Safety
 `model` must be a live handle and `out` writable.
 */
enum SpinvmcStatus spinvmc_model_n_electrons(const struct SpinvmcModel *model, size_t *out);

/*
 Number of variational parameters.

 # Safety
 `model` must be a live handle and `out` writable.
 */
enum SpinvmcStatus spinvmc_model_n_params(const struct SpinvmcModel *model, size_t *out);

/*
 Copies the parameters into `buf`, which must hold `n_params` doubles.

 # Safety
 `model` must be a live handle; `buf` must hold `len` doubles.
 */
enum SpinvmcStatus spinvmc_model_params(const struct SpinvmcModel *model, double *buf, size_t len);

/*
 `log|Ψ|` and the phase of `Ψ` at one configuration. `positions` holds
 `x₀, y₀, x₁, y₁, …` and `spins` holds ±1 per electron.

 # Safety
 `model` must be a live handle; `positions` must hold `2N` doubles and
 `spins` `N` bytes; the outputs must be writable.
 */
enum SpinvmcStatus spinvmc_model_log_psi(const struct SpinvmcModel *model,
                                         const double *positions,
                                         const int8_t *spins,
                                         double *log_abs,
                                         double *phase);

/*
 Complex local energy `(HΨ)/Ψ` at one configuration.

 # Safety
 As for [`spinvmc_model_log_psi`].
 */
enum SpinvmcStatus spinvmc_model_local_energy(const struct SpinvmcModel *model,
                                              const double *positions,
                                              const int8_t *spins,
                                              double *re,
                                              double *im);

/*
 Exact ground-state energy of a noninteracting system.

 # Safety
 `config_toml` must be a NUL-terminated string; `out` must be writable.
 */
enum SpinvmcStatus spinvmc_reference_energy(const char *config_toml, double *out);

/*
 Trains as the `train` command does, writing artifacts under the config's
 `out_dir`. `final_energy` receives the last step's mean energy (NaN for a
 zero-iteration run).

 # Safety
 `config_toml` must be a NUL-terminated string; `final_energy` may be null.
 */
enum SpinvmcStatus spinvmc_train(const char *config_toml, int long_run, double *final_energy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPINVMC_H */
