#ifndef NOISEFIELD_H
#define NOISEFIELD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum NfStatus {
  NF_STATUS_OK = 0,
  NF_STATUS_NULL_POINTER = 1,
  NF_STATUS_INVALID_ARGUMENT = 2,
  NF_STATUS_INVALID_LATTICE = 3,
  // Array lengths or grids that do not fit together.
  NF_STATUS_MISMATCH = 4,
  // Singular kernel, non-finite values, positivity loss.
  NF_STATUS_NUMERICAL = 5,
  NF_STATUS_IO = 6,
  NF_STATUS_OUT_OF_RANGE = 7,
  NF_STATUS_PANIC = 8,
} NfStatus;

typedef enum NfModeClass {
  NF_MODE_CLASS_INDEPENDENT = 0,
  NF_MODE_CLASS_SELF_CONJUGATE = 1,
  NF_MODE_CLASS_DEPENDENT = 2,
} NfModeClass;

// Initial quadratic kernel family. `Scaled` uses the `scale` argument.
typedef enum NfKernelChoice {
  NF_KERNEL_CHOICE_VACUUM = 0,
  NF_KERNEL_CHOICE_SCALED = 1,
  NF_KERNEL_CHOICE_ZERO = 2,
  NF_KERNEL_CHOICE_DETERMINISTIC = 3,
} NfKernelChoice;

typedef enum NfScheme {
  NF_SCHEME_EXACT = 0,
  NF_SCHEME_EULER = 1,
} NfScheme;

// Mode table of a periodic lattice.
typedef struct NfLattice NfLattice;

// Time series of a single-mode master-equation integration.
typedef struct NfLindblad NfLindblad;

// One trajectory driven by its seeded noise stream or by caller-supplied increments.
typedef struct NfTrajectory NfTrajectory;

// One lattice mode. Index and momentum components beyond `dim` are zero.
typedef struct NfMode {
  size_t id;
  int64_t index[3];
  double momentum[3];
  double energy;
  enum NfModeClass mode_class;
  size_t partner;
} NfMode;

typedef struct NfComplex {
  double re;
  double im;
} NfComplex;

typedef struct NfObservables {
  double t;
  double e0;
  double e1;
  double e_total;
  double e_density;
} NfObservables;

typedef struct NfSlope {
  double slope;
  double slope_stderr;
  double expected_slope;
  double z_score;
  uint64_t trajectories;
} NfSlope;

typedef struct NfLindbladSample {
  double t;
  double energy;
  double x_mean;
  double x2_mean;
  double trace_err;
  double min_eig;
} NfLindbladSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *nf_version(void);

// Static name of a status code, e.g. `"NULL_POINTER"`.
const char *nf_status_name(enum NfStatus status);

// Message of the last failed call on this thread, or an empty string.
// The pointer stays valid until the next failing call on this thread.
const char *nf_last_error(void);

// Builds the mode table of a `dim`-dimensional lattice with `sites` points
// per axis, box length `length` and mass `mass`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum NfStatus nf_lattice_new(size_t dim,
                             size_t sites,
                             double length,
                             double mass,
                             struct NfLattice **out);

// # Safety
// `lattice` must be null or a handle from [`nf_lattice_new`] not yet freed.
void nf_lattice_free(struct NfLattice *lattice);

// Number of lattice modes, `sites^dim`.
//
// # Safety
// `lattice` must be a live handle and `out` writable.
enum NfStatus nf_lattice_mode_count(const struct NfLattice *lattice, size_t *out);

// Number of independent (half-space) modes; trajectory arrays use this length.
//
// # Safety
// `lattice` must be a live handle and `out` writable.
enum NfStatus nf_lattice_half_count(const struct NfLattice *lattice, size_t *out);

// # Safety
// `lattice` must be a live handle and `out` writable.
enum NfStatus nf_lattice_mode(const struct NfLattice *lattice, size_t id, struct NfMode *out);

// Mode ids of the half-space slots, in slot order. `len` must equal the half count.
//
// # Safety
// `ids` must point to `len` writable elements.
enum NfStatus nf_lattice_half_space(const struct NfLattice *lattice, size_t *ids, size_t len);

// Creates a trajectory at `t = 0`.
//
// `scale` is only read for [`NfKernelChoice::Scaled`]. `mu0_plus` and
// `mu0_minus` hold the initial linear kernels per half-space slot; pass
// null for both (with `mu0_len = 0`) to start from zero. The noise stream
// is keyed by `(master_seed, trajectory_id)`, matching the CLI.
//
// # Safety
// `lattice` must be a live handle, the μ₀ arrays must hold `mu0_len`
// elements each, and `out` must be writable.
enum NfStatus nf_trajectory_new(const struct NfLattice *lattice,
                                enum NfKernelChoice kernel,
                                struct NfComplex scale,
                                const struct NfComplex *mu0_plus,
                                const struct NfComplex *mu0_minus,
                                size_t mu0_len,
                                double lambda,
                                enum NfScheme scheme,
                                double dt,
                                uint64_t master_seed,
                                uint64_t trajectory_id,
                                struct NfTrajectory **out);

// # Safety
// `trajectory` must be null or a handle from [`nf_trajectory_new`] not yet freed.
void nf_trajectory_free(struct NfTrajectory *trajectory);

// Advances `steps` grid steps using the trajectory's own noise stream.
// On failure the trajectory keeps its previous state.
//
// # Safety
// `trajectory` must be a live handle.
enum NfStatus nf_trajectory_step(struct NfTrajectory *trajectory, size_t steps);

// Advances one step with caller-supplied increments `dW` per half-space slot.
//
// # Safety
// `increments` must point to `len` readable elements.
enum NfStatus nf_trajectory_step_with_noise(struct NfTrajectory *trajectory,
                                            const struct NfComplex *increments,
                                            size_t len);

// Current time and step count. Either output may be null.
//
// # Safety
// `trajectory` must be a live handle; non-null outputs must be writable.
enum NfStatus nf_trajectory_time(const struct NfTrajectory *trajectory, double *t, uint64_t *step);

// Copies the kernels `V`, `μ(p)` and `μ(−p)` per half-space slot. Any
// output may be null; non-null outputs need `len` = half count elements.
//
// # Safety
// Non-null outputs must point to `len` writable elements.
enum NfStatus nf_trajectory_kernels(const struct NfTrajectory *trajectory,
                                    struct NfComplex *v,
                                    struct NfComplex *mu_plus,
                                    struct NfComplex *mu_minus,
                                    size_t len);

// Field expectation `⟨φ(p)⟩` for every lattice mode (length = mode count).
//
// # Safety
// `out` must point to `len` writable elements.
enum NfStatus nf_trajectory_field(const struct NfTrajectory *trajectory,
                                  struct NfComplex *out,
                                  size_t len);

// Energies at the current time. Fails with `INVALID_ARGUMENT` for the
// zero and deterministic initial kernels, whose energy is unbounded.
//
// # Safety
// `trajectory` must be a live handle and `out` writable.
enum NfStatus nf_trajectory_observe(const struct NfTrajectory *trajectory,
                                    struct NfObservables *out);

// Vacuum-started ensemble of `trajectories` runs; fits the growth rate of
// the mean noise energy and compares it with `λ² N / 2`.
//
// # Safety
// `lattice` must be a live handle and `out` writable.
enum NfStatus nf_energy_slope(const struct NfLattice *lattice,
                              double lambda,
                              double dt,
                              double t_max,
                              size_t snapshot_stride,
                              uint64_t trajectories,
                              uint64_t master_seed,
                              struct NfSlope *out);

// Integrates the single-mode master equation from the coherent state
// `alpha` (zero gives the vacuum). The Fock cutoff starts at `n_max` and
// is doubled until the top level stays unpopulated.
//
// # Safety
// `out` must be writable.
enum NfStatus nf_lindblad_run(double energy,
                              double lambda,
                              struct NfComplex alpha,
                              size_t n_max,
                              double dt,
                              double t_max,
                              size_t stride,
                              struct NfLindblad **out);

// # Safety
// `run` must be null or a handle from [`nf_lindblad_run`] not yet freed.
void nf_lindblad_free(struct NfLindblad *run);

// Number of stored samples and the Fock cutoff finally used. Either output may be null.
//
// # Safety
// `run` must be a live handle; non-null outputs must be writable.
enum NfStatus nf_lindblad_info(const struct NfLindblad *run, size_t *samples, size_t *n_max);

// # Safety
// `run` must be a live handle and `out` writable.
enum NfStatus nf_lindblad_sample(const struct NfLindblad *run,
                                 size_t index,
                                 struct NfLindbladSample *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NOISEFIELD_H */
