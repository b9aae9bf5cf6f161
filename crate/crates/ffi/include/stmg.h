#ifndef STMG_H
#define STMG_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Manufactured problem supplying source and initial data.
 */
typedef enum StmgProblem {
  /**
   * `u = exp(-t) prod sin(pi x_k)`
   */
  STMG_PROBLEM_SINE_EXP = 0,
  /**
   * `u = prod x_k (1 - x_k)`
   */
  STMG_PROBLEM_QUADRATIC = 1,
  /**
   * Homogeneous data.
   */
  STMG_PROBLEM_ZERO = 2,
} StmgProblem;

/**
 * Result code of every fallible call.
 */
typedef enum StmgStatus {
  STMG_STATUS_OK = 0,
  STMG_STATUS_NULL_POINTER = 1,
  STMG_STATUS_INVALID_ARGUMENT = 2,
  STMG_STATUS_INADMISSIBLE = 3,
  STMG_STATUS_NOT_CONVERGED = 4,
  STMG_STATUS_NUMERICAL = 5,
  STMG_STATUS_IO = 6,
  STMG_STATUS_PANIC = 7,
} StmgStatus;

/**
 * Slab inverse used by the smoother.
 */
typedef enum StmgStrategy {
  STMG_STRATEGY_DIRECT = 0,
  STMG_STRATEGY_DIAG = 1,
  STMG_STRATEGY_C_SCHUR = 2,
  STMG_STRATEGY_R_SCHUR = 3,
} StmgStrategy;

/**
 * Multigrid hierarchy built on a system.
 */
typedef struct StmgMg StmgMg;

/**
 * Assembled space-time system.
 */
typedef struct StmgSystem StmgSystem;

/**
 * Multigrid parameters.
 */
typedef struct StmgMgOptions {
  enum StmgStrategy strategy;
  double omega;
  uint32_t pre_sweeps;
  uint32_t post_sweeps;
  double inner_tol;
  uint32_t coarse_cap;
  double tol;
  uint32_t max_cycles;
} StmgMgOptions;

/**
 * Uniform discretization of `[0, 1]^dim x [t0, t0 + n_slabs * slab_length]`.
 */
typedef struct StmgSetup {
  uint32_t dim;
  uint32_t p_space;
  uint32_t nel_space;
  uint32_t p_time;
  uint32_t nel_time;
  uint32_t n_slabs;
  double slab_length;
  double theta;
  double t0;
  enum StmgProblem problem;
} StmgSetup;

/**
 * Outcome of a multigrid solve.
 */
typedef struct StmgSolveInfo {
  uint32_t iterations;
  bool converged;
  double relative_residual;
  double seconds;
} StmgSolveInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *stmg_version(void);

/**
 * Length in bytes (without terminator) of the last error message, 0 if none.
 */
size_t stmg_last_error_length(void);

/**
 * Copies the last error message into `buf` (NUL-terminated, truncated to
 * `len - 1` bytes). Returns the number of bytes written without the
 * terminator, or -1 if `buf` is null or `len` is 0.
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes.
 */
int32_t stmg_last_error_message(char *buf, size_t len);

/**
 * Default multigrid options.
 */
struct StmgMgOptions stmg_mg_options_default(void);

/**
 * Assembles a uniform space-time system.
 *
 * # Safety
 * `setup` must be valid for reads and `out` valid for writes.
 */
enum StmgStatus stmg_system_new(const struct StmgSetup *setup, struct StmgSystem **out);

/**
 * Releases a system; null is ignored.
 *
 * # Safety
 * `sys` must come from [`stmg_system_new`] and not be used afterwards.
 */
void stmg_system_free(struct StmgSystem *sys);

/**
 * Total number of unknowns, 0 for a null handle.
 *
 * # Safety
 * `sys` must be null or a live handle.
 */
size_t stmg_system_n_dofs(const struct StmgSystem *sys);

/**
 * Copies the assembled right-hand side into `rhs`.
 *
 * # Safety
 * `rhs` must hold `len` doubles.
 */
enum StmgStatus stmg_system_rhs(const struct StmgSystem *sys, double *rhs, size_t len);

/**
 * Solves `L u = f` exactly by forward substitution over the slabs.
 *
 * # Safety
 * `f` and `u` must hold `len` doubles each.
 */
enum StmgStatus stmg_system_solve_sequential(const struct StmgSystem *sys,
                                             const double *f,
                                             double *u,
                                             size_t len);

/**
 * Euclidean norm of `f - L u`.
 *
 * # Safety
 * `u` and `f` must hold `len` doubles each; `norm` must be writable.
 */
enum StmgStatus stmg_system_residual_norm(const struct StmgSystem *sys,
                                          const double *u,
                                          const double *f,
                                          size_t len,
                                          double *norm);

/**
 * dG-norm distance between `u` and the manufactured exact solution.
 *
 * # Safety
 * `u` must hold `len` doubles; `err` must be writable.
 */
enum StmgStatus stmg_system_dg_error(const struct StmgSystem *sys,
                                     const double *u,
                                     size_t len,
                                     double *err);

/**
 * Builds a multigrid hierarchy for the given setup. `options` may be null
 * for defaults.
 *
 * # Safety
 * `setup` must be valid for reads, `options` null or valid, `out` writable.
 */
enum StmgStatus stmg_mg_new(const struct StmgSetup *setup,
                            const struct StmgMgOptions *options,
                            struct StmgMg **out);

/**
 * Releases a hierarchy; null is ignored.
 *
 * # Safety
 * `mg` must come from [`stmg_mg_new`] and not be used afterwards.
 */
void stmg_mg_free(struct StmgMg *mg);

/**
 * Number of levels, 0 for a null handle.
 *
 * # Safety
 * `mg` must be null or a live handle.
 */
size_t stmg_mg_n_levels(const struct StmgMg *mg);

/**
 * Unknowns on the finest level, 0 for a null handle.
 *
 * # Safety
 * `mg` must be null or a live handle.
 */
size_t stmg_mg_n_dofs(const struct StmgMg *mg);

/**
 * Copies the finest-level right-hand side into `rhs`.
 *
 * # Safety
 * `rhs` must hold `len` doubles.
 */
enum StmgStatus stmg_mg_rhs(const struct StmgMg *mg, double *rhs, size_t len);

/**
 * Runs V-cycles from a zero guess. Returns `NotConverged` (with `u` and
 * `info` still filled) when the cycle budget runs out.
 *
 * # Safety
 * `f` and `u` must hold `len` doubles; `info` may be null.
 */
enum StmgStatus stmg_mg_solve(const struct StmgMg *mg,
                              const double *f,
                              double *u,
                              size_t len,
                              struct StmgSolveInfo *info);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* STMG_H */
