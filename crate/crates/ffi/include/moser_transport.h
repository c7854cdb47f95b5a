#ifndef MOSER_TRANSPORT_H
#define MOSER_TRANSPORT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MtStatus {
  MT_OK = 0,
  MT_NULL_POINTER = 1,
  MT_INVALID_ARGUMENT = 2,
  MT_PARSE_ERROR = 3,
  MT_OUT_OF_DOMAIN = 4,
  MT_CONSTRUCTION_FAILED = 5,
  MT_PANIC = 6,
} MtStatus;

/**
 * Domain of a family built from an expression.
 */
typedef enum MtDomainKind {
  MT_INTERVAL = 0,
  MT_CYLINDER = 1,
  MT_TORUS = 2,
} MtDomainKind;

/**
 * A parametrised density family `x ↦ ρ_x`.
 */
typedef struct MtFamily MtFamily;

/**
 * Quantile function of one member `ρ_x` on the interval.
 */
typedef struct MtQuantile MtQuantile;

/**
 * A family of transport maps `T_x` with the map at the last parameter
 * cached.
 */
typedef struct MtRepresentation MtRepresentation;

/**
 * Construction options; fill with [`mt_pipeline_defaults`] first.
 */
typedef struct MtPipelineOptions {
  /**
   * 0 auto, 1 collar then Moser, 2 Moser only.
   */
  uint32_t mode;
  /**
   * 0 lower boundary, 1 upper boundary.
   */
  uint32_t side;
  double v;
  uint32_t nt;
  uint32_t na;
  uint32_t steps;
  double tol_push;
} MtPipelineOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length in
 * bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t mt_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mt_version(void);

/**
 * Builtin family by name; `params` is `key=value` pairs separated by
 * commas, or null.
 *
 * # Safety
 * `name` and `params` must be null or NUL-terminated strings; `out` must be
 * valid for writes.
 */
enum MtStatus mt_family_builtin(const char *name, const char *params, struct MtFamily **out);

/**
 * Family from a density expression in `x`, `a`, `t` (or `m`) on the given
 * domain, with parameters in `[x_min, x_max]` and derivative order `k`.
 *
 * # Safety
 * `expr` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum MtStatus mt_family_expression(enum MtDomainKind domain,
                                   double circumference,
                                   const char *expr,
                                   double x_min,
                                   double x_max,
                                   uint32_t k,
                                   struct MtFamily **out);

/**
 * `ρ(x, (a, t))`; on the interval `a` is ignored.
 *
 * # Safety
 * `fam` must come from this library; `out` must be valid for writes.
 */
enum MtStatus mt_family_eval(const struct MtFamily *fam, double x, double a, double t, double *out);

/**
 * # Safety
 * `fam` must be null or come from this library, and not be used after.
 */
void mt_family_free(struct MtFamily *fam);

/**
 * Writes the default construction options.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum MtStatus mt_pipeline_defaults(struct MtPipelineOptions *out);

/**
 * Builds the transport family for `fam`; `opts` may be null for the
 * defaults. No pushforward verification is run.
 *
 * # Safety
 * `fam` must come from this library; `opts` must be null or valid;
 * `out` must be valid for writes.
 */
enum MtStatus mt_representation_build(const struct MtFamily *fam,
                                      const struct MtPipelineOptions *opts,
                                      struct MtRepresentation **out);

/**
 * Evaluates `T_x` at `n` points `(a[i], t[i])`, writing the images to
 * `out_a` and `out_t`. On the interval `a` may be null and `out_a` is
 * then left untouched.
 *
 * # Safety
 * `rep` must come from this library; `t`, `out_t` (and `a`, `out_a` when
 * non-null) must be valid for `n` elements.
 */
enum MtStatus mt_representation_eval(const struct MtRepresentation *rep,
                                     double x,
                                     const double *a,
                                     const double *t,
                                     size_t n,
                                     double *out_a,
                                     double *out_t);

/**
 * Runs the pushforward checks; writes the worst L¹ error and whether every
 * check passed.
 *
 * # Safety
 * `rep` must come from this library; outputs must be valid for writes.
 */
enum MtStatus mt_representation_verify(struct MtRepresentation *rep, double *worst_l1, bool *pass);

/**
 * # Safety
 * `rep` must be null or come from this library, and not be used after.
 */
void mt_representation_free(struct MtRepresentation *rep);

/**
 * Quantile function of `ρ_x` from `n_nodes` cells (interval families).
 *
 * # Safety
 * `fam` must come from this library; `out` must be valid for writes.
 */
enum MtStatus mt_quantile_build(const struct MtFamily *fam,
                                double x,
                                size_t n_nodes,
                                struct MtQuantile **out);

/**
 * `F^{-1}(p)` for `p ∈ [0, 1]`.
 *
 * # Safety
 * `q` must come from this library; `out` must be valid for writes.
 */
enum MtStatus mt_quantile_inverse(const struct MtQuantile *q, double p, double *out);

/**
 * `F(m)` for `m ∈ [0, 1]`.
 *
 * # Safety
 * `q` must come from this library; `out` must be valid for writes.
 */
enum MtStatus mt_quantile_cdf(const struct MtQuantile *q, double m, double *out);

/**
 * # Safety
 * `q` must be null or come from this library, and not be used after.
 */
void mt_quantile_free(struct MtQuantile *q);

/**
 * `W∞` distance between two measures on the interval given by their
 * quantile functions.
 *
 * # Safety
 * `q1`, `q2` must come from this library; `out` must be valid for writes.
 */
enum MtStatus mt_w_infinity(const struct MtQuantile *q1, const struct MtQuantile *q2, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOSER_TRANSPORT_H */
