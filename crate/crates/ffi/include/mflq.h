#ifndef MFLQ_H
#define MFLQ_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes; the nonzero values match the `mflq` process exit codes.
 */
typedef enum MflqStatus {
  MFLQ_STATUS_OK = 0,
  MFLQ_STATUS_OTHER = 1,
  MFLQ_STATUS_PARSE = 2,
  MFLQ_STATUS_SHAPE = 3,
  MFLQ_STATUS_ASSUMPTION = 4,
  MFLQ_STATUS_ACCEPTANCE = 5,
  MFLQ_STATUS_NULL_ARGUMENT = 6,
  MFLQ_STATUS_BUFFER_TOO_SMALL = 7,
  MFLQ_STATUS_PANIC = 8,
} MflqStatus;

/*
 Solution pair of the two algebraic Riccati equations.
 */
typedef struct MflqAre MflqAre;

/*
 Validated problem data.
 */
typedef struct MflqProblem MflqProblem;

/*
 Minimizer, multiplier and value of the static problem.
 */
typedef struct MflqStatic MflqStatic;

/*
 Message of the last failed call on this thread, or NULL. Owned by the library.
 */
const char *mflq_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *mflq_version(void);

/*
 Releases a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and not be freed twice.
 */
void mflq_string_free(char *s);

/*
 Parses problem JSON (fields n, m and row-major blocks) into a new handle.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum MflqStatus mflq_problem_from_json(const char *json, struct MflqProblem **out);

/*
 # Safety
 `p` must be NULL or a handle from [`mflq_problem_from_json`].
 */
void mflq_problem_free(struct MflqProblem *p);

/*
 State and control dimensions.

 # Safety
 All pointers must be valid.
 */
enum MflqStatus mflq_problem_dims(const struct MflqProblem *p, size_t *n, size_t *m);

/*
 Checks the positivity assumptions; fails with `ASSUMPTION` naming the violated condition.

 # Safety
 `p` must be a valid handle.
 */
enum MflqStatus mflq_problem_check_assumptions(const struct MflqProblem *p);

/*
 Solves both algebraic Riccati equations.

 # Safety
 `p` must be a valid handle; `out` must be writable.
 */
enum MflqStatus mflq_are_solve(const struct MflqProblem *p, struct MflqAre **out);

/*
 # Safety
 `a` must be NULL or a handle from [`mflq_are_solve`].
 */
void mflq_are_free(struct MflqAre *a);

/*
 Copies P (n×n, row-major) into `buf`.

 # Safety
 `buf` must hold `len` doubles.
 */
enum MflqStatus mflq_are_copy_P(const struct MflqAre *a, double *buf, size_t len);

/*
 Copies Π (n×n, row-major) into `buf`.

 # Safety
 `buf` must hold `len` doubles.
 */
enum MflqStatus mflq_are_copy_Pi(const struct MflqAre *a, double *buf, size_t len);

/*
 Copies the feedback gain Θ (m×n, row-major) into `buf`.

 # Safety
 `buf` must hold `len` doubles.
 */
enum MflqStatus mflq_are_copy_Theta(const struct MflqAre *a, double *buf, size_t len);

/*
 Max-abs residuals of both equations.

 # Safety
 All pointers must be valid.
 */
enum MflqStatus mflq_are_residuals(const struct MflqAre *a,
                                   double *residual_p,
                                   double *residual_pi);

/*
 Solves the static problem using the ARE solution P.

 # Safety
 Handles must be valid and belong to the same problem; `out` must be writable.
 */
enum MflqStatus mflq_static_solve(const struct MflqProblem *p,
                                  const struct MflqAre *a,
                                  struct MflqStatic **out);

/*
 # Safety
 `s` must be NULL or a handle from [`mflq_static_solve`].
 */
void mflq_static_free(struct MflqStatic *s);

/*
 Optimal static value V.

 # Safety
 All pointers must be valid.
 */
enum MflqStatus mflq_static_value(const struct MflqStatic *s, double *value);

/*
 Copies x* (length n) into `buf`.

 # Safety
 `buf` must hold `len` doubles.
 */
enum MflqStatus mflq_static_copy_x(const struct MflqStatic *s, double *buf, size_t len);

/*
 Copies u* (length m) into `buf`.

 # Safety
 `buf` must hold `len` doubles.
 */
enum MflqStatus mflq_static_copy_u(const struct MflqStatic *s, double *buf, size_t len);

/*
 Copies λ* (length n) into `buf`.

 # Safety
 `buf` must hold `len` doubles.
 */
enum MflqStatus mflq_static_copy_lambda(const struct MflqStatic *s, double *buf, size_t len);

/*
 Runs the coupled turnpike experiment and returns its JSON report in `out_json`.

 Free the string with [`mflq_string_free`]. Invariant failures still produce the report
 and return `ACCEPTANCE`.

 # Safety
 `x0` must hold `n` doubles; `out_json` must be writable.
 */
enum MflqStatus mflq_turnpike_report_json(const struct MflqProblem *p,
                                          const double *x0,
                                          size_t n,
                                          double horizon,
                                          double dt,
                                          size_t n_paths,
                                          uint64_t seed,
                                          char **out_json);

#endif  /* MFLQ_H */
