#ifndef ZONOTRAIN_H
#define ZONOTRAIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ZtStatus {
  ZT_STATUS_OK = 0,
  ZT_STATUS_NULL_POINTER = 1,
  ZT_STATUS_INVALID_ARGUMENT = 2,
  ZT_STATUS_DIMENSION_MISMATCH = 3,
  ZT_STATUS_PARSE = 4,
  ZT_STATUS_NUMERICAL = 5,
  ZT_STATUS_BUDGET_EXCEEDED = 6,
  ZT_STATUS_PANIC = 7,
} ZtStatus;

// Network handle.
typedef struct ZtNetwork ZtNetwork;

// Reachable-set handle (a list of constrained zonotope pieces).
typedef struct ZtReachSet ZtReachSet;

// Constrained zonotope handle.
typedef struct ZtZonotope ZtZonotope;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the last failure on this thread (empty after success).
const char *zt_last_error_message(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library or be null.
void zt_string_free(char *s);

// `{c + G z : ‖z‖∞ ≤ 1, A z = b}` with `G` of size `dim × n_gen` and `A` of
// size `n_con × n_gen`.
//
// # Safety
// Array arguments must hold the stated number of doubles (or be null when
// that number is zero).
enum ZtStatus zt_cz_new(size_t dim,
                        size_t n_gen,
                        size_t n_con,
                        const double *c,
                        const double *g,
                        const double *a,
                        const double *b,
                        struct ZtZonotope **out);

// Parses `{"c": [...], "G": [[...]], "A": [[...]], "b": [...]}`.
//
// # Safety
// `json` must be a NUL-terminated string.
enum ZtStatus zt_cz_from_json(const char *json, struct ZtZonotope **out);

// # Safety
// `z` must be a live handle; the returned string is freed with `zt_string_free`.
enum ZtStatus zt_cz_to_json(const struct ZtZonotope *z, char **out);

// # Safety
// `z` must come from this library or be null.
void zt_cz_free(struct ZtZonotope *z);

// Writes dimension, generator count and constraint count.
//
// # Safety
// `z` must be a live handle; out pointers may be null to skip.
enum ZtStatus zt_cz_shape(const struct ZtZonotope *z, size_t *dim, size_t *n_gen, size_t *n_con);

// Image `W Z + w` with `W` of size `rows × dim(z)`.
//
// # Safety
// `w_mat` holds `rows * dim(z)` doubles and `w_vec` holds `rows`.
enum ZtStatus zt_cz_affine(const struct ZtZonotope *z,
                           size_t rows,
                           const double *w_mat,
                           const double *w_vec,
                           struct ZtZonotope **out);

// # Safety
// `a` and `b` must be live handles.
enum ZtStatus zt_cz_intersect(const struct ZtZonotope *a,
                              const struct ZtZonotope *b,
                              struct ZtZonotope **out);

// Emptiness LP. `v_star` receives the optimum (infinity when `A z = b` has
// no solution) and `is_empty` receives 1 when the set is empty.
//
// # Safety
// `z` must be a live handle; out pointers may be null to skip.
enum ZtStatus zt_cz_check_empty(const struct ZtZonotope *z, double *v_star, int *is_empty);

// Membership of a point (length `dim(z)`) up to `tol`.
//
// # Safety
// `point` holds `dim(z)` doubles.
enum ZtStatus zt_cz_contains(const struct ZtZonotope *z, const double *point, double tol, int *out);

// Parses `{"layers": [{"W": [[...]], "w": [...]}, ...]}`.
//
// # Safety
// `json` must be a NUL-terminated string.
enum ZtStatus zt_network_from_json(const char *json, struct ZtNetwork **out);

// # Safety
// `net` must come from this library or be null.
void zt_network_free(struct ZtNetwork *net);

// # Safety
// `net` must be a live handle; out pointers may be null to skip.
enum ZtStatus zt_network_shape(const struct ZtNetwork *net, size_t *input_dim, size_t *output_dim);

// # Safety
// `x` holds `input_dim` doubles and `y` has room for `output_dim`.
enum ZtStatus zt_network_forward(const struct ZtNetwork *net, const double *x, double *y);

// Exact reachable set of `input` with default options (pruning on).
//
// # Safety
// `net` and `input` must be live handles.
enum ZtStatus zt_reach(const struct ZtNetwork *net,
                       const struct ZtZonotope *input,
                       struct ZtReachSet **out);

// # Safety
// `r` must be a live handle.
enum ZtStatus zt_reach_len(const struct ZtReachSet *r, size_t *len);

// Copy of piece `index` as a new zonotope handle.
//
// # Safety
// `r` must be a live handle.
enum ZtStatus zt_reach_piece(const struct ZtReachSet *r, size_t index, struct ZtZonotope **out);

// # Safety
// `r` must come from this library or be null.
void zt_reach_free(struct ZtReachSet *r);

// Reach + emptiness of every piece against every unsafe set. `safe`
// receives 1 when no piece meets an unsafe set; `max_loss` receives the
// largest `1 − v*`.
//
// # Safety
// `unsafe_sets` points to `n_unsafe` live handles.
enum ZtStatus zt_verify(const struct ZtNetwork *net,
                        const struct ZtZonotope *input,
                        const struct ZtZonotope *const *unsafe_sets,
                        size_t n_unsafe,
                        int *safe,
                        double *max_loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZONOTRAIN_H */
