#ifndef PALMER_H
#define PALMER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes returned by every fallible function.
 */
typedef enum PalmerStatus {
  PALMER_STATUS_OK = 0,
  PALMER_STATUS_NULL_POINTER = 1,
  PALMER_STATUS_INVALID_INPUT = 2,
  PALMER_STATUS_OUT_OF_RANGE = 3,
  PALMER_STATUS_IO = 4,
  PALMER_STATUS_FORMAT = 5,
  PALMER_STATUS_INSUFFICIENT_DATA = 6,
  PALMER_STATUS_NOT_FOUND = 7,
  PALMER_STATUS_BUFFER_TOO_SMALL = 8,
  PALMER_STATUS_INTERNAL = 9,
} PalmerStatus;

typedef struct PalmerEnv PalmerEnv;

typedef struct PalmerIndex PalmerIndex;

typedef struct PalmerLog PalmerLog;

typedef struct PalmerQ PalmerQ;

typedef struct PalmerRoadmap PalmerRoadmap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t palmer_last_error(char *buf, size_t len);

/**
 * Grid maze environment. `map` is an ASCII map (`#` wall, `.` free) or null
 * for an open `width × height` grid. `feature_dim` 0 selects `[x, y]`
 * observations, otherwise random features of that (even) dimension.
 *
 * # Safety
 * `map` must be null or a valid C string; `out` must be a valid pointer.
 */
enum PalmerStatus palmer_env_new(const char *map,
                                 size_t width,
                                 size_t height,
                                 size_t feature_dim,
                                 uint64_t seed,
                                 struct PalmerEnv **out_env);

/**
 * # Safety
 * `env` must be null or a handle from [`palmer_env_new`].
 */
void palmer_env_free(struct PalmerEnv *env);

/**
 * # Safety
 * `env` must be null or a live handle.
 */
size_t palmer_env_obs_dim(const struct PalmerEnv *env);

/**
 * Observation of cell `(x, y)` written to `obs[0..len]`.
 *
 * # Safety
 * `env` must be a live handle, `obs` valid for `len` floats.
 */
enum PalmerStatus palmer_env_observe(const struct PalmerEnv *env,
                                     int32_t x,
                                     int32_t y,
                                     float *obs,
                                     size_t len);

/**
 * One environment step from `(x, y)`; actions are 0 up, 1 right, 2 down, 3 left.
 *
 * # Safety
 * `env` must be a live handle; output pointers must be valid.
 */
enum PalmerStatus palmer_env_step(const struct PalmerEnv *env,
                                  int32_t x,
                                  int32_t y,
                                  size_t action,
                                  int32_t *out_x,
                                  int32_t *out_y);

/**
 * Uniform random walk of `steps` transitions collected into a new log.
 *
 * # Safety
 * `env` must be a live handle; `out_log` must be valid.
 */
enum PalmerStatus palmer_log_random_walk(const struct PalmerEnv *env,
                                         size_t steps,
                                         uint64_t seed,
                                         struct PalmerLog **out_log);

/**
 * # Safety
 * `path` must be a valid C string; `out_log` must be valid.
 */
enum PalmerStatus palmer_log_load(const char *path, struct PalmerLog **out_log);

/**
 * # Safety
 * `log` must be a live handle and `path` a valid C string.
 */
enum PalmerStatus palmer_log_save(const struct PalmerLog *log, const char *path);

/**
 * # Safety
 * `log` must be null or a live handle.
 */
void palmer_log_free(struct PalmerLog *log);

/**
 * # Safety
 * `log` must be null or a live handle.
 */
size_t palmer_log_num_states(const struct PalmerLog *log);

/**
 * # Safety
 * `log` must be null or a live handle.
 */
size_t palmer_log_obs_dim(const struct PalmerLog *log);

/**
 * Copies stored state `index` into `obs[0..len]`.
 *
 * # Safety
 * `log` must be a live handle, `obs` valid for `len` floats.
 */
enum PalmerStatus palmer_log_state(const struct PalmerLog *log,
                                   size_t index,
                                   float *obs,
                                   size_t len);

/**
 * Tabular goal-conditioned Q fitted by sweeps to a fixed point (at most
 * `max_sweeps`).
 *
 * # Safety
 * `log` must be a live handle; `out_q` must be valid.
 */
enum PalmerStatus palmer_q_fit_tabular(const struct PalmerLog *log,
                                       size_t max_sweeps,
                                       struct PalmerQ **out_q);

/**
 * # Safety
 * `path` must be a valid C string; `out_q` must be valid.
 */
enum PalmerStatus palmer_q_load(const char *path, struct PalmerQ **out_q);

/**
 * # Safety
 * `q` must be a live handle and `path` a valid C string.
 */
enum PalmerStatus palmer_q_save(const struct PalmerQ *q, const char *path);

/**
 * # Safety
 * `q` must be null or a live handle.
 */
void palmer_q_free(struct PalmerQ *q);

/**
 * Q values of every action for state `s` and goal `g` (both `dim` floats).
 *
 * # Safety
 * `q` must be a live handle; `s`, `g` valid for `dim` floats, `values` for
 * `num_values` doubles.
 */
enum PalmerStatus palmer_q_values(const struct PalmerQ *q,
                                  const float *s,
                                  const float *g,
                                  size_t dim,
                                  double *values,
                                  size_t num_values);

/**
 * Step distance `1 + log_γ(max_a Q)` from `s` to `g`.
 *
 * # Safety
 * `q` must be a live handle; `s`, `g` valid for `dim` floats.
 */
enum PalmerStatus palmer_q_distance(const struct PalmerQ *q,
                                    const float *s,
                                    const float *g,
                                    size_t dim,
                                    double *out_distance);

/**
 * Embedding index of every stored state. `encoder_path` names a saved
 * encoder, or is null for the identity map.
 *
 * # Safety
 * `log` must be a live handle, `encoder_path` null or a valid C string.
 */
enum PalmerStatus palmer_index_new(const struct PalmerLog *log,
                                   const char *encoder_path,
                                   struct PalmerIndex **out_index);

/**
 * # Safety
 * `index` must be null or a live handle.
 */
void palmer_index_free(struct PalmerIndex *index);

/**
 * Best stored segment from near `s_c` to near `s_g`. Writes the global
 * indices of its first and last states; returns `NotFound` when none exists.
 *
 * # Safety
 * Handles must be live; `s_c`, `s_g` valid for `dim` floats.
 */
enum PalmerStatus palmer_retrieve(const struct PalmerIndex *index,
                                  const struct PalmerLog *log,
                                  const float *s_c,
                                  const float *s_g,
                                  size_t dim,
                                  double d_p,
                                  size_t l_max,
                                  size_t *out_first,
                                  size_t *out_last);

/**
 * Retrieval roadmap over `num_vertices` sampled buffer states with
 * reachability radius `r`.
 *
 * # Safety
 * Handles must be live; `out_roadmap` must be valid.
 */
enum PalmerStatus palmer_roadmap_build(const struct PalmerLog *log,
                                       const struct PalmerIndex *index,
                                       double d_p,
                                       size_t l_max,
                                       double r,
                                       size_t num_vertices,
                                       uint64_t seed,
                                       struct PalmerRoadmap **out_roadmap);

/**
 * # Safety
 * `path` must be a valid C string; `out_roadmap` must be valid.
 */
enum PalmerStatus palmer_roadmap_load(const char *path, struct PalmerRoadmap **out_roadmap);

/**
 * # Safety
 * `roadmap` must be a live handle and `path` a valid C string.
 */
enum PalmerStatus palmer_roadmap_save(const struct PalmerRoadmap *roadmap, const char *path);

/**
 * # Safety
 * `roadmap` must be null or a live handle.
 */
void palmer_roadmap_free(struct PalmerRoadmap *roadmap);

/**
 * # Safety
 * `roadmap` must be null or a live handle.
 */
size_t palmer_roadmap_num_vertices(const struct PalmerRoadmap *roadmap);

/**
 * # Safety
 * `roadmap` must be null or a live handle.
 */
size_t palmer_roadmap_num_edges(const struct PalmerRoadmap *roadmap);

/**
 * Plans from `start` to `goal` and writes the global indices of the
 * stitched buffer states into `states`. `out_len` always receives the
 * required length; `BufferTooSmall` is returned when `capacity` is short,
 * `NotFound` when no plan exists.
 *
 * # Safety
 * Handles must be live; `start`, `goal` valid for `dim` floats; `states`
 * valid for `capacity` entries.
 */
enum PalmerStatus palmer_roadmap_plan(const struct PalmerRoadmap *roadmap,
                                      const struct PalmerLog *log,
                                      const struct PalmerIndex *index,
                                      double d_p,
                                      size_t l_max,
                                      const float *start,
                                      const float *goal,
                                      size_t dim,
                                      size_t *states,
                                      size_t capacity,
                                      size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PALMER_H */
