#ifndef LOADSYNTH_H
#define LOADSYNTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdint.h>
#include <stddef.h>

/*
 Number of readings per generated profile.
 */
#define LS_PERIODS 48

/*
 Status codes returned by every entry point.
 */
typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_INVALID_ARGUMENT = 2,
  LS_STATUS_MISSING_FILE = 3,
  LS_STATUS_CHECKSUM_MISMATCH = 4,
  LS_STATUS_BAD_ARTIFACT = 5,
  LS_STATUS_GUARD_REFUSED = 6,
  LS_STATUS_BUDGET_EXHAUSTED = 7,
  LS_STATUS_BUFFER_TOO_SMALL = 8,
  LS_STATUS_IO = 9,
  LS_STATUS_INTERNAL = 10,
} LsStatus;

/*
 Opaque model handle.
 */
typedef struct LsModel LsModel;

/*
 Label constraint; `-1` in any field means "any value". Booleans use 0/1,
 `property_type` indexes detached, semi_detached, terraced, flat,
 bungalow and `energy_rating` indexes A..G.
 */
typedef struct LsCondition {
  int8_t has_ev;
  int8_t has_heat_pump;
  int8_t smart_tariff;
  int8_t property_type;
  int8_t energy_rating;
} LsCondition;

/*
 Realized labels of one generated profile, same encoding as [`LsCondition`].
 */
typedef struct LsLabels {
  uint8_t has_ev;
  uint8_t has_heat_pump;
  uint8_t smart_tariff;
  uint8_t property_type;
  uint8_t energy_rating;
} LsLabels;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Loads an artifact file and stores a new handle in `*out`. Release it with
 [`ls_model_free`].

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LsStatus ls_model_open(const char *path, struct LsModel **out);

/*
 Releases a handle. Null is ignored.

 # Safety
 `model` must come from [`ls_model_open`] and not be used afterwards.
 */
void ls_model_free(struct LsModel *model);

/*
 Replaces the population guard thresholds used by [`ls_generate`].

 # Safety
 `model` must be a live handle.
 */
enum LsStatus ls_model_set_guards(struct LsModel *model,
                                  double min_fraction,
                                  uint32_t min_households);

/*
 Pointer to the NUL-terminated model version string, valid while the
 handle lives. Null if `model` is null.

 # Safety
 `model` must be a live handle or null.
 */
const char *ls_model_version(const struct LsModel *model);

/*
 Latent dimension of the loaded model, 0 if `model` is null.

 # Safety
 `model` must be a live handle or null.
 */
uint32_t ls_model_latent_dim(const struct LsModel *model);

/*
 Generates `count` profiles into `profiles` (row-major, `count * 48`
 doubles, `capacity` is its length in doubles). `labels` may be null;
 otherwise it must hold `count` entries. `attempts` may be null.

 # Safety
 All non-null pointers must be valid for the stated lengths.
 */
enum LsStatus ls_generate(const struct LsModel *model,
                          const struct LsCondition *condition,
                          uint32_t count,
                          uint64_t seed,
                          double *profiles,
                          size_t capacity,
                          struct LsLabels *labels,
                          uint64_t *attempts);

/*
 Copies the calling thread's last error message into `buf` (NUL-terminated,
 truncated to `len`) and returns the full message length excluding the NUL.

 # Safety
 `buf` must be valid for `len` bytes, or null with `len` 0.
 */
size_t ls_last_error_message(char *buf, size_t len);

/*
 Static description of a status code.
 */
const char *ls_status_str(enum LsStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOADSYNTH_H */
