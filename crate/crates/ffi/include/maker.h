#ifndef MAKER_H
#define MAKER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result codes.
typedef enum MakerStatus {
  MAKER_STATUS_OK = 0,
  // A required pointer argument was null.
  MAKER_STATUS_NULL_ARGUMENT = 1,
  // Bad configuration or a missing file.
  MAKER_STATUS_CONFIG = 2,
  // Invalid input values or lengths.
  MAKER_STATUS_INPUT = 3,
  // Malformed checkpoint or model files.
  MAKER_STATUS_FORMAT = 4,
  MAKER_STATUS_IO = 5,
  // A computation produced NaN or infinity.
  MAKER_STATUS_NON_FINITE = 6,
  // Internal error; see the message.
  MAKER_STATUS_INTERNAL = 7,
} MakerStatus;

// Opaque model handle.
typedef struct MakerModel MakerModel;

// One AIS report. `sog` in knots, `cog` in degrees `[0, 360)`.
typedef struct MakerRecord {
  int64_t timestamp;
  double lon;
  double lat;
  double sog;
  double cog;
} MakerRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *maker_version(void);

// Message of the last failure on this thread (empty if none). The pointer
// stays valid until the next failing call on this thread.
const char *maker_last_error(void);

// Loads a checkpoint written by `maker train`. On success `*out` owns a
// new handle.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MakerStatus maker_model_load(const char *path, struct MakerModel **out);

// Releases a handle; null is ignored.
//
// # Safety
// `model` must come from [`maker_model_load`] and not be used afterwards.
void maker_model_free(struct MakerModel *model);

// History length `h` and horizon `p` the model expects.
//
// # Safety
// `model` must be a live handle; `h` and `p` must be writable.
enum MakerStatus maker_model_dims(const struct MakerModel *model, size_t *h, size_t *p);

// Predicts `p` future positions from `h` history records. `out` receives
// `2·p` doubles: lon, lat of step 1, then step 2, and so on.
//
// # Safety
// `history` must point to `h` records, `future_timestamps` to `p` values
// and `out` to `2·p` writable doubles.
enum MakerStatus maker_model_predict(const struct MakerModel *model,
                                     const struct MakerRecord *history,
                                     size_t h,
                                     const int64_t *future_timestamps,
                                     size_t p,
                                     double *out);

// Constant-velocity extrapolation, same layout as [`maker_model_predict`].
//
// # Safety
// As for [`maker_model_predict`].
enum MakerStatus maker_constant_velocity(const struct MakerRecord *history,
                                         size_t h,
                                         const int64_t *future_timestamps,
                                         size_t p,
                                         double *out);

// Great-circle distance in metres between two (lon, lat) points in degrees.
double maker_haversine_m(double lon1, double lat1, double lon2, double lat2);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAKER_H */
