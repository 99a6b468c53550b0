#ifndef READOUT_TWIN_H
#define READOUT_TWIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum rt_backend {
  RT_BACKEND_FIXED = 0,
  RT_BACKEND_FLOAT = 1,
} rt_backend;

typedef enum rt_stage_kind {
  RT_STAGE_KIND_ACCUMULATOR = 0,
  RT_STAGE_KIND_QUARTER_RATE_SHIFT = 1,
  RT_STAGE_KIND_INTERPOLATE = 2,
  RT_STAGE_KIND_PHASOR_MODULATE = 3,
  RT_STAGE_KIND_DECIMATE = 4,
  RT_STAGE_KIND_BOXCAR_DECIMATE = 5,
} rt_stage_kind;

/**
 * Result codes.
 */
typedef enum rt_status {
  RT_STATUS_OK = 0,
  RT_STATUS_NULL_POINTER = 1,
  RT_STATUS_INVALID_ARGUMENT = 2,
  RT_STATUS_CONFIG = 3,
  RT_STATUS_NUMERIC = 4,
  RT_STATUS_IO = 5,
  RT_STATUS_BUFFER_TOO_SMALL = 6,
  RT_STATUS_PANIC = 7,
} rt_status;

/**
 * Opaque run configuration.
 */
typedef struct rt_config rt_config;

/**
 * Opaque closed-loop result.
 */
typedef struct rt_result rt_result;

/**
 * One chain stage; `param` is ignored for the quarter-rate shift.
 */
typedef struct rt_stage {
  enum rt_stage_kind kind;
  uint64_t param;
} rt_stage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *rt_last_error_message(void);

/**
 * Single tone at 15.26 MHz in band 6; modulus also sets the DDC window.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum rt_status rt_config_single_tone(uint32_t modulus, struct rt_config **out);

/**
 * Parses a TOML run configuration.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` as for
 * [`rt_config_single_tone`].
 */
enum rt_status rt_config_from_toml(const char *text, struct rt_config **out);

/**
 * # Safety
 * `cfg` must be a handle from this library.
 */
enum rt_status rt_config_set_backend(struct rt_config *cfg, enum rt_backend backend);

/**
 * Sets the number of DDC outputs per tone.
 *
 * # Safety
 * `cfg` must be a handle from this library.
 */
enum rt_status rt_config_set_duration(struct rt_config *cfg, size_t duration);

/**
 * # Safety
 * `cfg` must be a handle from this library.
 */
enum rt_status rt_config_set_ddc_window(struct rt_config *cfg, uint32_t window);

/**
 * Sets the Welch segment length of the noise PSDs.
 *
 * # Safety
 * `cfg` must be a handle from this library.
 */
enum rt_status rt_config_set_psd_segment(struct rt_config *cfg, size_t seg_len);

/**
 * # Safety
 * `cfg` must be null or a handle from this library not yet freed.
 */
void rt_config_free(struct rt_config *cfg);

/**
 * Runs the closed loop.
 *
 * # Safety
 * `cfg` must be a handle from this library; `out` must be writable.
 */
enum rt_status rt_run_closed_loop(const struct rt_config *cfg, struct rt_result **out);

/**
 * # Safety
 * `res` must be null or a handle from this library not yet freed.
 */
void rt_result_free(struct rt_result *res);

/**
 * # Safety
 * `res` must be a handle from this library; `count` must be writable.
 */
enum rt_status rt_result_tone_count(const struct rt_result *res, size_t *count);

/**
 * Number of DDC output samples of a tone and their rate in Hz.
 *
 * # Safety
 * `res` must be a handle from this library; `len` and `rate` must be
 * writable.
 */
enum rt_status rt_result_ddc_info(const struct rt_result *res,
                                  size_t tone,
                                  size_t *len,
                                  double *rate);

/**
 * Copies a tone's DDC output into `i` and `q`, each of capacity `cap`.
 *
 * # Safety
 * `i` and `q` must point to `cap` writable doubles.
 */
enum rt_status rt_result_ddc_copy(const struct rt_result *res,
                                  size_t tone,
                                  double *i,
                                  double *q,
                                  size_t cap);

/**
 * Spurs detected in a tone's amplitude PSD, strongest first. Writes up to
 * `cap` frequency/prominence pairs and the total count to `count`.
 *
 * # Safety
 * `freq` and `prominence_db` must point to `cap` writable doubles (may be
 * null when `cap` is 0); `count` must be writable.
 */
enum rt_status rt_result_amp_spurs(const struct rt_result *res,
                                   size_t tone,
                                   double *freq,
                                   double *prominence_db,
                                   size_t cap,
                                   size_t *count);

/**
 * Writes CSVs and the manifest into `dir`.
 *
 * # Safety
 * `res` must be a handle from this library; `dir` a NUL-terminated path.
 */
enum rt_status rt_result_export(const struct rt_result *res, const char *dir);

/**
 * Period after a chain of `n` stages.
 *
 * # Safety
 * `stages` must point to `n` stages; `period` must be writable.
 */
enum rt_status rt_predict_period(const struct rt_stage *stages, size_t n, uint64_t *period);

/**
 * Predicted DDC spur lines in Hz. Writes up to `cap` lines and the total
 * count to `count`.
 *
 * # Safety
 * `lines` must point to `cap` writable doubles (may be null when `cap` is
 * 0); `count` must be writable.
 */
enum rt_status rt_spur_frequency_prediction(uint64_t modulus,
                                            uint64_t window_len,
                                            uint64_t phasor_period,
                                            uint64_t interp,
                                            double rate,
                                            double *lines,
                                            size_t cap,
                                            size_t *count);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rt_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* READOUT_TWIN_H */
