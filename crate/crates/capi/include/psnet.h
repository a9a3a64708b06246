/* psnet C API: persistent-scatterer selection on interferogram stacks. */

#ifndef PSNET_H
#define PSNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every entry point.
enum PsnetStatus
#ifdef __cplusplus
  : int32_t
#endif // __cplusplus
 {
  PSNET_STATUS_OK = 0,
  PSNET_STATUS_INVALID_ARGUMENT = 1,
  PSNET_STATUS_FORMAT_ERROR = 2,
  PSNET_STATUS_IO_ERROR = 3,
  PSNET_STATUS_EMPTY_RESULT = 4,
  PSNET_STATUS_NUMERICAL_ERROR = 5,
  PSNET_STATUS_NULL_POINTER = 6,
  PSNET_STATUS_PANIC = 7,
};
#ifndef __cplusplus
typedef int32_t PsnetStatus;
#endif // __cplusplus

// Opaque PS mask handle.
typedef struct PsnetMask PsnetMask;

// Opaque trained-network handle.
typedef struct PsnetNetwork PsnetNetwork;

// Opaque interferogram stack handle.
typedef struct PsnetStack PsnetStack;

// Opaque scene-truth handle (land cover, per-pixel noise levels, DEM
// error and the true mask).
typedef struct PsnetTruth PsnetTruth;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *psnet_version(void);

// Human-readable name of a status code (static storage).
const char *psnet_status_name(int32_t status);

// Message of the most recent error on this thread. The pointer stays
// valid until the next failing call on the same thread.
const char *psnet_last_error_message(void);

// Wrap an angle to (−π, π]. NaN input yields NaN.
double psnet_wrap(double angle);

// Read an IFGSTACK1 file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid pointer.
PsnetStatus psnet_stack_read(const char *path, struct PsnetStack **out);

// Write a stack as IFGSTACK1.
//
// # Safety
// `stack` must be a live handle from this library; `path` NUL-terminated.
PsnetStatus psnet_stack_write(const struct PsnetStack *stack, const char *path);

// Stack extent: width, height, interferogram count. Null out-params are
// skipped.
//
// # Safety
// `stack` must be a live handle from this library.
PsnetStatus psnet_stack_dims(const struct PsnetStack *stack,
                             size_t *width,
                             size_t *height,
                             size_t *n_ifgs);

// # Safety
// `stack` must come from this library and not be freed twice.
void psnet_stack_free(struct PsnetStack *stack);

// Generate a synthetic truth-labelled scene from a JSON scene config
// (all fields optional). `out_truth` may be null when only the stack is
// needed.
//
// # Safety
// `config_json` must be NUL-terminated; out pointers valid or null as
// documented.
PsnetStatus psnet_scene_generate(const char *config_json,
                                 struct PsnetStack **out_stack,
                                 struct PsnetTruth **out_truth);

// True PS mask of a generated scene.
//
// # Safety
// `truth` must be a live handle; `out` valid.
PsnetStatus psnet_truth_mask(const struct PsnetTruth *truth, struct PsnetMask **out);

// # Safety
// `truth` must come from this library and not be freed twice.
void psnet_truth_free(struct PsnetTruth *truth);

// # Safety
// `path` NUL-terminated; `out` valid.
PsnetStatus psnet_mask_read(const char *path, struct PsnetMask **out);

// # Safety
// `mask` live handle; `path` NUL-terminated.
PsnetStatus psnet_mask_write(const struct PsnetMask *mask, const char *path);

// # Safety
// `mask` live handle; null out-params skipped.
PsnetStatus psnet_mask_dims(const struct PsnetMask *mask, size_t *width, size_t *height);

// Number of PS pixels.
//
// # Safety
// `mask` live handle; `out` valid.
PsnetStatus psnet_mask_count(const struct PsnetMask *mask, size_t *out);

// Copy the 0/1 labels row-major into `buf` (length `len` must equal
// width × height).
//
// # Safety
// `mask` live handle; `buf` must point to `len` writable bytes.
PsnetStatus psnet_mask_copy_labels(const struct PsnetMask *mask, uint8_t *buf, size_t len);

// # Safety
// `mask` must come from this library and not be freed twice.
void psnet_mask_free(struct PsnetMask *mask);

// Run the classical phase-stability selection. `config_json` may be null
// for defaults. Returns `EmptyResult` (with an all-false mask in `out`)
// when no pixel passes the amplitude-dispersion gate.
//
// # Safety
// `stack` live handle; `config_json` NUL-terminated or null; `out` valid.
PsnetStatus psnet_classical_run(const struct PsnetStack *stack,
                                const char *config_json,
                                struct PsnetMask **out);

// Load a PSNET1 checkpoint.
//
// # Safety
// `path` NUL-terminated; `out` valid.
PsnetStatus psnet_network_load(const char *path, struct PsnetNetwork **out);

// # Safety
// `network` must come from this library and not be freed twice.
void psnet_network_free(struct PsnetNetwork *network);

// Predict a PS mask over a full stack (chunk → forward → stitch). When
// `prob_out` is non-null it must hold width × height doubles and receives
// the stitched probability map.
//
// # Safety
// Handles must be live; `prob_out` null or sized as documented.
PsnetStatus psnet_predict(const struct PsnetNetwork *network,
                          const struct PsnetStack *stack,
                          struct PsnetMask **out_mask,
                          double *prob_out,
                          size_t prob_len);

// STIP count of one pixel with the default 5×25 window and 0.8 threshold.
//
// # Safety
// `stack` live handle; `out` valid.
PsnetStatus psnet_stip_count(const struct PsnetStack *stack, size_t row, size_t col, size_t *out);

// Comparison report over masks (overlaps, truth metrics when `truth` is
// non-null, STIP reliability), serialized as JSON. Free the string with
// `psnet_string_free`.
//
// # Safety
// `masks` must point to `n_masks` live mask handles; other handles live;
// `out_json` valid.
PsnetStatus psnet_eval_report_json(const struct PsnetStack *stack,
                                   const struct PsnetMask *const *masks,
                                   size_t n_masks,
                                   const struct PsnetMask *truth,
                                   char **out_json);

// Free a string returned by this library.
//
// # Safety
// `s` must come from this library and not be freed twice.
void psnet_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* PSNET_H */
