#ifndef DYNCODE_LENS_H
#define DYNCODE_LENS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Taint propagation policy for `dcl_trigger_count`.
 */
typedef enum {
  DCL_POLICY_DATA_ONLY = 0,
  DCL_POLICY_DATA_AND_CONTROL = 1,
} DclPolicy;

/**
 * Result codes.
 */
typedef enum {
  DCL_STATUS_OK = 0,
  DCL_STATUS_NULL_ARGUMENT = 1,
  DCL_STATUS_IO = 2,
  DCL_STATUS_PARSE = 3,
  DCL_STATUS_VALIDATION = 4,
  DCL_STATUS_OUT_OF_RANGE = 5,
  DCL_STATUS_ANALYSIS = 6,
  DCL_STATUS_NO_SOURCES = 7,
  DCL_STATUS_INVALID_ARGUMENT = 8,
  DCL_STATUS_PANIC = 9,
} DclStatus;

/**
 * A dynamic CFG built from a trace.
 */
typedef struct DclDcfg DclDcfg;

/**
 * A loaded trace.
 */
typedef struct DclTrace DclTrace;

/**
 * DCFG size metrics.
 */
typedef struct {
  size_t n_instrs;
  size_t n_blocks;
  size_t n_edges;
  size_t n_phases;
  size_t n_dyn_edges;
  size_t blocks_unshared;
  size_t blocks_shared;
  double shared_savings;
} DclDcfgStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next call into this library from the same thread.
 */
const char *dcl_last_error(void);

/**
 * Reads a JSONL trace file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
DclStatus dcl_trace_read_file(const char *path, DclTrace **out);

/**
 * Parses a JSONL trace from memory.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` be a valid pointer.
 */
DclStatus dcl_trace_read_buffer(const uint8_t *data, size_t len, DclTrace **out);

/**
 * Number of records, or 0 for NULL.
 *
 * # Safety
 * `trace` must be NULL or a live handle.
 */
size_t dcl_trace_len(const DclTrace *trace);

/**
 * # Safety
 * `trace` must be NULL or a handle not yet freed.
 */
void dcl_trace_free(DclTrace *trace);

/**
 * Builds the DCFG of `trace`.
 *
 * # Safety
 * `trace` must be a live handle and `out` a valid pointer.
 */
DclStatus dcl_dcfg_build(const DclTrace *trace, bool shared, DclDcfg **out);

/**
 * # Safety
 * `dcfg` must be a live handle and `out` a valid pointer.
 */
DclStatus dcl_dcfg_stats(const DclDcfg *dcfg, DclDcfgStats *out);

/**
 * Number of phases, or 0 for NULL.
 *
 * # Safety
 * `dcfg` must be NULL or a live handle.
 */
size_t dcl_dcfg_phase_count(const DclDcfg *dcfg);

/**
 * # Safety
 * `dcfg` must be NULL or a handle not yet freed.
 */
void dcl_dcfg_free(DclDcfg *dcfg);

/**
 * Backward slice from position `pos` with the default criterion. On
 * success `*positions` receives an ascending array of `*len` trace
 * positions, released with `dcl_positions_free`.
 *
 * # Safety
 * Handles must be live; `positions` and `len` must be valid pointers.
 */
DclStatus dcl_slice(const DclTrace *trace,
                    const DclDcfg *dcfg,
                    size_t pos,
                    bool use_codegen,
                    size_t **positions,
                    size_t *len);

/**
 * Releases an array returned by `dcl_slice`.
 *
 * # Safety
 * `positions` and `len` must come from one successful `dcl_slice` call.
 */
void dcl_positions_free(size_t *positions, size_t len);

/**
 * Number of trigger findings using the trace's taint-source records.
 *
 * # Safety
 * Handles must be live and `count` a valid pointer.
 */
DclStatus dcl_trigger_count(const DclTrace *trace,
                            const DclDcfg *dcfg,
                            DclPolicy policy,
                            size_t *count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYNCODE_LENS_H */
