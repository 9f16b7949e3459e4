#ifndef TANDEMNET_H
#define TANDEMNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum TnStatus {
  TN_STATUS_OK = 0,
  TN_STATUS_NULL_POINTER = 1,
  TN_STATUS_INVALID_ARGUMENT = 2,
  TN_STATUS_IO = 3,
  /**
   * Corrupt, truncated or unsupported checkpoint or data.
   */
  TN_STATUS_FORMAT = 4,
  TN_STATUS_SHAPE = 5,
  TN_STATUS_NUMERIC = 6,
  TN_STATUS_STATE = 7,
  TN_STATUS_PANIC = 8,
} TnStatus;

/**
 * Opaque network handle.
 */
typedef struct TnNetwork TnNetwork;

/**
 * Synaptic operation totals per input sample.
 */
typedef struct TnSynops {
  double snn_total;
  uint64_t ann_total;
  double ratio;
} TnSynops;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread. Never null; valid
 * until the next call on this thread.
 */
const char *tn_last_error(void);

/**
 * Library version as a NUL-terminated string.
 */
const char *tn_version(void);

/**
 * Loads a checkpoint. On success `*out` owns a handle to release with
 * [`tn_network_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum TnStatus tn_network_load(const char *path, struct TnNetwork **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `net` must come from [`tn_network_load`] and not be used afterwards.
 */
void tn_network_free(struct TnNetwork *net);

/**
 * Input features, output units and window size of a network.
 *
 * # Safety
 * `net` must be a live handle; each out pointer may be null.
 */
enum TnStatus tn_network_dims(const struct TnNetwork *net,
                              size_t *inputs,
                              size_t *outputs,
                              size_t *window);

/**
 * Changes the simulation window.
 *
 * # Safety
 * `net` must be a live handle not used concurrently.
 */
enum TnStatus tn_network_set_window(struct TnNetwork *net, size_t window);

/**
 * Spiking inference. Writes `batch × outputs` decoded scores to `out`,
 * whose capacity is `out_len` doubles.
 *
 * # Safety
 * `input` must hold `batch × features` doubles and `out` `out_len` doubles.
 */
enum TnStatus tn_network_infer(const struct TnNetwork *net,
                               const double *input,
                               size_t batch,
                               size_t features,
                               double *out,
                               size_t out_len);

/**
 * Spiking inference followed by argmax; writes `batch` class indices.
 *
 * # Safety
 * `input` must hold `batch × features` doubles and `classes` `batch` slots.
 */
enum TnStatus tn_network_classify(const struct TnNetwork *net,
                                  const double *input,
                                  size_t batch,
                                  size_t features,
                                  size_t *classes);

/**
 * Synaptic operations of the spiking network on a batch.
 *
 * # Safety
 * `input` must hold `batch × features` doubles; `out` must be writable.
 */
enum TnStatus tn_network_synops(const struct TnNetwork *net,
                                const double *input,
                                size_t batch,
                                size_t features,
                                struct TnSynops *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TANDEMNET_H */
