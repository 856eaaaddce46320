#ifndef QRESET_H
#define QRESET_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Restart protocol family.
 */
typedef enum QresetProtocolKind {
  QRESET_PROTOCOL_KIND_IPR = 0,
  QRESET_PROTOCOL_KIND_MPR = 1,
  QRESET_PROTOCOL_KIND_ADAPTIVE_MPR = 2,
} QresetProtocolKind;

/**
 * Result code of every exported function.
 */
typedef enum QresetStatus {
  QRESET_STATUS_OK = 0,
  QRESET_STATUS_NULL_POINTER = 1,
  QRESET_STATUS_INPUT_DOMAIN = 2,
  QRESET_STATUS_PARAMETER = 3,
  QRESET_STATUS_LENGTH = 4,
  QRESET_STATUS_DIVERGENT = 5,
  QRESET_STATUS_FIT = 6,
  QRESET_STATUS_BUDGET = 7,
  QRESET_STATUS_PANIC = 8,
} QresetStatus;

/**
 * Opaque restart kernel bound to one protocol, schedule and geometry.
 */
typedef struct QresetKernel QresetKernel;

/**
 * Protocol parameters. Fields not used by `kind` are ignored.
 */
typedef struct QresetProtocol {
  enum QresetProtocolKind kind;
  /**
   * Right-hop probability for MPR.
   */
  double p;
  double p_initial;
  double p_final;
  /**
   * Switch point of the adaptive protocol; 0 picks it automatically.
   */
  size_t rc;
} QresetProtocol;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf`, NUL-terminated
 * and truncated to `cap` bytes. Returns the full message length plus one,
 * or 0 when no error has been recorded.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t qreset_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qreset_version(void);

/**
 * `J_n(x)` for `n >= 0`, `x >= 0`.
 *
 * # Safety
 * `out` must be null or valid for one write.
 */
enum QresetStatus qreset_bessel_j(int32_t n, double x, double *out);

/**
 * Most probable hop length after free evolution for `t_r`.
 *
 * # Safety
 * `out` must be null or valid for one write.
 */
enum QresetStatus qreset_peak_offset(double t_r, uint64_t *out);

/**
 * Automatic switch point of the adaptive protocol.
 *
 * # Safety
 * `out` must be null or valid for one write.
 */
enum QresetStatus qreset_rc_default(int64_t distance,
                                    uint64_t delta_offset,
                                    double p_initial,
                                    size_t *out);

/**
 * Builds a restart kernel. Release it with [`qreset_kernel_free`].
 *
 * # Safety
 * `protocol` must be null or point to a valid `QresetProtocol` whose `kind` is
 * one of the declared enumerators; `out` must be
 * null or valid for one write.
 */
enum QresetStatus qreset_kernel_new(const struct QresetProtocol *protocol,
                                    size_t r,
                                    double tau,
                                    int64_t delta,
                                    int64_t x0,
                                    struct QresetKernel **out);

/**
 * Releases a kernel. Null is ignored.
 *
 * # Safety
 * `kernel` must be null or a pointer from [`qreset_kernel_new`] not yet freed.
 */
void qreset_kernel_free(struct QresetKernel *kernel);

/**
 * Peak offset `Δ` the kernel hops by.
 *
 * # Safety
 * `kernel` must come from [`qreset_kernel_new`]; `out` must be valid for one write.
 */
enum QresetStatus qreset_kernel_delta_offset(const struct QresetKernel *kernel, uint64_t *out);

/**
 * Writes `F_n`, `P_det(n)` and `S_n` for `n = 1..=len`. Any of the three
 * buffers may be null to skip it; non-null buffers hold `len` doubles.
 *
 * # Safety
 * `kernel` must come from [`qreset_kernel_new`]; each non-null buffer must be
 * valid for `len` writes.
 */
enum QresetStatus qreset_kernel_series(const struct QresetKernel *kernel,
                                       size_t len,
                                       double *f,
                                       double *p_det,
                                       double *survival);

/**
 * Mean first-detection time with the default horizon policy.
 *
 * `stable` (nullable) receives 1 when the extrapolation is insensitive to
 * the fit degree, 0 otherwise. A divergent mean returns
 * `QRESET_STATUS_DIVERGENT`.
 *
 * # Safety
 * `kernel` must come from [`qreset_kernel_new`]; `mean` must be valid for one
 * write; `stable` must be null or valid for one write.
 */
enum QresetStatus qreset_kernel_mean_fdt(const struct QresetKernel *kernel,
                                         double *mean,
                                         int32_t *stable);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QRESET_H */
