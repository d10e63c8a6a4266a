#ifndef NLILAB_H
#define NLILAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum NliStatus {
  NLI_STATUS_OK = 0,
  NLI_STATUS_NULL_POINTER = 1,
  NLI_STATUS_INPUT_SHAPE = 2,
  NLI_STATUS_INVALID_INPUT = 3,
  NLI_STATUS_FORMAT = 4,
  NLI_STATUS_NUMERICAL = 5,
  NLI_STATUS_IO = 6,
  NLI_STATUS_PANIC = 7,
} NliStatus;

// Opaque kernel tensor S on the cube [-M, M]^3.
typedef struct NliKernel NliKernel;

// Opaque LDPC code.
typedef struct NliLdpc NliLdpc;

typedef struct NliEffectiveSnr {
  double x_db;
  double y_db;
  double combined_db;
} NliEffectiveSnr;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or NULL.
//
// The string stays valid until the next failing call on the same thread.
const char *nli_last_error(void);

// All-zero kernel of memory `memory`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum NliStatus nli_kernel_zeros(size_t memory, struct NliKernel **out);

// Kernel from `(2M+1)^3` interleaved complex values ordered k-major, then l, then m.
//
// # Safety
// `values` must point to `2 * len` doubles and `out` to writable storage for one handle.
enum NliStatus nli_kernel_from_values(size_t memory,
                                      const double *values,
                                      size_t len,
                                      struct NliKernel **out);

// Reads a kernel file written by `nlilab kernels-analytic` or `nlilab train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` valid for one handle.
enum NliStatus nli_kernel_load(const char *path, struct NliKernel **out);

// Writes the kernel in the binary kernel format.
//
// # Safety
// `kernel` must be a live handle and `path` a NUL-terminated string.
enum NliStatus nli_kernel_save(const struct NliKernel *kernel, const char *path);

// Memory M of the kernel, or 0 for a null handle.
//
// # Safety
// `kernel` must be null or a live handle.
size_t nli_kernel_memory(const struct NliKernel *kernel);

// Number of complex coefficients, `(2M+1)^3`, or 0 for a null handle.
//
// # Safety
// `kernel` must be null or a live handle.
size_t nli_kernel_len(const struct NliKernel *kernel);

// Copies the coefficients into `out` as interleaved complex values.
//
// # Safety
// `kernel` must be a live handle and `out` must hold `2 * len` doubles.
enum NliStatus nli_kernel_values(const struct NliKernel *kernel, double *out, size_t len);

// # Safety
// `kernel` must be null or a handle not yet freed.
void nli_kernel_free(struct NliKernel *kernel);

// Perturbative NLI Δa of a periodic block of `n` dual-polarization symbols.
//
// # Safety
// `kernel` must be a live handle; every array must hold `2 * n` doubles.
enum NliStatus nli_frp_sequence(const struct NliKernel *kernel,
                                double gamma,
                                double es,
                                const double *a_x,
                                const double *a_y,
                                size_t n,
                                double *out_x,
                                double *out_y);

// ỹ = y − Δa(a) with Δa predicted from the transmitted symbols `a`.
//
// # Safety
// `kernel` must be a live handle; every array must hold `2 * n` doubles.
enum NliStatus nli_genie_cancel(const struct NliKernel *kernel,
                                double gamma,
                                double es,
                                const double *y_x,
                                const double *y_y,
                                const double *a_x,
                                const double *a_y,
                                size_t n,
                                double *out_x,
                                double *out_y);

// Effective SNR of received symbols against the transmitted reference.
//
// # Safety
// Every array must hold `2 * n` doubles and `out` must be writable.
enum NliStatus nli_effective_snr(const double *y_x,
                                 const double *y_y,
                                 const double *a_x,
                                 const double *a_y,
                                 size_t n,
                                 struct NliEffectiveSnr *out);

// The IEEE 802.11 length-648 rate-3/4 code.
//
// # Safety
// `out` must be valid for one handle.
enum NliStatus nli_ldpc_new(struct NliLdpc **out);

// Block length n, or 0 for a null handle.
//
// # Safety
// `code` must be null or a live handle.
size_t nli_ldpc_n(const struct NliLdpc *code);

// Information length k, or 0 for a null handle.
//
// # Safety
// `code` must be null or a live handle.
size_t nli_ldpc_k(const struct NliLdpc *code);

// Systematic encoding of `k` bits (one per byte, 0 or 1) into `n` bits.
//
// # Safety
// `code` must be a live handle, `info` must hold `info_len` bytes and `codeword` `codeword_len` bytes.
enum NliStatus nli_ldpc_encode(const struct NliLdpc *code,
                               const uint8_t *info,
                               size_t info_len,
                               uint8_t *codeword,
                               size_t codeword_len);

// Sum-product decoding of `n` LLRs, ln P(0)/P(1).
//
// Writes the `k` decoded information bits; `converged` and `iterations` may be null.
//
// # Safety
// `code` must be a live handle, `llrs` must hold `llr_len` doubles and `info` `info_len` bytes.
enum NliStatus nli_ldpc_decode(const struct NliLdpc *code,
                               const double *llrs,
                               size_t llr_len,
                               size_t max_iter,
                               uint8_t *info,
                               size_t info_len,
                               bool *converged,
                               size_t *iterations);

// # Safety
// `code` must be null or a handle not yet freed.
void nli_ldpc_free(struct NliLdpc *code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NLILAB_H */
