#pragma once

// Dense compute kernels behind the autodiff ops.
//
// Every kernel in `meses::kernels` has a serial twin in `meses::kernels::ref`.
// The parallel versions split work only across independent output rows or
// groups and keep the per-element accumulation order of the serial code, so
// both produce bitwise identical results for any thread count. Tests and the
// benchmark target compare the two.

#include <cstddef>
#include <cstdint>
#include <span>

namespace meses::kernels {

/// C[n x m] (+)= A[n x k] * B[k x m]
void gemm(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
          bool accumulate);
/// C[n x m] (+)= A[n x k] * B^T, B stored [m x k]
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate);
/// C[k x m] (+)= A^T * B, A stored [n x k], B stored [n x m]
void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate);

/// Shape of a batched multi-head attention call. Groups are independent
/// attention problems; each has `nq` query rows and `nk` key/value rows of
/// width `heads * head_dim`.
struct AttentionDims {
  std::size_t groups = 0;
  std::size_t nq = 0;
  std::size_t nk = 0;
  std::size_t heads = 1;
  std::size_t head_dim = 0;
  std::size_t width() const { return heads * head_dim; }
};

/// Scaled dot-product attention with a key-padding mask (`key_masked[g*nk+j]`
/// non-zero hides key j of group g). Masked keys are skipped entirely, so their
/// values cannot influence the output bitwise. Every query row must have at
/// least one unmasked key. `probs` receives (groups, heads, nq, nk).
void attention_forward(const AttentionDims& d, const double* q, const double* k, const double* v,
                       const std::uint8_t* key_masked, double* out, double* probs);

/// Accumulates gradients of attention_forward into dq, dk, dv.
void attention_backward(const AttentionDims& d, const double* q, const double* k, const double* v,
                        const std::uint8_t* key_masked, const double* probs, const double* dout, double* dq,
                        double* dk, double* dv);

/// Row-wise layer normalization over `cols`, storing per-row mean and inverse std.
void layer_norm_forward(const double* x, const double* gamma, const double* beta, double* y, double* mean,
                        double* rstd, std::size_t rows, std::size_t cols, double eps);

namespace ref {
void gemm(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
          bool accumulate);
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate);
void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate);
void attention_forward(const AttentionDims& d, const double* q, const double* k, const double* v,
                       const std::uint8_t* key_masked, double* out, double* probs);
void attention_backward(const AttentionDims& d, const double* q, const double* k, const double* v,
                        const std::uint8_t* key_masked, const double* probs, const double* dout, double* dq,
                        double* dk, double* dv);
void layer_norm_forward(const double* x, const double* gamma, const double* beta, double* y, double* mean,
                        double* rstd, std::size_t rows, std::size_t cols, double eps);
}  // namespace ref

/// Caps the OpenMP worker count (reads MESES_THREADS when n == 0).
void set_num_threads(int n);
int num_threads();

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS on every step. Call once at process start.
void tune_allocator();

}  // namespace meses::kernels
