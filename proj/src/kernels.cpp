#include "meses/kernels.hpp"

#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace meses::kernels {
namespace {

// Per-row / per-group bodies shared by the parallel and serial drivers.

inline void gemm_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k, std::size_t m,
                     bool accumulate) {
  double* crow = c + i * m;
  if (!accumulate) std::fill(crow, crow + m, 0.0);
  const double* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    if (av == 0.0) continue;
    const double* brow = b + p * m;
    for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
  }
}

inline void gemm_nt_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k, std::size_t m,
                        bool accumulate) {
  const double* arow = a + i * k;
  double* crow = c + i * m;
  for (std::size_t j = 0; j < m; ++j) {
    const double* brow = b + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
    crow[j] = accumulate ? crow[j] + s : s;
  }
}

inline void gemm_tn_row(const double* a, const double* b, double* c, std::size_t p, std::size_t n, std::size_t k,
                        std::size_t m, bool accumulate) {
  double* crow = c + p * m;
  if (!accumulate) std::fill(crow, crow + m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double av = a[i * k + p];
    if (av == 0.0) continue;
    const double* brow = b + i * m;
    for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
  }
}

inline void attention_group_fwd(const AttentionDims& d, std::size_t g, const double* q, const double* k,
                                const double* v, const std::uint8_t* key_masked, double* out, double* probs) {
  const std::size_t w = d.width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d.head_dim));
  const std::uint8_t* mask = key_masked ? key_masked + g * d.nk : nullptr;
  for (std::size_t h = 0; h < d.heads; ++h) {
    const std::size_t off = h * d.head_dim;
    for (std::size_t i = 0; i < d.nq; ++i) {
      const double* qrow = q + (g * d.nq + i) * w + off;
      double* prow = probs + ((g * d.heads + h) * d.nq + i) * d.nk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < d.nk; ++j) {
        if (mask && mask[j]) {
          prow[j] = 0.0;
          continue;
        }
        const double* krow = k + (g * d.nk + j) * w + off;
        double s = 0.0;
        for (std::size_t c = 0; c < d.head_dim; ++c) s += qrow[c] * krow[c];
        s *= scale;
        prow[j] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < d.nk; ++j) {
        if (mask && mask[j]) continue;
        prow[j] = std::exp(prow[j] - mx);
        z += prow[j];
      }
      double* orow = out + (g * d.nq + i) * w + off;
      std::fill(orow, orow + d.head_dim, 0.0);
      for (std::size_t j = 0; j < d.nk; ++j) {
        if (mask && mask[j]) continue;
        prow[j] /= z;
        const double* vrow = v + (g * d.nk + j) * w + off;
        for (std::size_t c = 0; c < d.head_dim; ++c) orow[c] += prow[j] * vrow[c];
      }
    }
  }
}

inline void attention_group_bwd(const AttentionDims& d, std::size_t g, const double* q, const double* k,
                                const double* v, const std::uint8_t* key_masked, const double* probs,
                                const double* dout, double* dq, double* dk, double* dv, double* scratch) {
  const std::size_t w = d.width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d.head_dim));
  const std::uint8_t* mask = key_masked ? key_masked + g * d.nk : nullptr;
  for (std::size_t h = 0; h < d.heads; ++h) {
    const std::size_t off = h * d.head_dim;
    for (std::size_t i = 0; i < d.nq; ++i) {
      const double* prow = probs + ((g * d.heads + h) * d.nq + i) * d.nk;
      const double* dorow = dout + (g * d.nq + i) * w + off;
      double dot = 0.0;
      for (std::size_t j = 0; j < d.nk; ++j) {
        if (mask && mask[j]) continue;
        const double* vrow = v + (g * d.nk + j) * w + off;
        double dp = 0.0;
        for (std::size_t c = 0; c < d.head_dim; ++c) dp += dorow[c] * vrow[c];
        scratch[j] = dp;
        dot += dp * prow[j];
        double* dvrow = dv + (g * d.nk + j) * w + off;
        for (std::size_t c = 0; c < d.head_dim; ++c) dvrow[c] += prow[j] * dorow[c];
      }
      const double* qrow = q + (g * d.nq + i) * w + off;
      double* dqrow = dq + (g * d.nq + i) * w + off;
      for (std::size_t j = 0; j < d.nk; ++j) {
        if (mask && mask[j]) continue;
        const double ds = prow[j] * (scratch[j] - dot) * scale;
        const double* krow = k + (g * d.nk + j) * w + off;
        double* dkrow = dk + (g * d.nk + j) * w + off;
        for (std::size_t c = 0; c < d.head_dim; ++c) {
          dqrow[c] += ds * krow[c];
          dkrow[c] += ds * qrow[c];
        }
      }
    }
  }
}

inline void layer_norm_row(const double* x, const double* gamma, const double* beta, double* y, double* mean,
                           double* rstd, std::size_t r, std::size_t cols, double eps) {
  const double* xr = x + r * cols;
  double* yr = y + r * cols;
  double mu = 0.0;
  for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
  mu /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
  var /= static_cast<double>(cols);
  const double rs = 1.0 / std::sqrt(var + eps);
  for (std::size_t c = 0; c < cols; ++c) yr[c] = (xr[c] - mu) * rs * gamma[c] + beta[c];
  mean[r] = mu;
  rstd[r] = rs;
}

using Index = std::ptrdiff_t;

}  // namespace

void gemm(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
          bool accumulate) {
#pragma omp parallel for schedule(static) if (n * k * m > 32768)
  for (Index i = 0; i < static_cast<Index>(n); ++i) gemm_row(a, b, c, static_cast<std::size_t>(i), k, m, accumulate);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate) {
#pragma omp parallel for schedule(static) if (n * k * m > 32768)
  for (Index i = 0; i < static_cast<Index>(n); ++i)
    gemm_nt_row(a, b, c, static_cast<std::size_t>(i), k, m, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate) {
#pragma omp parallel for schedule(static) if (n * k * m > 32768)
  for (Index p = 0; p < static_cast<Index>(k); ++p)
    gemm_tn_row(a, b, c, static_cast<std::size_t>(p), n, k, m, accumulate);
}

void attention_forward(const AttentionDims& d, const double* q, const double* k, const double* v,
                       const std::uint8_t* key_masked, double* out, double* probs) {
#pragma omp parallel for schedule(static) if (d.groups > 16)
  for (Index g = 0; g < static_cast<Index>(d.groups); ++g)
    attention_group_fwd(d, static_cast<std::size_t>(g), q, k, v, key_masked, out, probs);
}

void attention_backward(const AttentionDims& d, const double* q, const double* k, const double* v,
                        const std::uint8_t* key_masked, const double* probs, const double* dout, double* dq,
                        double* dk, double* dv) {
#pragma omp parallel if (d.groups > 16)
  {
    std::vector<double> scratch(d.nk);
#pragma omp for schedule(static)
    for (Index g = 0; g < static_cast<Index>(d.groups); ++g)
      attention_group_bwd(d, static_cast<std::size_t>(g), q, k, v, key_masked, probs, dout, dq, dk, dv,
                          scratch.data());
  }
}

void layer_norm_forward(const double* x, const double* gamma, const double* beta, double* y, double* mean,
                        double* rstd, std::size_t rows, std::size_t cols, double eps) {
#pragma omp parallel for schedule(static) if (rows * cols > 32768)
  for (Index r = 0; r < static_cast<Index>(rows); ++r)
    layer_norm_row(x, gamma, beta, y, mean, rstd, static_cast<std::size_t>(r), cols, eps);
}

namespace ref {

void gemm(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
          bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) gemm_row(a, b, c, i, k, m, accumulate);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) gemm_nt_row(a, b, c, i, k, m, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate) {
  for (std::size_t p = 0; p < k; ++p) gemm_tn_row(a, b, c, p, n, k, m, accumulate);
}

void attention_forward(const AttentionDims& d, const double* q, const double* k, const double* v,
                       const std::uint8_t* key_masked, double* out, double* probs) {
  for (std::size_t g = 0; g < d.groups; ++g) attention_group_fwd(d, g, q, k, v, key_masked, out, probs);
}

void attention_backward(const AttentionDims& d, const double* q, const double* k, const double* v,
                        const std::uint8_t* key_masked, const double* probs, const double* dout, double* dq,
                        double* dk, double* dv) {
  std::vector<double> scratch(d.nk);
  for (std::size_t g = 0; g < d.groups; ++g)
    attention_group_bwd(d, g, q, k, v, key_masked, probs, dout, dq, dk, dv, scratch.data());
}

void layer_norm_forward(const double* x, const double* gamma, const double* beta, double* y, double* mean,
                        double* rstd, std::size_t rows, std::size_t cols, double eps) {
  for (std::size_t r = 0; r < rows; ++r) layer_norm_row(x, gamma, beta, y, mean, rstd, r, cols, eps);
}

}  // namespace ref

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
}

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n <= 0) {
    if (const char* env = std::getenv("MESES_THREADS")) n = std::atoi(env);
  }
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace meses::kernels
