#include "secnn/kernels.hpp"

#include <algorithm>

namespace secnn::kernels {
namespace {

void gemm_scalar(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a,
                 std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    if (beta == 0.0f) {
      std::fill(crow, crow + n, 0.0f);
    } else if (beta != 1.0f) {
      for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (std::size_t p = 0; p < k; ++p) {
      const float av = trans_a ? a[p * lda + i] : a[i * lda + p];
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
      } else {
        const float* brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

float dot_scalar(const float* x, const float* y, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_scalar(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void leaky_forward_scalar(const float* x, float* y, std::size_t n, float slope) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] >= 0.0f ? x[i] : slope * x[i];
}

void leaky_backward_scalar(const float* x, const float* dy, float* dx, std::size_t n, float slope) {
  for (std::size_t i = 0; i < n; ++i) dx[i] += x[i] >= 0.0f ? dy[i] : slope * dy[i];
}

void accumulate_square_scalar(const float* g, float* acc, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) acc[i] += g[i] * g[i];
}

double natural_score_scalar(const float* g, const float* f, std::size_t n, float damping) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = g[i];
    s += gi * gi / (static_cast<double>(f[i]) + static_cast<double>(damping));
  }
  return s;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      Backend::Scalar,      gemm_scalar,           dot_scalar,
      axpy_scalar,          leaky_forward_scalar,  leaky_backward_scalar,
      accumulate_square_scalar, natural_score_scalar,
  };
  return table;
}

}  // namespace secnn::kernels
