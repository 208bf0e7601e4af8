// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after a runtime CPU check (see dispatch.cpp).
#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "secnn/kernels.hpp"

namespace secnn::kernels {
namespace {

constexpr std::size_t kRows = 4;
constexpr std::size_t kCols = 16;

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d high64 = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
}

// Packed A: [ceil(m/4)][k][4], zero padded rows.
void pack_a(bool trans, std::size_t m, std::size_t k, const float* a, std::size_t lda, float* out) {
  const std::size_t blocks = (m + kRows - 1) / kRows;
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    float* dst = out + blk * k * kRows;
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t r = 0; r < kRows; ++r) {
        const std::size_t i = blk * kRows + r;
        dst[p * kRows + r] = i < m ? (trans ? a[p * lda + i] : a[i * lda + p]) : 0.0f;
      }
    }
  }
}

// Packed B: [ceil(n/16)][k][16], zero padded columns.
void pack_b(bool trans, std::size_t n, std::size_t k, const float* b, std::size_t ldb, float* out) {
  const std::size_t strips = (n + kCols - 1) / kCols;
  for (std::size_t s = 0; s < strips; ++s) {
    float* dst = out + s * k * kCols;
    const std::size_t j0 = s * kCols;
    const std::size_t width = std::min(kCols, n - j0);
    for (std::size_t p = 0; p < k; ++p) {
      float* row = dst + p * kCols;
      if (!trans && width == kCols) {
        std::copy_n(b + p * ldb + j0, kCols, row);
        continue;
      }
      for (std::size_t c = 0; c < kCols; ++c) {
        const std::size_t j = j0 + c;
        row[c] = c < width ? (trans ? b[j * ldb + p] : b[p * ldb + j]) : 0.0f;
      }
    }
  }
}

void gemm_avx2(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a,
               std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    if (beta == 0.0f) {
      std::fill(crow, crow + n, 0.0f);
    } else if (beta != 1.0f) {
      for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (k == 0 || m == 0 || n == 0) return;

  thread_local std::vector<float> packed_a;
  thread_local std::vector<float> packed_b;
  const std::size_t row_blocks = (m + kRows - 1) / kRows;
  const std::size_t strips = (n + kCols - 1) / kCols;
  packed_a.resize(row_blocks * k * kRows);
  packed_b.resize(strips * k * kCols);
  pack_a(trans_a, m, k, a, lda, packed_a.data());
  pack_b(trans_b, n, k, b, ldb, packed_b.data());

  alignas(32) float tile[kRows][kCols];
  for (std::size_t s = 0; s < strips; ++s) {
    const float* bp = packed_b.data() + s * k * kCols;
    const std::size_t j0 = s * kCols;
    const std::size_t width = std::min(kCols, n - j0);
    for (std::size_t blk = 0; blk < row_blocks; ++blk) {
      const float* ap = packed_a.data() + blk * k * kRows;
      __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
      __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
      __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
      __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256 b0 = _mm256_loadu_ps(bp + p * kCols);
        const __m256 b1 = _mm256_loadu_ps(bp + p * kCols + 8);
        const float* av = ap + p * kRows;
        __m256 a0 = _mm256_broadcast_ss(av + 0);
        c00 = _mm256_fmadd_ps(a0, b0, c00);
        c01 = _mm256_fmadd_ps(a0, b1, c01);
        __m256 a1 = _mm256_broadcast_ss(av + 1);
        c10 = _mm256_fmadd_ps(a1, b0, c10);
        c11 = _mm256_fmadd_ps(a1, b1, c11);
        __m256 a2 = _mm256_broadcast_ss(av + 2);
        c20 = _mm256_fmadd_ps(a2, b0, c20);
        c21 = _mm256_fmadd_ps(a2, b1, c21);
        __m256 a3 = _mm256_broadcast_ss(av + 3);
        c30 = _mm256_fmadd_ps(a3, b0, c30);
        c31 = _mm256_fmadd_ps(a3, b1, c31);
      }
      _mm256_store_ps(tile[0], c00);
      _mm256_store_ps(tile[0] + 8, c01);
      _mm256_store_ps(tile[1], c10);
      _mm256_store_ps(tile[1] + 8, c11);
      _mm256_store_ps(tile[2], c20);
      _mm256_store_ps(tile[2] + 8, c21);
      _mm256_store_ps(tile[3], c30);
      _mm256_store_ps(tile[3] + 8, c31);
      const std::size_t rows = std::min(kRows, m - blk * kRows);
      for (std::size_t r = 0; r < rows; ++r) {
        float* crow = c + (blk * kRows + r) * ldc + j0;
        if (width == kCols) {
          _mm256_storeu_ps(crow, _mm256_add_ps(_mm256_loadu_ps(crow), _mm256_load_ps(tile[r])));
          _mm256_storeu_ps(crow + 8, _mm256_add_ps(_mm256_loadu_ps(crow + 8), _mm256_load_ps(tile[r] + 8)));
        } else {
          for (std::size_t col = 0; col < width; ++col) crow[col] += tile[r][col];
        }
      }
    }
  }
}

float dot_avx2(const float* x, const float* y, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
  float s = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_avx2(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void leaky_forward_avx2(const float* x, float* y, std::size_t n, float slope) {
  const __m256 sv = _mm256_set1_ps(slope);
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 neg = _mm256_cmp_ps(v, zero, _CMP_LT_OQ);
    _mm256_storeu_ps(y + i, _mm256_blendv_ps(v, _mm256_mul_ps(v, sv), neg));
  }
  for (; i < n; ++i) y[i] = x[i] >= 0.0f ? x[i] : slope * x[i];
}

void leaky_backward_avx2(const float* x, const float* dy, float* dx, std::size_t n, float slope) {
  const __m256 sv = _mm256_set1_ps(slope);
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 neg = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_LT_OQ);
    const __m256 scale = _mm256_blendv_ps(one, sv, neg);
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), _mm256_mul_ps(_mm256_loadu_ps(dy + i), scale)));
  }
  for (; i < n; ++i) dx[i] += x[i] >= 0.0f ? dy[i] : slope * dy[i];
}

void accumulate_square_avx2(const float* g, float* acc, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(g + i);
    _mm256_storeu_ps(acc + i, _mm256_fmadd_ps(v, v, _mm256_loadu_ps(acc + i)));
  }
  for (; i < n; ++i) acc[i] += g[i] * g[i];
}

double natural_score_avx2(const float* g, const float* f, std::size_t n, float damping) {
  const __m256d dv = _mm256_set1_pd(static_cast<double>(damping));
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gv = _mm256_cvtps_pd(_mm_loadu_ps(g + i));
    const __m256d fv = _mm256_add_pd(_mm256_cvtps_pd(_mm_loadu_ps(f + i)), dv);
    acc = _mm256_add_pd(acc, _mm256_div_pd(_mm256_mul_pd(gv, gv), fv));
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double gi = g[i];
    s += gi * gi / (static_cast<double>(f[i]) + static_cast<double>(damping));
  }
  return s;
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{
      Backend::Avx2,    gemm_avx2,          dot_avx2,
      axpy_avx2,        leaky_forward_avx2, leaky_backward_avx2,
      accumulate_square_avx2, natural_score_avx2,
  };
  return table;
}

}  // namespace secnn::kernels
