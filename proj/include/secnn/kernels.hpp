#pragma once

#include <cstddef>
#include <string_view>

// Data-parallel inner loops used by the tensor ops. Every kernel has a scalar
// reference implementation; SIMD variants are selected at runtime and are
// tested for equivalence against the reference.
namespace secnn::kernels {

enum class Backend { Scalar, Avx2 };

std::string_view to_string(Backend backend);

struct KernelTable {
  Backend backend;

  // C[M x N] = beta * C + op(A)[M x K] * op(B)[K x N], all row-major.
  // op(A) = A^T when trans_a (A is then stored K x M), same for B.
  void (*gemm)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a,
               std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc);

  float (*dot)(const float* x, const float* y, std::size_t n);

  // y += alpha * x
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);

  // y = x >= 0 ? x : slope * x
  void (*leaky_relu_forward)(const float* x, float* y, std::size_t n, float slope);

  // dx += dy * (x >= 0 ? 1 : slope)
  void (*leaky_relu_backward)(const float* x, const float* dy, float* dx, std::size_t n, float slope);

  // acc += g * g
  void (*accumulate_square)(const float* g, float* acc, std::size_t n);

  // sum_i g_i^2 / (f_i + damping), accumulated in double
  double (*natural_score)(const float* g, const float* f, std::size_t n, float damping);
};

const KernelTable& scalar_table();

// nullptr when the variant was not compiled in or the CPU lacks the feature.
const KernelTable* table_for(Backend backend);

bool backend_available(Backend backend);

// Best available backend on first use.
const KernelTable& active();
Backend active_backend();

// Throws secnn::Error(InvalidArgument) when the backend is unavailable.
void set_backend(Backend backend);

}  // namespace secnn::kernels
