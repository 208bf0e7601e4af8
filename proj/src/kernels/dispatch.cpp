#include <atomic>

#include "secnn/errors.hpp"
#include "secnn/kernels.hpp"

namespace secnn::kernels {

#if defined(SECNN_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(SECNN_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* best_table() {
  if (const KernelTable* t = table_for(Backend::Avx2)) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{best_table()};
  return table;
}

}  // namespace

std::string_view to_string(Backend backend) {
  switch (backend) {
    case Backend::Scalar: return "scalar";
    case Backend::Avx2: return "avx2";
  }
  return "unknown";
}

const KernelTable* table_for(Backend backend) {
  switch (backend) {
    case Backend::Scalar: return &scalar_table();
    case Backend::Avx2:
#if defined(SECNN_HAVE_AVX2)
      if (cpu_has_avx2()) return &avx2_table();
#endif
      return nullptr;
  }
  return nullptr;
}

bool backend_available(Backend backend) { return table_for(backend) != nullptr; }

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

Backend active_backend() { return active().backend; }

void set_backend(Backend backend) {
  const KernelTable* t = table_for(backend);
  if (t == nullptr) fail(ErrorCode::InvalidArgument, "kernel backend unavailable: " + std::string(to_string(backend)));
  current().store(t, std::memory_order_relaxed);
}

}  // namespace secnn::kernels
