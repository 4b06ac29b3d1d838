#include "harlm/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace harlm::kernels {

namespace {

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

bool forced_scalar() noexcept {
  const char* env = std::getenv("HARLM_ISA");
  return env != nullptr && std::strcmp(env, "scalar") == 0;
}

std::atomic<Isa>& active() noexcept {
  static std::atomic<Isa> isa{detected_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  return isa == Isa::Avx2 ? "avx2" : "scalar";
}

bool isa_available(Isa isa) noexcept {
  static const bool avx2 = cpu_has_avx2();
  return isa == Isa::Scalar || avx2;
}

Isa detected_isa() noexcept {
  if (forced_scalar()) return Isa::Scalar;
  return isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

Isa active_isa() noexcept { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) noexcept {
  active().store(isa_available(isa) ? isa : Isa::Scalar, std::memory_order_relaxed);
}

#define HARLM_DISPATCH(fn, ...)                              \
  if (active_isa() == Isa::Avx2) return avx2::fn(__VA_ARGS__); \
  return ref::fn(__VA_ARGS__)

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc) {
  HARLM_DISPATCH(gemm, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

float dot(const float* x, const float* y, std::size_t n) { HARLM_DISPATCH(dot, x, y, n); }

void axpy(float alpha, const float* x, float* y, std::size_t n) { HARLM_DISPATCH(axpy, alpha, x, y, n); }

double sum_squares(const float* x, std::size_t n) { HARLM_DISPATCH(sum_squares, x, n); }

void softmax(float* x, std::size_t n) { HARLM_DISPATCH(softmax, x, n); }

void gelu(const float* x, float* y, std::size_t n) { HARLM_DISPATCH(gelu, x, y, n); }

void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n) {
  HARLM_DISPATCH(gelu_backward, x, dy, dx, n);
}

void adamw(float* param, const float* grad, float* m, float* v, std::size_t n,
           const ref::AdamWStep& s) {
  HARLM_DISPATCH(adamw, param, grad, m, v, n, s);
}

#undef HARLM_DISPATCH

}  // namespace harlm::kernels
