#pragma once

// Dense arithmetic kernels used by the transformer.
//
// Every kernel has a portable scalar reference (namespace ref, templated so
// the double-precision gradient check can use it) and, for float, an AVX2+FMA
// variant selected at runtime from CPUID. Matrices are row-major with an
// explicit leading dimension.

#include <cmath>
#include <cstddef>
#include <string_view>

namespace harlm::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa) noexcept;

// Best ISA this CPU supports (HARLM_ISA=scalar in the environment forces Scalar).
Isa detected_isa() noexcept;
// ISA the dispatching entry points use; defaults to detected_isa().
Isa active_isa() noexcept;
// Forces an ISA, e.g. to compare variants. Requests the CPU cannot run fall back to Scalar.
void set_active_isa(Isa isa) noexcept;
bool isa_available(Isa isa) noexcept;

enum class Trans { No, Yes };

namespace ref {

// C = alpha * op(A) * op(B) + beta * C, op(A) is M x K, op(B) is K x N.
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ta == Trans::No ? a[i * lda + p] : a[p * lda + i];
        const T bv = tb == Trans::No ? b[p * ldb + j] : b[j * ldb + p];
        acc += av * bv;
      }
      T& out = c[i * ldc + j];
      out = beta == T(0) ? alpha * acc : alpha * acc + beta * out;
    }
  }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

// y += alpha * x
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
double sum_squares(const T* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]) * static_cast<double>(x[i]);
  return acc;
}

// Numerically stable softmax in place.
template <typename T>
void softmax(T* x, std::size_t n) {
  if (n == 0) return;
  T mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = x[i] > mx ? x[i] : mx;
  T sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  const T inv = T(1) / sum;
  for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

inline constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
inline constexpr double kGeluCubic = 0.044715;

// tanh-form GELU, as in the GPT-2 family.
template <typename T>
void gelu(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x[i];
    const T u = T(kGeluScale) * (v + T(kGeluCubic) * v * v * v);
    y[i] = T(0.5) * v * (T(1) + std::tanh(u));
  }
}

// dx = dy * gelu'(x)
template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x[i];
    const T u = T(kGeluScale) * (v + T(kGeluCubic) * v * v * v);
    const T th = std::tanh(u);
    const T du = T(kGeluScale) * (T(1) + T(3 * kGeluCubic) * v * v);
    dx[i] = dy[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du);
  }
}

struct AdamWStep {
  double lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // already zero for non-decayed tensors
  double bias_correction1 = 1.0;  // 1 - beta1^t
  double bias_correction2 = 1.0;  // 1 - beta2^t
};

// Decoupled weight decay, then the bias-corrected Adam update.
template <typename T>
void adamw(T* param, const T* grad, T* m, T* v, std::size_t n, const AdamWStep& s) {
  const double decay = 1.0 - s.lr * s.weight_decay;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    const double mi = s.beta1 * m[i] + (1.0 - s.beta1) * g;
    const double vi = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / s.bias_correction1;
    const double vhat = vi / s.bias_correction2;
    param[i] = static_cast<T>(param[i] * decay - s.lr * mhat / (std::sqrt(vhat) + s.eps));
  }
}

}  // namespace ref

// Dispatching float entry points.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc);
float dot(const float* x, const float* y, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
double sum_squares(const float* x, std::size_t n);
void softmax(float* x, std::size_t n);
void gelu(const float* x, float* y, std::size_t n);
void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n);
void adamw(float* param, const float* grad, float* m, float* v, std::size_t n, const ref::AdamWStep& s);

// Double precision always runs the reference path.
inline void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
                 const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
                 double* c, std::size_t ldc) {
  ref::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline double dot(const double* x, const double* y, std::size_t n) { return ref::dot(x, y, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { ref::axpy(alpha, x, y, n); }
inline double sum_squares(const double* x, std::size_t n) { return ref::sum_squares(x, n); }
inline void softmax(double* x, std::size_t n) { ref::softmax(x, n); }
inline void gelu(const double* x, double* y, std::size_t n) { ref::gelu(x, y, n); }
inline void gelu_backward(const double* x, const double* dy, double* dx, std::size_t n) {
  ref::gelu_backward(x, dy, dx, n);
}
inline void adamw(double* param, const double* grad, double* m, double* v, std::size_t n,
                  const ref::AdamWStep& s) {
  ref::adamw(param, grad, m, v, n, s);
}

namespace avx2 {
// Only callable when isa_available(Isa::Avx2).
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc);
float dot(const float* x, const float* y, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
double sum_squares(const float* x, std::size_t n);
void softmax(float* x, std::size_t n);
void gelu(const float* x, float* y, std::size_t n);
void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n);
void adamw(float* param, const float* grad, float* m, float* v, std::size_t n, const ref::AdamWStep& s);
}  // namespace avx2

}  // namespace harlm::kernels
