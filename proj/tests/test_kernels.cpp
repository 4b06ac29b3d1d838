#include <doctest.h>

#include <cmath>
#include <vector>

#include "harlm/kernels.hpp"
#include "harlm/random.hpp"

using namespace harlm;
using namespace harlm::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.normal(0.0, scale));
  return v;
}

double max_rel_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(double(a[i]) - double(b[i]));
    worst = std::max(worst, d / std::max(1.0, std::abs(double(b[i]))));
  }
  return worst;
}

struct RequireAvx2 {
  bool ok = isa_available(Isa::Avx2);
};

}  // namespace

TEST_CASE("reference gemm matches a hand computed product") {
  // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
  const double a[] = {1, 2, 3, 4}, b[] = {5, 6, 7, 8};
  double c[4] = {1, 1, 1, 1};
  ref::gemm(Trans::No, Trans::No, 2, 2, 2, 1.0, a, 2, b, 2, 0.0, c, 2);
  CHECK(c[0] == 19);
  CHECK(c[1] == 22);
  CHECK(c[2] == 43);
  CHECK(c[3] == 50);
  // A^T B^T = (BA)^T: B*A = [23 34; 31 46]
  ref::gemm(Trans::Yes, Trans::Yes, 2, 2, 2, 1.0, a, 2, b, 2, 0.0, c, 2);
  CHECK(c[0] == 23);
  CHECK(c[1] == 31);
  CHECK(c[2] == 34);
  CHECK(c[3] == 46);
  // beta accumulates
  ref::gemm(Trans::No, Trans::No, 2, 2, 2, 2.0, a, 2, b, 2, 1.0, c, 2);
  CHECK(c[0] == 23 + 38);
}

TEST_CASE("avx2 gemm agrees with the reference for all transposes and edge shapes") {
  if (!RequireAvx2{}.ok) return;
  const std::size_t shapes[][3] = {{1, 1, 1},   {5, 7, 3},    {6, 16, 8},   {13, 33, 17},
                                   {72, 512, 256}, {100, 129, 300}, {7, 600, 9}, {130, 20, 520}};
  const float betas[] = {0.0f, 1.0f, 0.5f};
  std::uint64_t seed = 1;
  for (const auto& s : shapes) {
    const std::size_t m = s[0], n = s[1], k = s[2];
    for (Trans ta : {Trans::No, Trans::Yes}) {
      for (Trans tb : {Trans::No, Trans::Yes}) {
        for (float beta : betas) {
          const std::size_t lda = (ta == Trans::No ? k : m) + 3;
          const std::size_t ldb = (tb == Trans::No ? n : k) + 1;
          const std::size_t ldc = n + 2;
          const auto a = random_vec((ta == Trans::No ? m : k) * lda, seed++);
          const auto b = random_vec((tb == Trans::No ? k : n) * ldb, seed++);
          auto c_ref = random_vec(m * ldc, seed++);
          auto c_simd = c_ref;
          ref::gemm(ta, tb, m, n, k, 0.75f, a.data(), lda, b.data(), ldb, beta, c_ref.data(), ldc);
          avx2::gemm(ta, tb, m, n, k, 0.75f, a.data(), lda, b.data(), ldb, beta, c_simd.data(), ldc);
          INFO("m=" << m << " n=" << n << " k=" << k << " ta=" << int(ta) << " tb=" << int(tb)
                    << " beta=" << beta);
          CHECK(max_rel_diff(c_simd, c_ref) < 1e-4 * std::sqrt(double(k)));
        }
      }
    }
  }
}

TEST_CASE("avx2 vector kernels agree with the reference") {
  if (!RequireAvx2{}.ok) return;
  for (std::size_t n : {1u, 7u, 8u, 9u, 31u, 64u, 1000u}) {
    INFO("n=" << n);
    const auto x = random_vec(n, 100 + n, 3.0);
    const auto y = random_vec(n, 200 + n, 3.0);
    CHECK(std::abs(avx2::dot(x.data(), y.data(), n) - ref::dot(x.data(), y.data(), n)) <
          1e-4 * std::max(1.0, double(n)));

    auto ya = y, yr = y;
    avx2::axpy(0.3f, x.data(), ya.data(), n);
    ref::axpy(0.3f, x.data(), yr.data(), n);
    CHECK(max_rel_diff(ya, yr) < 1e-6);

    const double ss_ref = ref::sum_squares(x.data(), n);
    CHECK(std::abs(avx2::sum_squares(x.data(), n) - ss_ref) <= 1e-12 * ss_ref + 1e-12);

    auto sa = x, sr = x;
    avx2::softmax(sa.data(), n);
    ref::softmax(sr.data(), n);
    CHECK(max_rel_diff(sa, sr) < 1e-6);

    std::vector<float> ga(n), gr(n);
    avx2::gelu(x.data(), ga.data(), n);
    ref::gelu(x.data(), gr.data(), n);
    CHECK(max_rel_diff(ga, gr) < 1e-5);

    avx2::gelu_backward(x.data(), y.data(), ga.data(), n);
    ref::gelu_backward(x.data(), y.data(), gr.data(), n);
    CHECK(max_rel_diff(ga, gr) < 1e-5);
  }
}

TEST_CASE("softmax handles extreme logits") {
  std::vector<float> x = {1000.0f, -1000.0f, 999.0f, -INFINITY};
  auto y = x;
  ref::softmax(x.data(), x.size());
  CHECK(x[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(x[3] == 0.0f);
  if (isa_available(Isa::Avx2)) {
    avx2::softmax(y.data(), y.size());
    CHECK(max_rel_diff(y, x) < 1e-6);
  }
}

TEST_CASE("avx2 adamw is bit identical to the reference") {
  if (!RequireAvx2{}.ok) return;
  const std::size_t n = 1037;
  auto p1 = random_vec(n, 1), g = random_vec(n, 2), m1 = random_vec(n, 3, 0.01), v1 = random_vec(n, 4, 0.01);
  for (float& v : v1) v = std::abs(v);
  auto p2 = p1, m2 = m1, v2 = v1;
  ref::AdamWStep s;
  s.lr = 1e-3;
  s.weight_decay = 0.01;
  s.bias_correction1 = 1 - std::pow(0.9, 3);
  s.bias_correction2 = 1 - std::pow(0.999, 3);
  ref::adamw(p1.data(), g.data(), m1.data(), v1.data(), n, s);
  avx2::adamw(p2.data(), g.data(), m2.data(), v2.data(), n, s);
  CHECK(p1 == p2);
  CHECK(m1 == m2);
  CHECK(v1 == v2);
}

TEST_CASE("adamw single scalar step") {
  // First step from zero moments: m = 0.1, v = 0.001, mhat = 1, vhat = 1,
  // w = 1 * (1 - 0.1 * 0.01) - 0.1 * 1 / (1 + 1e-8).
  double w = 1.0, g = 1.0, m = 0.0, v = 0.0;
  ref::AdamWStep s;
  s.lr = 0.1;
  s.weight_decay = 0.01;
  s.bias_correction1 = 0.1;
  s.bias_correction2 = 1 - 0.999;
  ref::adamw(&w, &g, &m, &v, 1, s);
  CHECK(m == doctest::Approx(0.1));
  CHECK(v == doctest::Approx(0.001));
  CHECK(w == doctest::Approx(0.999 - 0.1 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("isa selection can be forced") {
  const Isa before = active_isa();
  set_active_isa(Isa::Scalar);
  CHECK(active_isa() == Isa::Scalar);
  set_active_isa(Isa::Avx2);
  CHECK(active_isa() == (isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar));
  set_active_isa(before);
}
