#include <cmath>
#include <vector>

#include "doctest.h"
#include "procua/kernels.hpp"
#include "procua/random.hpp"

using namespace procua;
using namespace procua::kernels;

namespace {

std::vector<double> rand_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = 4 * uniform01(rng) - 2;
  return v;
}

void check_close(double a, double b, double scale) { CHECK(std::abs(a - b) <= 1e-13 * std::max(1.0, scale)); }

std::vector<const KernelTable*> variants() {
  std::vector<const KernelTable*> out{&detail::scalar_table()};
  if (available(Isa::avx2)) out.push_back(&table(Isa::avx2));
  if (available(Isa::neon)) out.push_back(&table(Isa::neon));
  return out;
}

}  // namespace

TEST_CASE("scalar kernels match naive loops") {
  Rng rng(1);
  const auto& k = detail::scalar_table();
  CHECK(k.isa == Isa::scalar);
  for (std::size_t n : {1, 2, 3, 7, 30, 64}) {
    const auto a = rand_vec(rng, n), b = rand_vec(rng, n);
    double d = 0, m = a[0];
    for (std::size_t i = 0; i < n; ++i) {
      d += a[i] * b[i];
      m = std::max(m, a[i]);
    }
    check_close(k.dot(a.data(), b.data(), n), d, static_cast<double>(n));
    CHECK(k.max(a.data(), n) == m);
    auto y = b;
    k.axpy(0.5, a.data(), y.data(), n);
    for (std::size_t i = 0; i < n; ++i) check_close(y[i], b[i] + 0.5 * a[i], 1);
  }
}

TEST_CASE("vector variants are equivalent to scalar") {
  Rng rng(2);
  const auto& ref = detail::scalar_table();
  const auto vs = variants();
  MESSAGE("variants under test: ", vs.size());
  for (const KernelTable* k : vs) {
    for (std::size_t rows : {1, 2, 5, 17}) {
      for (std::size_t cols = 1; cols <= 37; ++cols) {
        const auto m = rand_vec(rng, rows * cols);
        const auto x = rand_vec(rng, cols);
        const auto w = rand_vec(rng, rows);
        const double scale = static_cast<double>(rows * cols);

        check_close(k->dot(m.data(), x.data(), cols), ref.dot(m.data(), x.data(), cols), scale);
        CHECK(k->max(m.data(), rows * cols) == ref.max(m.data(), rows * cols));

        auto y1 = x, y2 = x;
        k->axpy(-1.25, m.data(), y1.data(), cols);
        ref.axpy(-1.25, m.data(), y2.data(), cols);
        for (std::size_t i = 0; i < cols; ++i) check_close(y1[i], y2[i], 1);

        std::vector<double> g1(rows, 9.0), g2(rows, -9.0);
        k->gemv(m.data(), rows, cols, x.data(), g1.data());
        ref.gemv(m.data(), rows, cols, x.data(), g2.data());
        for (std::size_t r = 0; r < rows; ++r) check_close(g1[r], g2[r], scale);

        // gemv_t overwrites its output.
        std::vector<double> t1(cols, 5.0), t2(cols, -5.0);
        k->gemv_t(m.data(), rows, cols, w.data(), t1.data());
        ref.gemv_t(m.data(), rows, cols, w.data(), t2.data());
        for (std::size_t c = 0; c < cols; ++c) {
          double naive = 0;
          for (std::size_t r = 0; r < rows; ++r) naive += w[r] * m[r * cols + c];
          check_close(t1[c], t2[c], scale);
          check_close(t2[c], naive, scale);
        }
      }
    }
  }
}

TEST_CASE("dispatch") {
  CHECK(available(Isa::scalar));
  CHECK(table(Isa::scalar).isa == Isa::scalar);
  // Unavailable variants fall back to scalar.
  for (Isa isa : {Isa::avx2, Isa::neon})
    if (!available(isa)) CHECK(table(isa).isa == Isa::scalar);
  const auto& a = active();
  CHECK(available(a.isa));
  CHECK(&active() == &a);
  CHECK(to_string(Isa::avx2) == "avx2");
}
