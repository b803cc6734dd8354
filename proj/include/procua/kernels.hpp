#pragma once

// Dense double-precision kernels behind the policy's logits, scores and
// gradient accumulation. Every kernel has a portable scalar reference; vector
// variants (AVX2+FMA on x86-64, NEON on AArch64) are chosen once per process.
// Variants are numerically equivalent up to summation order, so callers that
// need bit-stable output across machines should pin the ISA with
// PROCUA_SIMD=scalar.

#include <cstddef>
#include <span>
#include <string_view>

namespace procua::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view to_string(Isa isa);

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[r] = dot(m[r, :], x) for a row-major rows x cols matrix
  void (*gemv)(const double* m, std::size_t rows, std::size_t cols, const double* x,
               double* y);
  // y[:] = sum_r w[r] * m[r, :]
  void (*gemv_t)(const double* m, std::size_t rows, std::size_t cols, const double* w,
                 double* y);
  // max_i a[i]; n > 0
  double (*max)(const double* a, std::size_t n);
};

/// True if the variant was compiled in and the CPU supports it.
bool available(Isa isa);

/// Table for a specific variant; falls back to scalar if unavailable.
const KernelTable& table(Isa isa);

/// Best available variant, overridable with PROCUA_SIMD={scalar,avx2,neon}.
/// Resolved on first use and fixed for the life of the process.
const KernelTable& active();

namespace detail {
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
const KernelTable* neon_table();
}  // namespace detail

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace procua::kernels
