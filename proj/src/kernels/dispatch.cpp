#include <cstdlib>
#include <string>

#include "procua/kernels.hpp"

namespace procua::kernels {

namespace detail {
#if !defined(PROCUA_HAVE_AVX2)
const KernelTable* avx2_table() { return nullptr; }
#endif
#if !defined(PROCUA_HAVE_NEON)
const KernelTable* neon_table() { return nullptr; }
#endif
}  // namespace detail

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

bool available(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(PROCUA_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
      return detail::neon_table() != nullptr;
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!available(isa)) return detail::scalar_table();
  switch (isa) {
    case Isa::avx2: return *detail::avx2_table();
    case Isa::neon: return *detail::neon_table();
    default: return detail::scalar_table();
  }
}

namespace {

const KernelTable& resolve() {
  if (const char* env = std::getenv("PROCUA_SIMD")) {
    const std::string want(env);
    for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon})
      if (want == to_string(isa)) return table(isa);
  }
  if (available(Isa::avx2)) return table(Isa::avx2);
  if (available(Isa::neon)) return table(Isa::neon);
  return detail::scalar_table();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& t = resolve();
  return t;
}

}  // namespace procua::kernels
