#include <cstdlib>
#include <stdexcept>
#include <string>

#include "nsl/kernels/kernels.hpp"

namespace nsl::kernels {
namespace {

constexpr KernelTable kScalarTable{
    Isa::kScalar,    &scalar::dot,     &scalar::axpy,
    &scalar::gemm_nn, &scalar::gemm_nt, &scalar::gemm_tn,
};

#if defined(NSL_HAVE_AVX2)
constexpr KernelTable kAvx2Table{
    Isa::kAvx2,     &avx2::dot,     &avx2::axpy,
    &avx2::gemm_nn, &avx2::gemm_nt, &avx2::gemm_tn,
};
#endif

const KernelTable& select() {
  const char* forced = std::getenv("NSL_SIMD");
  if (forced != nullptr && std::string(forced) == "scalar") return kScalarTable;
  if (available(Isa::kAvx2)) return table(Isa::kAvx2);
  return kScalarTable;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return "scalar";
    case Isa::kAvx2: return "avx2";
  }
  return "unknown";
}

bool available(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return true;
    case Isa::kAvx2:
#if defined(NSL_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!available(isa)) {
    throw std::invalid_argument("kernel ISA not available: " + std::string(isa_name(isa)));
  }
#if defined(NSL_HAVE_AVX2)
  if (isa == Isa::kAvx2) return kAvx2Table;
#endif
  return kScalarTable;
}

const KernelTable& active() {
  static const KernelTable& chosen = select();
  return chosen;
}

}  // namespace nsl::kernels
