#include "povar/simd/kernels.hpp"

#include <cstdlib>
#include <string>

namespace povar::simd {

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& select() {
  if (const char* env = std::getenv("POVAR_SIMD")) {
    if (std::string(env) == "scalar") return scalar::kTable;
  }
  if (const KernelTable* t = avx2::table(); t != nullptr && cpu_has_avx2_fma()) {
    return *t;
  }
  return scalar::kTable;
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

std::vector<const KernelTable*> available() {
  std::vector<const KernelTable*> out{&scalar::kTable};
  if (const KernelTable* t = avx2::table(); t != nullptr && cpu_has_avx2_fma()) {
    out.push_back(t);
  }
  return out;
}

}  // namespace povar::simd
