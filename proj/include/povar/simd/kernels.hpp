#pragma once

// Dense inner kernels used by normal-equation assembly and the inner linear
// solvers. Every kernel has a scalar reference implementation; an AVX2/FMA
// variant is selected at runtime when the CPU supports it.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace povar::simd {

enum class Isa { kScalar, kAvx2 };

std::string_view to_string(Isa isa);

struct KernelTable {
  Isa isa;

  /// sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);

  /// sum_i a[i]^2
  double (*squared_norm)(const double* a, std::size_t n);

  /// y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  /// y[i] = x[i] + beta * y[i]
  void (*xpby)(const double* x, double beta, double* y, std::size_t n);

  /// out += A^T A for a row-major rows x cols block with leading dimension
  /// lda. out is a full (both triangles) row-major cols x cols matrix.
  void (*gram_accumulate)(const double* a, std::size_t rows, std::size_t cols,
                          std::size_t lda, double* out);
};

namespace scalar {
extern const KernelTable kTable;
}

namespace avx2 {
/// Null when the library was built without AVX2 support.
const KernelTable* table();
}

/// Kernel table chosen for this process. POVAR_SIMD=scalar forces the scalar
/// reference; otherwise AVX2 is used when both the build and the CPU support
/// it.
const KernelTable& active();

/// Every table that can run on this machine, scalar first.
std::vector<const KernelTable*> available();

/// Convenience wrappers over active().
inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline double squared_norm(std::span<const double> a) {
  return active().squared_norm(a.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}
inline void xpby(std::span<const double> x, double beta, std::span<double> y) {
  active().xpby(x.data(), beta, y.data(), x.size());
}

}  // namespace povar::simd
