#include "povar/simd/kernels.hpp"

namespace povar::simd::scalar {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(const double* a, std::size_t n) { return dot(a, a, n); }

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void xpby(const double* x, double beta, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + beta * y[i];
}

void gram_accumulate(const double* a, std::size_t rows, std::size_t cols,
                     std::size_t lda, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = a + r * lda;
    for (std::size_t i = 0; i < cols; ++i) {
      const double ai = row[i];
      double* out_row = out + i * cols;
      for (std::size_t j = 0; j < cols; ++j) out_row[j] += ai * row[j];
    }
  }
}

}  // namespace

const KernelTable kTable{Isa::kScalar, &dot, &squared_norm, &axpy, &xpby,
                         &gram_accumulate};

}  // namespace povar::simd::scalar
