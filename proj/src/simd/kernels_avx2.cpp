#include "povar/simd/kernels.hpp"

#if defined(POVAR_HAVE_AVX2)

#include <immintrin.h>

namespace povar::simd::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(const double* a, std::size_t n) { return dot(a, a, n); }

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(
        y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void xpby(const double* x, double beta, double* y, std::size_t n) {
  const __m256d vb = _mm256_set1_pd(beta);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(
        y + i, _mm256_fmadd_pd(vb, _mm256_loadu_pd(y + i), _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) y[i] = x[i] + beta * y[i];
}

void gram_accumulate(const double* a, std::size_t rows, std::size_t cols,
                     std::size_t lda, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = a + r * lda;
    for (std::size_t i = 0; i < cols; ++i) {
      const double ai = row[i];
      if (ai == 0.0) continue;
      const __m256d vai = _mm256_set1_pd(ai);
      double* out_row = out + i * cols;
      std::size_t j = 0;
      for (; j + 4 <= cols; j += 4) {
        _mm256_storeu_pd(out_row + j,
                         _mm256_fmadd_pd(vai, _mm256_loadu_pd(row + j),
                                         _mm256_loadu_pd(out_row + j)));
      }
      for (; j < cols; ++j) out_row[j] += ai * row[j];
    }
  }
}

const KernelTable kTable{Isa::kAvx2, &dot, &squared_norm, &axpy, &xpby,
                         &gram_accumulate};

}  // namespace

const KernelTable* table() { return &kTable; }

}  // namespace povar::simd::avx2

#else

namespace povar::simd::avx2 {
const KernelTable* table() { return nullptr; }
}  // namespace povar::simd::avx2

#endif
