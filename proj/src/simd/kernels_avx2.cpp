// Copyright 2026 The partdisc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// AVX2 + FMA kernels. The TU is built with the baseline ISA; only the functions
// below carry the avx2/fma target attribute, so nothing in the shared headers is
// ever emitted with AVX2 instructions.

#if defined(PARTDISC_HAVE_AVX2)

#include <immintrin.h>

#include "partdisc/simd/kernels.hpp"

#define PARTDISC_AVX2 __attribute__((target("avx2,fma")))

namespace partdisc::simd::detail {
namespace {

PARTDISC_AVX2 inline double hsum(__m256d v) noexcept {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  const __m128d shuf = _mm_unpackhi_pd(s, s);
  return _mm_cvtsd_f64(_mm_add_sd(s, shuf));
}

PARTDISC_AVX2 double dot_avx2(const double* a, const double* b, std::size_t n) noexcept {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

PARTDISC_AVX2 double squared_distance_avx2(const double* a, const double* b,
                                           std::size_t n) noexcept {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_fmadd_pd(diff, diff, acc);
  }
  double total = hsum(acc);
  for (; i < n; ++i) {
    const double diff = a[i] - b[i];
    total += diff * diff;
  }
  return total;
}

PARTDISC_AVX2 double diag_mahalanobis_avx2(const double* x, const double* mean,
                                           const double* inv_var, std::size_t n) noexcept {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(mean + i));
    const __m256d sq = _mm256_mul_pd(diff, diff);
    acc = _mm256_fmadd_pd(sq, _mm256_loadu_pd(inv_var + i), acc);
  }
  double total = hsum(acc);
  for (; i < n; ++i) {
    const double diff = x[i] - mean[i];
    total += diff * diff * inv_var[i];
  }
  return total;
}

PARTDISC_AVX2 void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) noexcept {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

PARTDISC_AVX2 double sum_avx2(const double* x, std::size_t n) noexcept {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double total = hsum(acc);
  for (; i < n; ++i) total += x[i];
  return total;
}

constexpr KernelTable kAvx2Table{
    Isa::kAvx2, dot_avx2, squared_distance_avx2, diag_mahalanobis_avx2, axpy_avx2, sum_avx2,
};

}  // namespace

const KernelTable& avx2_table() noexcept { return kAvx2Table; }

}  // namespace partdisc::simd::detail

#endif  // PARTDISC_HAVE_AVX2
