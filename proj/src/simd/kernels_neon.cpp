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

// AArch64 NEON kernels (float64x2). Advanced SIMD is mandatory on AArch64, so
// availability is a compile-time property.

#if defined(PARTDISC_HAVE_NEON)

#include <arm_neon.h>

#include "partdisc/simd/kernels.hpp"

namespace partdisc::simd::detail {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) noexcept {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double squared_distance_neon(const double* a, const double* b, std::size_t n) noexcept {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t diff = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
    acc = vfmaq_f64(acc, diff, diff);
  }
  double total = vaddvq_f64(acc);
  for (; i < n; ++i) {
    const double diff = a[i] - b[i];
    total += diff * diff;
  }
  return total;
}

double diag_mahalanobis_neon(const double* x, const double* mean, const double* inv_var,
                             std::size_t n) noexcept {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t diff = vsubq_f64(vld1q_f64(x + i), vld1q_f64(mean + i));
    acc = vfmaq_f64(acc, vmulq_f64(diff, diff), vld1q_f64(inv_var + i));
  }
  double total = vaddvq_f64(acc);
  for (; i < n; ++i) {
    const double diff = x[i] - mean[i];
    total += diff * diff * inv_var[i];
  }
  return total;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) noexcept {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double sum_neon(const double* x, std::size_t n) noexcept {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(x + i));
  double total = vaddvq_f64(acc);
  for (; i < n; ++i) total += x[i];
  return total;
}

constexpr KernelTable kNeonTable{
    Isa::kNeon, dot_neon, squared_distance_neon, diag_mahalanobis_neon, axpy_neon, sum_neon,
};

}  // namespace

const KernelTable& neon_table() noexcept { return kNeonTable; }

}  // namespace partdisc::simd::detail

#endif  // PARTDISC_HAVE_NEON
