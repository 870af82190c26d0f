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

#pragma once

// Data-parallel inner loops used across the library. Each kernel has a scalar
// reference implementation and optional AVX2 / NEON variants; the variant is
// chosen once at first use from CPU detection, and can be pinned with the
// PARTDISC_SIMD environment variable ("scalar", "avx2", "neon").

#include <cassert>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace partdisc::simd {

enum class Isa { kScalar, kAvx2, kNeon };

std::string_view isa_name(Isa isa) noexcept;

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n) noexcept;
  // sum_i (a[i] - b[i])^2
  double (*squared_distance)(const double* a, const double* b, std::size_t n) noexcept;
  // sum_i (x[i] - mean[i])^2 * inv_var[i]
  double (*diag_mahalanobis)(const double* x, const double* mean, const double* inv_var,
                             std::size_t n) noexcept;
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n) noexcept;
  // sum_i x[i]
  double (*sum)(const double* x, std::size_t n) noexcept;
};

/// Variants compiled into this binary and supported by the running CPU.
std::vector<Isa> available_isas();

/// Table for a specific variant; throws partdisc::Error if it is not available.
const KernelTable& kernels_for(Isa isa);

/// The dispatched table (resolved once, thread-safe).
const KernelTable& kernels() noexcept;

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  assert(a.size() == b.size());
  return kernels().dot(a.data(), b.data(), a.size());
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
  assert(a.size() == b.size());
  return kernels().squared_distance(a.data(), b.data(), a.size());
}

inline double diag_mahalanobis(std::span<const double> x, std::span<const double> mean,
                               std::span<const double> inv_var) noexcept {
  assert(x.size() == mean.size() && x.size() == inv_var.size());
  return kernels().diag_mahalanobis(x.data(), mean.data(), inv_var.data(), x.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept {
  assert(x.size() == y.size());
  kernels().axpy(alpha, x.data(), y.data(), x.size());
}

inline double sum(std::span<const double> x) noexcept { return kernels().sum(x.data(), x.size()); }

namespace detail {
const KernelTable& scalar_table() noexcept;
#if defined(PARTDISC_HAVE_AVX2)
const KernelTable& avx2_table() noexcept;
#endif
#if defined(PARTDISC_HAVE_NEON)
const KernelTable& neon_table() noexcept;
#endif
}  // namespace detail

}  // namespace partdisc::simd
