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

#include "partdisc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "partdisc/error.hpp"
#include "partdisc/simd/kernels.hpp"

namespace partdisc {

double l2_norm(std::span<const double> x) noexcept { return std::sqrt(simd::dot(x, x)); }

void normalize_rows(Matrix& m, double eps) noexcept {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double n = l2_norm(row);
    if (n < eps) continue;
    const double inv = 1.0 / n;
    for (double& v : row) v *= inv;
  }
}

Matrix normalized_rows(const Matrix& m, double eps) {
  Matrix out = m;
  normalize_rows(out, eps);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = simd::dot(ai, b.row(j));
  }
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto oi = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik != 0.0) simd::axpy(aik, b.row(k), oi);
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

double log_sum_exp(std::span<const double> x) noexcept {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

void softmax_inplace(std::span<double> x, double temperature) noexcept {
  if (x.empty()) return;
  const double inv_t = 1.0 / temperature;
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x) mx = std::max(mx, v * inv_t);
  double total = 0.0;
  for (double& v : x) {
    v = std::exp(v * inv_t - mx);
    total += v;
  }
  const double inv = 1.0 / total;
  for (double& v : x) v *= inv;
}

Matrix softmax_rows(const Matrix& logits, double temperature) {
  Matrix out = logits;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r), temperature);
  return out;
}

std::size_t argmax(std::span<const double> x) noexcept {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[best]) best = i;
  return best;
}

}  // namespace partdisc
