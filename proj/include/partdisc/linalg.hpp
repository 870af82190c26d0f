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

#include <cstddef>
#include <span>

#include "partdisc/matrix.hpp"

namespace partdisc {

double l2_norm(std::span<const double> x) noexcept;

/// Scales each row to unit length. Rows with norm below `eps` are left as-is.
void normalize_rows(Matrix& m, double eps = 1e-12) noexcept;
Matrix normalized_rows(const Matrix& m, double eps = 1e-12);

/// a (m x k) times b^T where b is (n x k): out(i, j) = <a_i, b_j>.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// a (m x k) times b (k x n).
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

double log_sum_exp(std::span<const double> x) noexcept;

/// In-place numerically stable softmax of `x / temperature`.
void softmax_inplace(std::span<double> x, double temperature = 1.0) noexcept;
Matrix softmax_rows(const Matrix& logits, double temperature = 1.0);

/// Index of the largest element; ties go to the lowest index.
std::size_t argmax(std::span<const double> x) noexcept;

}  // namespace partdisc
