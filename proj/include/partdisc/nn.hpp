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

// Minimal dense layers with hand-written backward passes. Batches are rows.

#include <cstddef>

#include "partdisc/matrix.hpp"
#include "partdisc/runtime.hpp"

namespace partdisc {

/// y = x W^T + b, W is out x in, b is 1 x out.
struct Linear {
  Matrix w;
  Matrix b;

  std::size_t in_dim() const noexcept { return w.cols(); }
  std::size_t out_dim() const noexcept { return w.rows(); }
};

/// Uniform(-1/sqrt(in), 1/sqrt(in)) weights, zero bias.
Linear make_linear(std::size_t in, std::size_t out, Rng& rng);

Matrix linear_forward(const Linear& l, const Matrix& x);
/// Accumulates dW, db into `grad` and returns dx.
Matrix linear_backward(const Linear& l, const Matrix& x, const Matrix& dy, Linear& grad);

double gelu(double x) noexcept;
double gelu_grad(double x) noexcept;

/// Linear -> GELU -> Linear.
struct Mlp {
  Linear hidden;
  Linear out;

  bool empty() const noexcept { return hidden.w.empty(); }
};

Mlp make_mlp(std::size_t in, std::size_t width, std::size_t out, Rng& rng);

struct MlpCache {
  Matrix x;
  Matrix pre;  // hidden pre-activation
  Matrix act;  // gelu(pre)
};

Matrix mlp_forward(const Mlp& m, const Matrix& x, MlpCache* cache = nullptr);
Matrix mlp_backward(const Mlp& m, const MlpCache& cache, const Matrix& dy, Mlp& grad);

Linear zeros_like(const Linear& l);
Mlp zeros_like(const Mlp& m);

/// Gradient of x -> x / ||x|| per row: dx = (dy - y <y, dy>) / ||x||, where
/// y are the normalized rows. Rows below eps, which normalize_rows leaves
/// untouched, pass dy through.
Matrix normalize_rows_backward(const Matrix& x, const Matrix& dy, double eps = 1e-12);

/// a += s * b (same shape).
void add_scaled(Matrix& a, const Matrix& b, double s = 1.0);

}  // namespace partdisc
