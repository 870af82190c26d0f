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


#include "partdisc/nn.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "partdisc/error.hpp"
#include "partdisc/linalg.hpp"
#include "partdisc/simd/kernels.hpp"

namespace partdisc {

Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Linear l{Matrix(out, in), Matrix(1, out, 0.0)};
  for (double& v : l.w.flat()) v = u(rng);
  return l;
}

Matrix linear_forward(const Linear& l, const Matrix& x) {
  require(x.cols() == l.in_dim(), "linear_forward: input width mismatch");
  Matrix y = matmul_nt(x, l.w);
  for (std::size_t i = 0; i < y.rows(); ++i) simd::axpy(1.0, l.b.row(0), y.row(i));
  return y;
}

Matrix linear_backward(const Linear& l, const Matrix& x, const Matrix& dy, Linear& grad) {
  // dW += dy^T x, db += colsum(dy), dx = dy W.
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    const auto gi = dy.row(i);
    for (std::size_t o = 0; o < l.out_dim(); ++o) {
      if (gi[o] == 0.0) continue;
      simd::axpy(gi[o], xi, grad.w.row(o));
      grad.b(0, o) += gi[o];
    }
  }
  return matmul(dy, l.w);
}

double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) noexcept {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Mlp make_mlp(std::size_t in, std::size_t width, std::size_t out, Rng& rng) {
  Mlp m;
  m.hidden = make_linear(in, width, rng);
  m.out = make_linear(width, out, rng);
  return m;
}

Matrix mlp_forward(const Mlp& m, const Matrix& x, MlpCache* cache) {
  Matrix pre = linear_forward(m.hidden, x);
  Matrix act(pre.rows(), pre.cols());
  for (std::size_t k = 0; k < pre.size(); ++k) act.flat()[k] = gelu(pre.flat()[k]);
  Matrix y = linear_forward(m.out, act);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return y;
}

Matrix mlp_backward(const Mlp& m, const MlpCache& cache, const Matrix& dy, Mlp& grad) {
  Matrix dact = linear_backward(m.out, cache.act, dy, grad.out);
  for (std::size_t k = 0; k < dact.size(); ++k) dact.flat()[k] *= gelu_grad(cache.pre.flat()[k]);
  return linear_backward(m.hidden, cache.x, dact, grad.hidden);
}

Linear zeros_like(const Linear& l) {
  return {Matrix(l.w.rows(), l.w.cols(), 0.0), Matrix(l.b.rows(), l.b.cols(), 0.0)};
}

Mlp zeros_like(const Mlp& m) { return {zeros_like(m.hidden), zeros_like(m.out)}; }

Matrix normalize_rows_backward(const Matrix& x, const Matrix& dy, double eps) {
  Matrix dx(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    const auto gi = dy.row(i);
    auto out = dx.row(i);
    const double n = l2_norm(xi);
    if (n < eps) {
      std::copy(gi.begin(), gi.end(), out.begin());
      continue;
    }
    // y = x / n; <y, dy> = <x, dy> / n.
    const double proj = simd::dot(xi, gi) / (n * n);
    for (std::size_t j = 0; j < xi.size(); ++j) out[j] = (gi[j] - xi[j] * proj) / n;
  }
  return dx;
}

void add_scaled(Matrix& a, const Matrix& b, double s) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add_scaled: shape mismatch");
  simd::axpy(s, b.flat(), a.flat());
}

}  // namespace partdisc
