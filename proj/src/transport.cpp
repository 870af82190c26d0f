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

#include "partdisc/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "partdisc/error.hpp"
#include "partdisc/log.hpp"
#include "partdisc/simd/kernels.hpp"

namespace partdisc {
namespace {

// Row sums of diag(d) P diag(e) and column sums, evaluated without forming Q.
double scaled_violation(const Matrix& p, const std::vector<double>& d, const std::vector<double>& e,
                        double col_target) {
  const std::size_t n = p.rows();
  const std::size_t c = p.cols();
  std::vector<double> col(c, 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = p.row(i);
    double r = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double qij = d[i] * row[j] * e[j];
      r += qij;
      col[j] += qij;
    }
    worst = std::max(worst, std::abs(r - 1.0));
  }
  for (double s : col) worst = std::max(worst, std::abs(s - col_target) / col_target);
  return worst;
}

double log_scaled_violation(const Matrix& logp, const std::vector<double>& ld,
                            const std::vector<double>& le, double col_target) {
  const std::size_t n = logp.rows();
  const std::size_t c = logp.cols();
  std::vector<double> col(c, 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double qij = std::exp(ld[i] + logp(i, j) + le[j]);
      r += qij;
      col[j] += qij;
    }
    worst = std::max(worst, std::abs(r - 1.0));
  }
  for (double s : col) worst = std::max(worst, std::abs(s - col_target) / col_target);
  return worst;
}

}  // namespace

double transport_violation(const Matrix& q) {
  if (q.rows() == 0 || q.cols() == 0) return 0.0;
  const std::vector<double> ones_r(q.rows(), 1.0), ones_c(q.cols(), 1.0);
  return scaled_violation(q, ones_r, ones_c,
                          static_cast<double>(q.rows()) / static_cast<double>(q.cols()));
}

SinkhornResult sinkhorn_adjust(const Matrix& p_in, const SinkhornOptions& opts) {
  const std::size_t n = p_in.rows();
  const std::size_t c = p_in.cols();
  require(n > 0 && c > 0, "sinkhorn_adjust: empty prediction matrix");
  require(opts.max_iters >= 0 && opts.tol > 0.0, "sinkhorn_adjust: bad options");

  Matrix p = p_in;
  double min_entry = std::numeric_limits<double>::infinity();
  for (double& v : p.flat()) {
    if (!std::isfinite(v) || v < 0.0) {
      fail(ErrorKind::kInvalidArgument, "sinkhorn_adjust: entries must be finite and >= 0");
    }
    v = std::max(v, opts.clamp_floor);
    min_entry = std::min(min_entry, v);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (simd::sum(p.row(i)) <= 0.0)
      fail(ErrorKind::kNumerical, "sinkhorn_adjust: row " + std::to_string(i) + " is all zero");
  }
  {
    std::vector<double> col(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) simd::axpy(1.0, p.row(i), col);
    for (std::size_t j = 0; j < c; ++j)
      if (col[j] <= 0.0)
        fail(ErrorKind::kNumerical,
             "sinkhorn_adjust: column " + std::to_string(j) + " is all zero after clamping");
  }

  const double col_target = static_cast<double>(n) / static_cast<double>(c);
  SinkhornResult res;
  res.log_domain = min_entry < opts.log_domain_below;

  if (!res.log_domain) {
    std::vector<double> d(n, 1.0), e(c, 1.0), col(c);
    res.violation = scaled_violation(p, d, e, col_target);
    res.violation_trace.push_back(res.violation);
    while (res.violation >= opts.tol && res.iterations < opts.max_iters) {
      for (std::size_t i = 0; i < n; ++i) d[i] = 1.0 / simd::dot(p.row(i), e);
      std::fill(col.begin(), col.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) simd::axpy(d[i], p.row(i), col);
      for (std::size_t j = 0; j < c; ++j) e[j] = col_target / col[j];
      ++res.iterations;
      res.violation = scaled_violation(p, d, e, col_target);
      res.violation_trace.push_back(res.violation);
    }
    res.q = std::move(p);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = res.q.row(i);
      for (std::size_t j = 0; j < c; ++j) row[j] *= d[i] * e[j];
    }
  } else {
    Matrix logp(n, c);
    for (std::size_t k = 0; k < p.size(); ++k) logp.flat()[k] = std::log(p.flat()[k]);
    std::vector<double> ld(n, 0.0), le(c, 0.0), buf(std::max(n, c));
    const double log_target = std::log(col_target);
    auto lse = [](std::span<const double> x) {
      const double mx = *std::max_element(x.begin(), x.end());
      double acc = 0.0;
      for (double v : x) acc += std::exp(v - mx);
      return mx + std::log(acc);
    };
    res.violation = log_scaled_violation(logp, ld, le, col_target);
    res.violation_trace.push_back(res.violation);
    while (res.violation >= opts.tol && res.iterations < opts.max_iters) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) buf[j] = logp(i, j) + le[j];
        ld[i] = -lse(std::span<const double>(buf.data(), c));
      }
      for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t i = 0; i < n; ++i) buf[i] = logp(i, j) + ld[i];
        le[j] = log_target - lse(std::span<const double>(buf.data(), n));
      }
      ++res.iterations;
      res.violation = log_scaled_violation(logp, ld, le, col_target);
      res.violation_trace.push_back(res.violation);
    }
    res.q = Matrix(n, c);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) res.q(i, j) = std::exp(ld[i] + logp(i, j) + le[j]);
  }

  res.converged = res.violation < opts.tol;
  if (!res.converged) {
    log::warn("sinkhorn_adjust: not converged after " + std::to_string(res.iterations) +
              " iterations (violation " + std::to_string(res.violation) + ")");
  }
  return res;
}

}  // namespace partdisc
