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

#include <vector>

#include "partdisc/matrix.hpp"

namespace partdisc {

struct SinkhornOptions {
  int max_iters = 100;
  double tol = 1e-6;
  double clamp_floor = 1e-12;
  // Switch to log-domain scaling when any (clamped) entry is below this.
  double log_domain_below = 1e-30;
};

struct SinkhornResult {
  Matrix q;
  bool converged = false;
  int iterations = 0;
  double violation = 0.0;  // final max constraint violation
  bool log_domain = false;
  // Violation of the input (index 0) and after every row+column sweep.
  std::vector<double> violation_trace;
};

/// Max over |row_sum - 1| and |col_sum - n/C| / (n/C).
double transport_violation(const Matrix& q);

/// Scales a row-stochastic prediction matrix P (n x C) to Q = diag(d) P diag(e)
/// with unit row sums and column sums n/C by alternating row normalization and
/// column scaling. Non-convergence is reported through the result (and a
/// warning), not thrown. Throws on negative / non-finite input or on a row or
/// column that is all zero after clamping.
SinkhornResult sinkhorn_adjust(const Matrix& p, const SinkhornOptions& opts = {});

}  // namespace partdisc
