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

// Central finite-difference verification of the analytic gradients.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "partdisc/matrix.hpp"

namespace partdisc {

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;

/// ||a - n|| / max(||a||, ||n||, 1e-8) over all entries of the listed tensors.
double relative_error(const std::vector<Matrix>& analytic, const std::vector<Matrix>& numeric);

/// (f(x + h e_k) - f(x - h e_k)) / 2h for every entry of every input; inputs
/// are perturbed in place and restored.
std::vector<Matrix> numeric_gradient(const std::function<double()>& f, const std::vector<Matrix*>& inputs,
                                     double h = kGradcheckStep);

struct GradcheckRow {
  std::string check;
  int instance = 0;
  double value = 0.0;
  double rel_error = 0.0;
  bool pass = false;
};

/// Every loss term and the total objective on `instances` random problems
/// each. For the total objective the error is the worst parameter group.
std::vector<GradcheckRow> run_gradcheck_suite(std::uint64_t seed, int instances = 20,
                                              double h = kGradcheckStep, double tol = kGradcheckTolerance);

}  // namespace partdisc
