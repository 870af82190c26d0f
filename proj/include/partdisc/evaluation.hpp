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
#include <vector>

#include "partdisc/matrix.hpp"

namespace partdisc {

/// Minimum-cost perfect assignment on a square cost matrix. Returns perm with
/// perm[row] = column. Among all optimal assignments the lexicographically
/// smallest perm is returned, so results do not depend on solver internals.
std::vector<int> hungarian_match(const Matrix& cost);

double assignment_cost(const Matrix& cost, std::span<const int> perm);

struct AccReport {
  double all = 0.0;
  double old_acc = 0.0;  // NaN when no sample has an old-class label
  double new_acc = 0.0;  // NaN when no sample has a new-class label
  std::size_t n_all = 0;
  std::size_t n_old = 0;
  std::size_t n_new = 0;
  std::vector<int> permutation;  // predicted cluster -> class
};

/// Clustering accuracy with one global Hungarian match over all samples,
/// then broken down by whether the true label is an old class.
/// `num_classes` of 0 means max(preds, labels) + 1.
AccReport clustering_acc(std::span<const int> preds, std::span<const int> labels,
                         std::span<const int> old_classes, int num_classes = 0);

}  // namespace partdisc
