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

// Per-class candidate selection: prototypes are re-estimated from the
// balanced predictions (weighted mean of the CLS features assigned to each
// class) and each new class keeps the samples that score highest under them.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "partdisc/feature_store.hpp"
#include "partdisc/matrix.hpp"

namespace partdisc {

/// Class prototypes, one unit-norm row per class (C x d).
struct Prototypes {
  Matrix w;

  std::size_t num_classes() const noexcept { return w.rows(); }
  std::size_t dim() const noexcept { return w.cols(); }
};

/// Throws kValidation unless every row has unit norm within `tol`.
void check_unit_rows(const Prototypes& p, double tol = 1e-6);

struct CandidateSet {
  int ns = 0;
  /// Per class, positions into the dataset's sample vector (ascending).
  std::vector<std::vector<std::size_t>> members;
};

/// max(1, floor(gamma * labeled_count / old_class_count)).
int compute_ns(double gamma, std::size_t labeled_count, std::size_t old_class_count);

/// Row-wise argmax, lowest class on ties.
std::vector<int> compute_assignments(const Matrix& q);

/// Calibrated prototypes from balanced predictions Q (n x C) and unit-norm
/// CLS features (n x d). A class nobody is assigned to falls back to its
/// `fallback_count` highest-scoring samples.
Prototypes calibrate_prototypes(const Matrix& q, const Matrix& cls, int fallback_count);

/// Per-class scores: softmax(W f_i) with no temperature, n x C.
Matrix prototype_scores(const Prototypes& w, const Matrix& cls);

/// Old classes take their labeled samples. New class c takes the `ns`
/// unlabeled samples with the highest scores(i, c), ties broken by sample id.
CandidateSet select_from_scores(const Matrix& scores, const FeatureDataset& ds, int ns);

CandidateSet select_candidates(const Prototypes& w, const Matrix& cls, const FeatureDataset& ds,
                               int ns);

struct PurityReport {
  std::vector<double> per_class;  // NaN for classes with no candidates
  double mean_new = 0.0;
  std::vector<int> new_class_map;  // new class index -> aligned true label
};

/// Fraction of each class's candidates whose true label is that class. New
/// class indices are first aligned to true labels by Hungarian matching on
/// the candidate/label contingency table.
PurityReport candidate_purity(const CandidateSet& cands, std::span<const int> true_labels,
                              const DatasetMeta& meta);

/// Prototype file: "PPRO" | u32 version | u32 C | u32 d | f32[C*d].
void save_prototypes(const Prototypes& p, const std::filesystem::path& path);
Prototypes load_prototypes(const std::filesystem::path& path);

}  // namespace partdisc
