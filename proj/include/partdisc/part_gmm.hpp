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

// Part decomposition: attention-filtered patches of each class are modeled by
// a diagonal-covariance Gaussian mixture; component posteriors of a patch are
// its part attention.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "partdisc/candidate_selection.hpp"
#include "partdisc/feature_store.hpp"
#include "partdisc/matrix.hpp"
#include "partdisc/runtime.hpp"

namespace partdisc {

struct GmmParams {
  std::vector<double> weights;  // K, sums to 1
  Matrix means;                 // K x d
  Matrix variances;             // K x d, >= var_floor

  std::size_t k() const noexcept { return weights.size(); }
  std::size_t dim() const noexcept { return means.cols(); }
};

inline constexpr int kDefaultKmeansRestarts = 4;

struct GmmConfig {
  int max_em_iters = 100;
  double em_tol = 1e-4;  // relative log-likelihood improvement
  double var_floor = 1e-6;
  double collapse_weight = 1e-8;
  int kmeans_iters = 100;
  int kmeans_restarts = kDefaultKmeansRestarts;  // best-of-n k-means initializations (lowest inertia)
};

struct GmmFit {
  GmmParams params;
  double log_likelihood = 0.0;  // mean per point
  // Mean log-likelihood of the initial parameters and after each M-step.
  std::vector<double> ll_trace;
  int iterations = 0;
  bool converged = false;
  int reinit_at = -1;  // trace index right after a collapse reinit, or -1
};

/// Indices j with attention_j >= mean(attention) and attention_j > 0.
std::vector<std::size_t> filter_patches(std::span<const float> attention);
inline std::vector<std::size_t> filter_patches(const Sample& s) { return filter_patches(s.attention); }

/// k-means++ seeding: k distinct rows of `points` sampled by squared distance.
Matrix kmeanspp_seeds(const Matrix& points, std::size_t k, Rng& rng);

struct KMeansResult {
  Matrix centers;
  std::vector<int> labels;
  double inertia = 0.0;
};

/// Lloyd iterations from k-means++ seeds; an emptied cluster is reseeded at
/// the point farthest from its center. With restarts > 1 the lowest-inertia
/// run is kept.
KMeansResult kmeans(const Matrix& points, std::size_t k, Rng& rng, int max_iters = 100,
                    int restarts = 1);

/// EM for a K-component diagonal Gaussian mixture, initialized from k-means.
/// Throws if m < K or if a component collapses a second time.
GmmFit fit_gmm(const Matrix& points, std::size_t k, const GmmConfig& cfg, Rng& rng);
/// EM from given initial parameters (K = init.k()).
GmmFit fit_gmm_from(const Matrix& points, GmmParams init, const GmmConfig& cfg);

/// Per-point log N(x; mu_k, diag var_k) + log pi_k, m x K.
Matrix component_log_joint(const Matrix& points, const GmmParams& p);

/// Mean silhouette coefficient (Euclidean). A point alone in its cluster
/// scores 0, as does a point with a = b = 0. Needs >= 2 non-empty clusters.
double silhouette_score(const Matrix& points, std::span<const int> labels);

struct KSelection {
  int k = 0;
  std::vector<int> candidates;
  std::vector<double> mean_scores;  // per candidate k
};

/// Picks K in [k_min, k_max] maximizing the silhouette of k-means clusterings
/// averaged over the point sets (one per old class); ties go to the smaller K.
KSelection select_k(const std::vector<Matrix>& sets, int k_min, int k_max, std::uint64_t seed,
                    unsigned threads = 1);

/// Counts patches whose components all underflowed (row set to uniform).
std::size_t posterior_underflow_count() noexcept;

/// N_p x K posterior part map for the rows of `patches`.
Matrix part_posteriors(const Matrix& patches, const GmmParams& p);

/// v^k = sum_j M(j, k) f^j, i.e. M^T F (K x d).
Matrix part_features(const Matrix& m, const Matrix& patches);

/// Parts that are the argmax posterior of at least one listed patch (sorted).
std::vector<int> present_parts(const Matrix& m, std::span<const std::size_t> patches);

std::vector<int> shared_parts(const Matrix& m1, std::span<const std::size_t> filtered1,
                              const Matrix& m2, std::span<const std::size_t> filtered2);

/// Points a sample contributes to its class GMM: its filtered fixed patches,
/// optionally l2-normalized.
Matrix gmm_points(const Sample& s, std::size_t dim, bool normalize);
/// All fixed patches of a sample under the same transform (posterior input).
Matrix gmm_inputs(const Sample& s, std::size_t dim, bool normalize);

struct PartModel {
  std::vector<GmmParams> classes;  // indexed by class
  bool normalized_inputs = false;
};

/// Fits one GMM per class on its candidates' filtered fixed patches. Class c
/// draws its initialization from make_rng(seed, c), so results do not depend
/// on the thread count. Components are then put in a common order across
/// classes: against `reference` (K x d) when given, otherwise via
/// align_components.
PartModel fit_class_gmms(const FeatureDataset& ds, const CandidateSet& cands, std::size_t k,
                         const GmmConfig& cfg, bool normalize, std::uint64_t seed,
                         unsigned threads = 1, const Matrix* reference = nullptr);

/// Reorders each class's components so index k means the same part in every
/// class: component means are matched (Hungarian, squared distance) to a
/// reference obtained by k-means over all classes' component means.
void align_components(std::vector<GmmParams>& gmms, std::uint64_t seed);

/// Hungarian-matches every model's components to the rows of `reference`.
void align_to_reference(std::vector<GmmParams>& gmms, const Matrix& reference);

/// Per-slot average of the component means (K x d); a stable reference for
/// later refits.
Matrix slot_means(const std::vector<GmmParams>& gmms);

/// "PGMM" | u32 version | u32 C | u32 d | u32 flags (bit0: normalized inputs)
/// | per class: u32 K | f32[K] weights | f32[K*d] means | f32[K*d] variances.
void save_part_model(const PartModel& model, const std::filesystem::path& path);
PartModel load_part_model(const std::filesystem::path& path);

}  // namespace partdisc
