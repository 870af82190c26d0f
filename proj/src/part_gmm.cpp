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

#include "partdisc/part_gmm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iterator>
#include <limits>
#include <numeric>
#include <numbers>
#include <string>

#include "byteio.hpp"
#include "partdisc/error.hpp"
#include "partdisc/evaluation.hpp"
#include "partdisc/linalg.hpp"
#include "partdisc/log.hpp"
#include "partdisc/simd/kernels.hpp"

namespace partdisc {
namespace {

constexpr std::uint32_t kGmmVersion = 1;
constexpr std::uint32_t kFlagNormalized = 0x1;

std::atomic<std::size_t> g_underflow{0};

std::vector<double> column_variance(const Matrix& points, std::span<const std::size_t> rows,
                                    std::span<const double> mean, double floor) {
  std::vector<double> var(points.cols(), 0.0);
  for (std::size_t i : rows) {
    const auto x = points.row(i);
    for (std::size_t j = 0; j < var.size(); ++j) var[j] += (x[j] - mean[j]) * (x[j] - mean[j]);
  }
  for (double& v : var) v = std::max(rows.empty() ? floor : v / static_cast<double>(rows.size()), floor);
  return var;
}

std::vector<std::size_t> all_rows(std::size_t m) {
  std::vector<std::size_t> rows(m);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

std::vector<double> column_mean(const Matrix& points) {
  std::vector<double> mean(points.cols(), 0.0);
  for (std::size_t i = 0; i < points.rows(); ++i) simd::axpy(1.0, points.row(i), mean);
  for (double& v : mean) v /= static_cast<double>(points.rows());
  return mean;
}

// Mean over points of log sum_k exp(joint); leaves log responsibilities in `logr`.
double e_step(const Matrix& points, const GmmParams& p, Matrix& logr) {
  logr = component_log_joint(points, p);
  double total = 0.0;
  for (std::size_t i = 0; i < logr.rows(); ++i) {
    auto row = logr.row(i);
    const double lse = log_sum_exp(row);
    total += lse;
    for (double& v : row) v -= lse;
  }
  return total / static_cast<double>(points.rows());
}

}  // namespace

std::vector<std::size_t> filter_patches(std::span<const float> attention) {
  std::vector<std::size_t> out;
  if (attention.empty()) return out;
  double mean = 0.0;
  for (float a : attention) mean += a;
  mean /= static_cast<double>(attention.size());
  for (std::size_t j = 0; j < attention.size(); ++j)
    if (attention[j] > 0.0f && static_cast<double>(attention[j]) >= mean) out.push_back(j);
  return out;
}

Matrix kmeanspp_seeds(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t m = points.rows();
  require(k >= 1 && k <= m, "kmeans++: need 1 <= k <= number of points");
  Matrix centers(k, points.cols());
  std::vector<double> d2(m, std::numeric_limits<double>::infinity());
  std::vector<char> taken(m, 0);
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (std::size_t i = 0; i < m; ++i) total += taken[i] ? 0.0 : d2[i];
      if (total > 0.0) {
        double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        pick = m;
        for (std::size_t i = 0; i < m; ++i) {
          if (taken[i]) continue;
          pick = i;
          u -= d2[i];
          if (u < 0.0) break;
        }
      } else {
        // Every remaining point duplicates a center; take any untaken one.
        std::vector<std::size_t> free;
        for (std::size_t i = 0; i < m; ++i)
          if (!taken[i]) free.push_back(i);
        pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
      }
    }
    taken[pick] = 1;
    std::copy(points.row(pick).begin(), points.row(pick).end(), centers.row(c).begin());
    for (std::size_t i = 0; i < m; ++i)
      d2[i] = std::min(d2[i], simd::squared_distance(points.row(i), centers.row(c)));
  }
  return centers;
}

namespace {
KMeansResult lloyd(const Matrix& points, std::size_t k, Rng& rng, int max_iters);
}  // namespace

KMeansResult kmeans(const Matrix& points, std::size_t k, Rng& rng, int max_iters, int restarts) {
  require(restarts >= 1, "kmeans: restarts must be >= 1");
  KMeansResult best = lloyd(points, k, rng, max_iters);
  for (int r = 1; r < restarts; ++r) {
    auto next = lloyd(points, k, rng, max_iters);
    if (next.inertia < best.inertia) best = std::move(next);
  }
  return best;
}

namespace {

KMeansResult lloyd(const Matrix& points, std::size_t k, Rng& rng, int max_iters) {
  const std::size_t m = points.rows();
  const std::size_t d = points.cols();
  KMeansResult res;
  res.centers = kmeanspp_seeds(points, k, rng);
  res.labels.assign(m, -1);
  std::vector<double> best_d2(m);
  for (int it = 0; it <= max_iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < m; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = simd::squared_distance(points.row(i), res.centers.row(c));
        if (dd < bd) {
          bd = dd;
          best = static_cast<int>(c);
        }
      }
      best_d2[i] = bd;
      if (res.labels[i] != best) {
        res.labels[i] = best;
        changed = true;
      }
    }
    if (!changed || it == max_iters) break;
    Matrix sums(k, d, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const auto c = static_cast<std::size_t>(res.labels[i]);
      simd::axpy(1.0, points.row(i), sums.row(c));
      ++counts[c];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        const auto far = static_cast<std::size_t>(
            std::max_element(best_d2.begin(), best_d2.end()) - best_d2.begin());
        std::copy(points.row(far).begin(), points.row(far).end(), res.centers.row(c).begin());
        best_d2[far] = 0.0;
        continue;
      }
      auto row = res.centers.row(c);
      const auto s = sums.row(c);
      for (std::size_t j = 0; j < d; ++j) row[j] = s[j] / static_cast<double>(counts[c]);
    }
  }
  res.inertia = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    res.inertia += simd::squared_distance(points.row(i), res.centers.row(static_cast<std::size_t>(res.labels[i])));
  return res;
}

}  // namespace

Matrix component_log_joint(const Matrix& points, const GmmParams& p) {
  const std::size_t k = p.k();
  const std::size_t d = p.dim();
  require(points.cols() == d, "GMM: point dimension does not match the mixture");
  Matrix inv_var(k, d);
  std::vector<double> constant(k);
  for (std::size_t c = 0; c < k; ++c) {
    double log_det = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      inv_var(c, j) = 1.0 / p.variances(c, j);
      log_det += std::log(p.variances(c, j));
    }
    constant[c] = std::log(p.weights[c]) -
                  0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
  }
  Matrix out(points.rows(), k);
  for (std::size_t i = 0; i < points.rows(); ++i)
    for (std::size_t c = 0; c < k; ++c)
      out(i, c) = constant[c] - 0.5 * simd::diag_mahalanobis(points.row(i), p.means.row(c), inv_var.row(c));
  return out;
}

GmmFit fit_gmm(const Matrix& points, std::size_t k, const GmmConfig& cfg, Rng& rng) {
  const std::size_t m = points.rows();
  const std::size_t d = points.cols();
  if (k < 1 || m < k) {
    fail(ErrorKind::kInvalidArgument, "fit_gmm: " + std::to_string(m) + " points cannot support " +
                                          std::to_string(k) + " components");
  }
  require(d >= 1, "fit_gmm: zero-dimensional points");
  for (double v : points.flat())
    if (!std::isfinite(v)) fail(ErrorKind::kInvalidArgument, "fit_gmm: non-finite point");

  // Hard k-means clusters give the initial weights, means and variances.
  const auto global_var = column_variance(points, all_rows(m), column_mean(points), cfg.var_floor);
  GmmParams p;
  const auto km = kmeans(points, k, rng, cfg.kmeans_iters, cfg.kmeans_restarts);
  p.weights.assign(k, 0.0);
  p.means = km.centers;
  p.variances = Matrix(k, d);
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < m; ++i) members[static_cast<std::size_t>(km.labels[i])].push_back(i);
  for (std::size_t c = 0; c < k; ++c) {
    p.weights[c] = std::max(static_cast<double>(members[c].size()), 1.0);
    const auto var = members[c].size() > 1
                         ? column_variance(points, members[c], p.means.row(c), cfg.var_floor)
                         : global_var;
    std::copy(var.begin(), var.end(), p.variances.row(c).begin());
  }
  const double tw = std::accumulate(p.weights.begin(), p.weights.end(), 0.0);
  for (double& w : p.weights) w /= tw;
  return fit_gmm_from(points, std::move(p), cfg);
}

GmmFit fit_gmm_from(const Matrix& points, GmmParams init, const GmmConfig& cfg) {
  const std::size_t m = points.rows();
  const std::size_t d = points.cols();
  const std::size_t k = init.k();
  require(k >= 1 && m >= k && init.dim() == d && init.variances.rows() == k && init.variances.cols() == d,
          "fit_gmm_from: initial parameters do not match the points");
  const auto global_var = column_variance(points, all_rows(m), column_mean(points), cfg.var_floor);
  GmmFit fit;
  fit.params = std::move(init);
  GmmParams& p = fit.params;

  Matrix logr;
  double ll = e_step(points, p, logr);
  fit.ll_trace.push_back(ll);
  bool reinit_used = false;
  std::vector<double> nk(k);
  for (int it = 1; it <= cfg.max_em_iters; ++it) {
    // M-step.
    const GmmParams before = p;
    std::fill(nk.begin(), nk.end(), 0.0);
    Matrix resp(m, k);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < k; ++c) nk[c] += (resp(i, c) = std::exp(logr(i, c)));
    std::vector<std::size_t> collapsed;
    for (std::size_t c = 0; c < k; ++c) {
      if (nk[c] / static_cast<double>(m) < cfg.collapse_weight) {
        collapsed.push_back(c);
        continue;
      }
      p.weights[c] = nk[c] / static_cast<double>(m);
      auto mu = p.means.row(c);
      std::fill(mu.begin(), mu.end(), 0.0);
      for (std::size_t i = 0; i < m; ++i) simd::axpy(resp(i, c), points.row(i), mu);
      for (double& v : mu) v /= nk[c];
      auto var = p.variances.row(c);
      std::fill(var.begin(), var.end(), 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        const auto x = points.row(i);
        for (std::size_t j = 0; j < d; ++j) var[j] += resp(i, c) * (x[j] - mu[j]) * (x[j] - mu[j]);
      }
      for (double& v : var) v = std::max(v / nk[c], cfg.var_floor);
    }
    if (!collapsed.empty()) {
      if (reinit_used) {
        fail(ErrorKind::kNumerical, "fit_gmm: component " + std::to_string(collapsed.front()) +
                                        " collapsed again after reinitialization");
      }
      reinit_used = true;
      // Restart each collapsed component at the point worst explained by the
      // surviving ones (largest Mahalanobis distance to its nearest component),
      // measured under the model that produced the collapse.
      std::vector<char> dead(k, 0);
      for (std::size_t c : collapsed) dead[c] = 1;
      for (std::size_t c : collapsed) {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < m; ++i) {
          double nearest = std::numeric_limits<double>::infinity();
          for (std::size_t o = 0; o < k; ++o) {
            if (dead[o]) continue;
            double md = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double diff = points(i, j) - before.means(o, j);
              md += diff * diff / before.variances(o, j);
            }
            nearest = std::min(nearest, md);
          }
          if (nearest > far_d) {
            far_d = nearest;
            far = i;
          }
        }
        std::copy(points.row(far).begin(), points.row(far).end(), p.means.row(c).begin());
        std::copy(global_var.begin(), global_var.end(), p.variances.row(c).begin());
        p.weights[c] = 1.0 / static_cast<double>(k);
        dead[c] = 0;
      }
      const double tw = std::accumulate(p.weights.begin(), p.weights.end(), 0.0);
      for (double& w : p.weights) w /= tw;
      fit.reinit_at = static_cast<int>(fit.ll_trace.size());
      log::info("fit_gmm: reinitialized " + std::to_string(collapsed.size()) + " collapsed component(s)");
    }

    const double next = e_step(points, p, logr);
    fit.ll_trace.push_back(next);
    fit.iterations = it;
    const double rel = (next - ll) / std::max(std::abs(ll), 1e-300);
    ll = next;
    if (collapsed.empty() && rel < cfg.em_tol) {
      fit.converged = true;
      break;
    }
  }
  fit.log_likelihood = ll;
  return fit;
}

double silhouette_score(const Matrix& points, std::span<const int> labels) {
  const std::size_t m = points.rows();
  require(labels.size() == m, "silhouette_score: one label per point required");
  int max_label = -1;
  for (int l : labels) {
    require(l >= 0, "silhouette_score: negative label");
    max_label = std::max(max_label, l);
  }
  const auto nc = static_cast<std::size_t>(max_label + 1);
  std::vector<std::size_t> size(nc, 0);
  for (int l : labels) ++size[static_cast<std::size_t>(l)];
  const auto nonempty = static_cast<std::size_t>(std::count_if(size.begin(), size.end(), [](std::size_t s) { return s > 0; }));
  require(nonempty >= 2, "silhouette_score: need at least two non-empty clusters");

  double total = 0.0;
  std::vector<double> sum(nc);
  for (std::size_t i = 0; i < m; ++i) {
    const auto own = static_cast<std::size_t>(labels[i]);
    if (size[own] == 1) continue;  // scores 0
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      sum[static_cast<std::size_t>(labels[j])] += std::sqrt(simd::squared_distance(points.row(i), points.row(j)));
    }
    const double a = sum[own] / static_cast<double>(size[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < nc; ++c)
      if (c != own && size[c] > 0) b = std::min(b, sum[c] / static_cast<double>(size[c]));
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(m);
}

KSelection select_k(const std::vector<Matrix>& sets, int k_min, int k_max, std::uint64_t seed,
                    unsigned threads) {
  require(k_min >= 2 && k_max >= k_min, "select_k: need 2 <= k_min <= k_max");
  KSelection out;
  for (int k = k_min; k <= k_max; ++k) out.candidates.push_back(k);
  const std::size_t nk = out.candidates.size();

  std::vector<char> usable(sets.size(), 0);
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (sets[s].rows() < static_cast<std::size_t>(k_max) + 1) {
      log::warn("select_k: skipping set " + std::to_string(s) + " with " +
                std::to_string(sets[s].rows()) + " points (need " + std::to_string(k_max + 1) + ")");
      continue;
    }
    usable[s] = 1;
  }
  const auto n_usable = static_cast<std::size_t>(std::count(usable.begin(), usable.end(), 1));
  if (n_usable == 0) fail(ErrorKind::kInvalidArgument, "select_k: no point set is large enough");

  Matrix scores(sets.size(), nk, 0.0);
  parallel_for(sets.size(), threads, [&](std::size_t s) {
    if (!usable[s]) return;
    for (std::size_t t = 0; t < nk; ++t) {
      const int k = out.candidates[t];
      Rng rng = make_rng(seed, s * 1024 + static_cast<std::size_t>(k));
      const auto km = kmeans(sets[s], static_cast<std::size_t>(k), rng, 100, kDefaultKmeansRestarts);
      // Coincident points can leave fewer than two clusters: no structure, score 0.
      std::vector<int> distinct(km.labels);
      std::sort(distinct.begin(), distinct.end());
      const bool split = std::unique(distinct.begin(), distinct.end()) - distinct.begin() >= 2;
      scores(s, t) = split ? silhouette_score(sets[s], km.labels) : 0.0;
    }
  });
  out.mean_scores.assign(nk, 0.0);
  for (std::size_t s = 0; s < sets.size(); ++s)
    if (usable[s])
      for (std::size_t t = 0; t < nk; ++t) out.mean_scores[t] += scores(s, t) / static_cast<double>(n_usable);
  std::size_t best = 0;
  for (std::size_t t = 1; t < nk; ++t)
    if (out.mean_scores[t] > out.mean_scores[best]) best = t;
  out.k = out.candidates[best];
  return out;
}

std::size_t posterior_underflow_count() noexcept { return g_underflow.load(); }

Matrix part_posteriors(const Matrix& patches, const GmmParams& p) {
  Matrix m = component_log_joint(patches, p);
  const double uniform = 1.0 / static_cast<double>(p.k());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    const double lse = log_sum_exp(row);
    if (!std::isfinite(lse)) {
      ++g_underflow;
      std::fill(row.begin(), row.end(), uniform);
      continue;
    }
    for (double& v : row) v = std::exp(v - lse);
  }
  return m;
}

Matrix part_features(const Matrix& m, const Matrix& patches) {
  require(m.rows() == patches.rows(), "part_features: map and patches disagree on N_p");
  return matmul(transpose(m), patches);
}

std::vector<int> present_parts(const Matrix& m, std::span<const std::size_t> patches) {
  std::vector<char> seen(m.cols(), 0);
  for (std::size_t j : patches) seen[argmax(m.row(j))] = 1;
  std::vector<int> out;
  for (std::size_t k = 0; k < seen.size(); ++k)
    if (seen[k]) out.push_back(static_cast<int>(k));
  return out;
}

std::vector<int> shared_parts(const Matrix& m1, std::span<const std::size_t> filtered1,
                              const Matrix& m2, std::span<const std::size_t> filtered2) {
  const auto a = present_parts(m1, filtered1);
  const auto b = present_parts(m2, filtered2);
  std::vector<int> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

Matrix gmm_inputs(const Sample& s, std::size_t dim, bool normalize) {
  Matrix x = patch_matrix(s, dim, false);
  if (normalize) normalize_rows(x);
  return x;
}

Matrix gmm_points(const Sample& s, std::size_t dim, bool normalize) {
  const auto keep = filter_patches(s);
  Matrix x(keep.size(), dim);
  for (std::size_t r = 0; r < keep.size(); ++r)
    for (std::size_t j = 0; j < dim; ++j) x(r, j) = s.patches_fixed[keep[r] * dim + j];
  if (normalize) normalize_rows(x);
  return x;
}

PartModel fit_class_gmms(const FeatureDataset& ds, const CandidateSet& cands, std::size_t k,
                         const GmmConfig& cfg, bool normalize, std::uint64_t seed, unsigned threads,
                         const Matrix* reference) {
  const std::size_t c = cands.members.size();
  const std::size_t d = ds.meta.dim;
  PartModel model;
  model.normalized_inputs = normalize;
  model.classes.resize(c);
  parallel_for(c, threads, [&](std::size_t cls) {
    std::size_t rows = 0;
    std::vector<Matrix> chunks;
    for (std::size_t i : cands.members[cls]) {
      chunks.push_back(gmm_points(ds.samples[i], d, normalize));
      rows += chunks.back().rows();
    }
    if (rows < k) {
      fail(ErrorKind::kNumerical, "class " + std::to_string(cls) + ": " + std::to_string(rows) +
                                      " filtered patches cannot support " + std::to_string(k) +
                                      " parts");
    }
    Matrix pts(rows, d);
    std::size_t r = 0;
    for (const auto& ch : chunks)
      for (std::size_t i = 0; i < ch.rows(); ++i, ++r)
        std::copy(ch.row(i).begin(), ch.row(i).end(), pts.row(r).begin());
    Rng rng = make_rng(seed, cls);
    model.classes[cls] = fit_gmm(pts, k, cfg, rng).params;
  });
  if (reference) {
    align_to_reference(model.classes, *reference);
  } else {
    align_components(model.classes, seed);
  }
  return model;
}

namespace {

void check_same_shape(const std::vector<GmmParams>& gmms) {
  for (const auto& g : gmms)
    require(g.k() == gmms.front().k() && g.dim() == gmms.front().dim(), "component alignment: mixed shapes");
}

}  // namespace

void align_to_reference(std::vector<GmmParams>& gmms, const Matrix& reference) {
  if (gmms.empty()) return;
  check_same_shape(gmms);
  const std::size_t k = gmms.front().k();
  const std::size_t d = gmms.front().dim();
  require(reference.rows() == k && reference.cols() == d, "align_to_reference: reference is not K x d");
  if (k <= 1) return;
  for (auto& g : gmms) {
    Matrix cost(k, k);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) cost(a, b) = simd::squared_distance(g.means.row(a), reference.row(b));
    const auto perm = hungarian_match(cost);  // component a -> slot perm[a]
    GmmParams out{std::vector<double>(k), Matrix(k, d), Matrix(k, d)};
    for (std::size_t a = 0; a < k; ++a) {
      const auto slot = static_cast<std::size_t>(perm[a]);
      out.weights[slot] = g.weights[a];
      std::copy(g.means.row(a).begin(), g.means.row(a).end(), out.means.row(slot).begin());
      std::copy(g.variances.row(a).begin(), g.variances.row(a).end(), out.variances.row(slot).begin());
    }
    g = std::move(out);
  }
}

void align_components(std::vector<GmmParams>& gmms, std::uint64_t seed) {
  if (gmms.empty()) return;
  check_same_shape(gmms);
  const std::size_t k = gmms.front().k();
  const std::size_t d = gmms.front().dim();
  if (k <= 1) return;
  Matrix pooled(gmms.size() * k, d);
  for (std::size_t c = 0; c < gmms.size(); ++c)
    for (std::size_t j = 0; j < k; ++j)
      std::copy(gmms[c].means.row(j).begin(), gmms[c].means.row(j).end(), pooled.row(c * k + j).begin());
  Rng rng = make_rng(seed, 0xA11CE);
  align_to_reference(gmms, kmeans(pooled, k, rng, 100, kDefaultKmeansRestarts).centers);
}

Matrix slot_means(const std::vector<GmmParams>& gmms) {
  require(!gmms.empty(), "slot_means: no models");
  check_same_shape(gmms);
  Matrix m(gmms.front().k(), gmms.front().dim(), 0.0);
  for (const auto& g : gmms)
    for (std::size_t i = 0; i < m.flat().size(); ++i) m.flat()[i] += g.means.flat()[i];
  for (double& v : m.flat()) v /= static_cast<double>(gmms.size());
  return m;
}

void save_part_model(const PartModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  detail::ByteWriter w(out);
  detail::write_tag(w, "PGMM", kGmmVersion);
  const std::size_t d = model.classes.empty() ? 0 : model.classes.front().dim();
  w.u32(static_cast<std::uint32_t>(model.classes.size()));
  w.u32(static_cast<std::uint32_t>(d));
  w.u32(model.normalized_inputs ? kFlagNormalized : 0u);
  auto put = [&](std::span<const double> v) {
    std::vector<float> buf(v.begin(), v.end());
    w.f32s(buf);
  };
  for (const auto& g : model.classes) {
    require(g.dim() == d, "save_part_model: mixed dimensions");
    w.u32(static_cast<std::uint32_t>(g.k()));
    put(g.weights);
    put(g.means.flat());
    put(g.variances.flat());
  }
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

PartModel load_part_model(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes);
  detail::read_tag(r, "PGMM", kGmmVersion, path);
  detail::need(r, 12, path);
  const std::size_t c = r.u32();
  const std::size_t d = r.u32();
  PartModel model;
  model.normalized_inputs = (r.u32() & kFlagNormalized) != 0;
  auto get = [&](std::span<double> out) {
    detail::need(r, out.size() * 4, path);
    std::vector<float> buf(out.size());
    r.f32s(buf);
    for (std::size_t i = 0; i < buf.size(); ++i) {
      if (!std::isfinite(buf[i])) fail(ErrorKind::kValidation, path.string() + ": non-finite GMM value");
      out[i] = buf[i];
    }
  };
  for (std::size_t cls = 0; cls < c; ++cls) {
    detail::need(r, 4, path);
    const std::size_t k = r.u32();
    GmmParams g{std::vector<double>(k), Matrix(k, d), Matrix(k, d)};
    get(g.weights);
    get(g.means.flat());
    get(g.variances.flat());
    double tw = 0.0;
    for (double w : g.weights) {
      if (!(w > 0.0)) fail(ErrorKind::kValidation, path.string() + ": non-positive mixture weight");
      tw += w;
    }
    for (double& w : g.weights) w /= tw;
    for (double v : g.variances.flat())
      if (!(v > 0.0)) fail(ErrorKind::kValidation, path.string() + ": non-positive variance");
    model.classes.push_back(std::move(g));
  }
  return model;
}

}  // namespace partdisc
