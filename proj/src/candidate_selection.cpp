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

#include "partdisc/candidate_selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "byteio.hpp"
#include "partdisc/error.hpp"
#include "partdisc/evaluation.hpp"
#include "partdisc/linalg.hpp"
#include "partdisc/log.hpp"
#include "partdisc/simd/kernels.hpp"

namespace partdisc {
namespace {

constexpr std::uint32_t kProtoVersion = 1;

// Indices of the k largest values of score(i) over `pool`; equal scores are
// ordered by key(i) ascending.
template <class Score, class Key>
std::vector<std::size_t> top_k(std::vector<std::size_t> pool, std::size_t k, Score score, Key key) {
  k = std::min(k, pool.size());
  auto better = [&](std::size_t a, std::size_t b) {
    const double sa = score(a), sb = score(b);
    if (sa != sb) return sa > sb;
    return key(a) < key(b);
  };
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end(), better);
  pool.resize(k);
  return pool;
}

}  // namespace

void check_unit_rows(const Prototypes& p, double tol) {
  for (std::size_t c = 0; c < p.w.rows(); ++c) {
    const double n = l2_norm(p.w.row(c));
    if (std::abs(n - 1.0) > tol)
      fail(ErrorKind::kValidation, "prototype " + std::to_string(c) + " has norm " + std::to_string(n));
  }
}

int compute_ns(double gamma, std::size_t labeled_count, std::size_t old_class_count) {
  require(old_class_count >= 1, "compute_ns: need at least one old class");
  require(gamma > 0.0 && std::isfinite(gamma), "compute_ns: gamma must be positive");
  const double v = std::floor(gamma * static_cast<double>(labeled_count) /
                              static_cast<double>(old_class_count));
  return std::max(1, static_cast<int>(std::min(v, static_cast<double>(std::numeric_limits<int>::max()))));
}

std::vector<int> compute_assignments(const Matrix& q) {
  std::vector<int> a(q.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) a[i] = static_cast<int>(argmax(q.row(i)));
  return a;
}

Prototypes calibrate_prototypes(const Matrix& q, const Matrix& cls, int fallback_count) {
  require(q.rows() == cls.rows(), "calibrate_prototypes: Q and features disagree on n");
  require(fallback_count >= 1, "calibrate_prototypes: fallback_count must be >= 1");
  const std::size_t n = q.rows();
  const std::size_t c = q.cols();
  const std::size_t d = cls.cols();
  const auto assign = compute_assignments(q);

  std::vector<std::vector<std::size_t>> members(c);
  for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>(assign[i])].push_back(i);

  Prototypes out{Matrix(c, d, 0.0)};
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t k = 0; k < c; ++k) {
    auto& m = members[k];
    if (m.empty()) {
      // Early in training a class may win no argmax; borrow its best-scoring samples.
      m = top_k(all, static_cast<std::size_t>(fallback_count),
                [&](std::size_t i) { return q(i, k); }, [](std::size_t i) { return i; });
    }
    double weight = 0.0;
    auto row = out.w.row(k);
    for (std::size_t i : m) {
      weight += q(i, k);
      simd::axpy(q(i, k), cls.row(i), row);
    }
    const double norm = l2_norm(row);
    if (!(weight > 0.0) || !(norm > 0.0) || !std::isfinite(norm)) {
      fail(ErrorKind::kNumerical, "calibrate_prototypes: class " + std::to_string(k) +
                                      " has zero total weight");
    }
    // Dividing by the weight and then normalizing is one scaling.
    for (double& v : row) v /= norm;
  }
  return out;
}

Matrix prototype_scores(const Prototypes& w, const Matrix& cls) {
  require(w.dim() == cls.cols(), "prototype_scores: dimension mismatch");
  return softmax_rows(matmul_nt(cls, w.w), 1.0);
}

CandidateSet select_from_scores(const Matrix& scores, const FeatureDataset& ds, int ns) {
  require(scores.rows() == ds.size(), "select_from_scores: one score row per sample required");
  require(ns >= 1, "select_from_scores: N_s must be >= 1");
  const std::size_t c = scores.cols();
  CandidateSet out;
  out.ns = ns;
  out.members.resize(c);

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.samples[i];
    if (ds.meta.is_labeled(s.id)) {
      if (s.label && *s.label >= 0 && static_cast<std::size_t>(*s.label) < c)
        out.members[static_cast<std::size_t>(*s.label)].push_back(i);
    } else {
      pool.push_back(i);
    }
  }
  if (static_cast<std::size_t>(ns) > pool.size()) {
    log::warn("select_candidates: N_s = " + std::to_string(ns) + " exceeds the " +
              std::to_string(pool.size()) + " unlabeled samples; taking all");
  }
  for (std::size_t k = 0; k < c; ++k) {
    if (ds.meta.is_old(static_cast<int>(k))) continue;
    auto picked = top_k(pool, static_cast<std::size_t>(ns), [&](std::size_t i) { return scores(i, k); },
                        [&](std::size_t i) { return ds.samples[i].id; });
    std::sort(picked.begin(), picked.end());
    out.members[k] = std::move(picked);
  }
  return out;
}

CandidateSet select_candidates(const Prototypes& w, const Matrix& cls, const FeatureDataset& ds,
                               int ns) {
  return select_from_scores(prototype_scores(w, cls), ds, ns);
}

PurityReport candidate_purity(const CandidateSet& cands, std::span<const int> true_labels,
                              const DatasetMeta& meta) {
  const std::size_t c = cands.members.size();
  PurityReport rep;
  rep.per_class.assign(c, std::numeric_limits<double>::quiet_NaN());

  std::vector<int> new_idx;
  for (std::size_t k = 0; k < c; ++k)
    if (!meta.is_old(static_cast<int>(k))) new_idx.push_back(static_cast<int>(k));
  const std::size_t m = new_idx.size();

  // Rows: new class slots; columns: true new classes.
  Matrix cost(m, m, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t i : cands.members[static_cast<std::size_t>(new_idx[r])]) {
      const int y = true_labels[i];
      const auto it = std::find(new_idx.begin(), new_idx.end(), y);
      if (it != new_idx.end()) cost(r, static_cast<std::size_t>(it - new_idx.begin())) -= 1.0;
    }
  }
  const auto perm = hungarian_match(cost);
  rep.new_class_map.resize(m);
  for (std::size_t r = 0; r < m; ++r) rep.new_class_map[r] = new_idx[static_cast<std::size_t>(perm[r])];

  auto purity = [&](std::size_t k, int target) {
    const auto& mem = cands.members[k];
    if (mem.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::size_t hit = 0;
    for (std::size_t i : mem) hit += true_labels[i] == target;
    return static_cast<double>(hit) / static_cast<double>(mem.size());
  };
  for (std::size_t k = 0; k < c; ++k)
    if (meta.is_old(static_cast<int>(k))) rep.per_class[k] = purity(k, static_cast<int>(k));
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < m; ++r) {
    const auto k = static_cast<std::size_t>(new_idx[r]);
    rep.per_class[k] = purity(k, rep.new_class_map[r]);
    if (!std::isnan(rep.per_class[k])) {
      sum += rep.per_class[k];
      ++counted;
    }
  }
  rep.mean_new = counted ? sum / static_cast<double>(counted) : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

void save_prototypes(const Prototypes& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  detail::ByteWriter w(out);
  detail::write_tag(w, "PPRO", kProtoVersion);
  w.u32(static_cast<std::uint32_t>(p.w.rows()));
  w.u32(static_cast<std::uint32_t>(p.w.cols()));
  std::vector<float> buf(p.w.size());
  std::transform(p.w.flat().begin(), p.w.flat().end(), buf.begin(),
                 [](double v) { return static_cast<float>(v); });
  w.f32s(buf);
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

Prototypes load_prototypes(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes);
  detail::read_tag(r, "PPRO", kProtoVersion, path);
  detail::need(r, 8, path);
  const std::size_t c = r.u32();
  const std::size_t d = r.u32();
  detail::need(r, c * d * 4, path);
  std::vector<float> buf(c * d);
  r.f32s(buf);
  Prototypes p{Matrix(c, d)};
  for (std::size_t k = 0; k < buf.size(); ++k) {
    if (!std::isfinite(buf[k])) fail(ErrorKind::kValidation, path.string() + ": non-finite prototype");
    p.w.flat()[k] = buf[k];
  }
  // f32 storage loses a little; restore exact unit norm.
  normalize_rows(p.w);
  return p;
}

}  // namespace partdisc
