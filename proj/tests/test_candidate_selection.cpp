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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <gtest/gtest.h>

#include "partdisc/candidate_selection.hpp"
#include "partdisc/error.hpp"
#include "partdisc/linalg.hpp"
#include "partdisc/log.hpp"
#include "partdisc/simd/kernels.hpp"
#include "partdisc/transport.hpp"
#include "test_util.hpp"

namespace partdisc {
namespace {

using testing::random_matrix;
using testing::random_simplex_rows;

// Dataset whose CLS features are the rows of `cls`; labels[i] < 0 means unknown.
FeatureDataset make_dataset(const Matrix& cls, const std::vector<int>& labels, int num_classes,
                            std::vector<int> old, const std::vector<bool>& labeled) {
  FeatureDataset ds;
  ds.has_learnable = false;
  ds.meta.num_classes = num_classes;
  ds.meta.old_classes = std::move(old);
  ds.meta.dim = cls.cols();
  ds.meta.num_patches = 1;
  for (std::size_t i = 0; i < cls.rows(); ++i) {
    Sample s;
    s.id = 100 + i;
    if (labels[i] >= 0) s.label = labels[i];
    for (double v : cls.row(i)) s.cls_fixed.push_back(static_cast<float>(v));
    s.patches_fixed.assign(cls.cols(), 0.0f);
    s.attention = {1.0f};
    if (labeled[i]) ds.meta.labeled_ids.push_back(s.id);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

double angle_deg(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
  const double c = std::clamp(dot / (l2_norm(a) * l2_norm(b)), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

TEST(ComputeNs, Examples) {
  EXPECT_EQ(compute_ns(1.0, 2000, 98), 20);
  EXPECT_EQ(compute_ns(1.0, 98, 98), 1);
  EXPECT_EQ(compute_ns(0.5, 100, 100), 1);
  EXPECT_EQ(compute_ns(0.8, 1000, 10), 80);
  EXPECT_THROW(compute_ns(1.0, 10, 0), Error);
  EXPECT_THROW(compute_ns(0.0, 10, 1), Error);
}

TEST(ComputeAssignments, OneHotAndTies) {
  Matrix q(3, 4, 0.0);
  q(0, 2) = 1.0;
  q(1, 3) = 1.0;
  for (std::size_t j = 0; j < 4; ++j) q(2, j) = 0.25;
  EXPECT_EQ(compute_assignments(q), (std::vector<int>{2, 3, 0}));
}

TEST(ComputeAssignments, MatchesReferenceScanAfterSinkhorn) {
  std::mt19937_64 rng(3);
  const Matrix q = sinkhorn_adjust(random_simplex_rows(50, 5, rng)).q;
  const auto a = compute_assignments(q);
  for (std::size_t i = 0; i < 50; ++i) {
    int best = 0;
    for (int j = 1; j < 5; ++j)
      if (q(i, static_cast<std::size_t>(j)) > q(i, static_cast<std::size_t>(best))) best = j;
    EXPECT_EQ(a[i], best);
  }
}

TEST(Calibrate, EverythingAssignedToOneClass) {
  std::mt19937_64 rng(5);
  const Matrix f = normalized_rows(random_matrix(8, 4, rng));
  Matrix q(8, 3, 0.25);
  for (std::size_t i = 0; i < 8; ++i) q(i, 0) = 0.5;
  const auto p = calibrate_prototypes(q, f, 3);
  std::vector<double> mean(4, 0.0), head(4, 0.0);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t k = 0; k < 4; ++k) mean[k] += f(i, k);
  // Classes 1 and 2 win nothing; all scores tie, so the fallback takes rows 0..2.
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) head[k] += f(i, k);
  const double nm = l2_norm(mean), nh = l2_norm(head);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(p.w(0, k), mean[k] / nm, 1e-12);
    EXPECT_NEAR(p.w(1, k), head[k] / nh, 1e-12);
    EXPECT_NEAR(p.w(2, k), head[k] / nh, 1e-12);
  }
  check_unit_rows(p);
}

TEST(Calibrate, SingleMemberIsItsFeature) {
  std::mt19937_64 rng(6);
  const Matrix f = normalized_rows(random_matrix(4, 6, rng));
  Matrix q(4, 4, 0.0);
  for (std::size_t i = 0; i < 4; ++i) q(i, 3 - i) = 1.0;
  const auto p = calibrate_prototypes(q, f, 1);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(p.w(c, k), f(3 - c, k), 1e-12);
}

TEST(Calibrate, OneHotEqualsClusterMeanDirection) {
  std::mt19937_64 rng(7);
  const Matrix f = normalized_rows(random_matrix(30, 5, rng));
  Matrix q(30, 3, 0.0);
  for (std::size_t i = 0; i < 30; ++i) q(i, i % 3) = 1.0;
  const auto p = calibrate_prototypes(q, f, 1);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> mean(5, 0.0);
    for (std::size_t i = c; i < 30; i += 3)
      for (std::size_t k = 0; k < 5; ++k) mean[k] += f(i, k);
    EXPECT_LT(angle_deg(p.w.row(c), mean), 1e-6);
  }
}

TEST(Calibrate, InvariantToRescalingAClassWeights) {
  std::mt19937_64 rng(8);
  const Matrix f = normalized_rows(random_matrix(40, 6, rng));
  // Dominant entries keep the assignment fixed under the rescaling.
  Matrix q(40, 4, 0.0);
  std::uniform_real_distribution<double> u(0.5, 1.0);
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t j = 0; j < 4; ++j) q(i, j) = 0.01 * u(rng);
    q(i, i % 4) = u(rng);
  }
  const auto base = calibrate_prototypes(q, f, 1);
  for (double s : {0.6, 1.7, 20.0}) {
    Matrix scaled = q;
    for (std::size_t i = 0; i < 40; ++i) scaled(i, 2) *= s;
    ASSERT_EQ(compute_assignments(scaled), compute_assignments(q));
    const auto p = calibrate_prototypes(scaled, f, 1);
    for (std::size_t k = 0; k < p.w.size(); ++k) EXPECT_NEAR(p.w.flat()[k], base.w.flat()[k], 1e-12);
  }
}

TEST(Calibrate, RecoversClassMeanDirectionsWithinTenDegrees) {
  std::mt19937_64 rng(9);
  const std::size_t c = 5, d = 16, per = 60;
  const Matrix centers = normalized_rows(random_matrix(c, d, rng));
  Matrix f(c * per, d);
  std::normal_distribution<double> noise(0.0, 0.15);
  for (std::size_t i = 0; i < c * per; ++i)
    for (std::size_t k = 0; k < d; ++k) f(i, k) = centers(i / per, k) + noise(rng);
  normalize_rows(f);
  // Predictions from a deliberately perturbed classifier.
  Matrix w0 = centers;
  for (double& v : w0.flat()) v += noise(rng) * 2.0;
  normalize_rows(w0);
  const Matrix q = sinkhorn_adjust(softmax_rows(matmul_nt(f, w0), 0.1)).q;
  const auto p = calibrate_prototypes(q, f, static_cast<int>(per));
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = k * per; i < (k + 1) * per; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += f(i, j);
    EXPECT_LT(angle_deg(p.w.row(k), mean), 10.0) << "class " << k;
  }
}

TEST(Calibrate, RejectsShapeMismatch) {
  EXPECT_THROW(calibrate_prototypes(Matrix(3, 2, 0.5), Matrix(4, 2, 1.0), 1), Error);
}

TEST(Select, AllSamplesWhenNsEqualsN) {
  std::mt19937_64 rng(10);
  const Matrix f = normalized_rows(random_matrix(7, 3, rng));
  const auto ds = make_dataset(f, std::vector<int>(7, -1), 1, {}, std::vector<bool>(7, false));
  const Prototypes w{normalized_rows(random_matrix(1, 3, rng))};
  const auto cs = select_candidates(w, f, ds, 7);
  EXPECT_EQ(cs.members[0], (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
}

TEST(Select, TopSoftmaxScoresOnSeparatedClasses) {
  // Oracle: per-sample probabilities computed directly, then a full sort.
  // (A column of softmax probabilities is not ordered like the column of
  // cosines, since each row is normalized by its other logits.)
  std::mt19937_64 rng(11);
  const std::size_t d = 8, per = 20;
  const Matrix centers = normalized_rows(random_matrix(2, d, rng));
  Matrix f(2 * per, d);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (std::size_t i = 0; i < 2 * per; ++i)
    for (std::size_t k = 0; k < d; ++k) f(i, k) = centers(i / per, k) + noise(rng);
  normalize_rows(f);
  const auto ds = make_dataset(f, std::vector<int>(2 * per, -1), 2, {}, std::vector<bool>(2 * per, false));
  const Prototypes w{centers};
  const auto cs = select_candidates(w, f, ds, 5);
  auto prob = [&](std::size_t i, std::size_t c) {
    double z = 0.0;
    for (std::size_t k = 0; k < 2; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += f(i, j) * centers(k, j);
      z += std::exp(s);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += f(i, j) * centers(c, j);
    return std::exp(s) / z;
  };
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<std::size_t> order(2 * per);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return prob(a, c) > prob(b, c); });
    order.resize(5);
    std::sort(order.begin(), order.end());
    EXPECT_EQ(cs.members[c], order);
    // Well separated: every pick belongs to the matching class.
    for (std::size_t i : cs.members[c]) EXPECT_EQ(i / per, c);
  }
}

TEST(Select, SingleClassOrderIsCosineOrder) {
  std::mt19937_64 rng(17);
  const Matrix f = normalized_rows(random_matrix(30, 4, rng));
  const Matrix w = normalized_rows(random_matrix(1, 4, rng));
  Matrix logits = matmul_nt(f, w);
  // Raw cosines passed as scores rank exactly by cosine.
  const auto ds = make_dataset(f, std::vector<int>(30, -1), 1, {}, std::vector<bool>(30, false));
  const auto cs = select_from_scores(logits, ds, 6);
  std::vector<std::size_t> order(30);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits(a, 0) > logits(b, 0); });
  order.resize(6);
  std::sort(order.begin(), order.end());
  EXPECT_EQ(cs.members[0], order);
}

TEST(Select, OldClassesTakeExactlyTheirLabeledSamples) {
  std::mt19937_64 rng(12);
  const Matrix f = normalized_rows(random_matrix(10, 4, rng));
  const std::vector<int> labels{0, 0, 1, 1, 2, 2, 0, 1, 2, 2};
  const std::vector<bool> labeled{true, false, true, true, false, false, false, false, false, false};
  const auto ds = make_dataset(f, labels, 3, {0, 1}, labeled);
  const Prototypes w{normalized_rows(random_matrix(3, 4, rng))};
  const auto cs = select_candidates(w, f, ds, 2);
  EXPECT_EQ(cs.members[0], (std::vector<std::size_t>{0}));
  EXPECT_EQ(cs.members[1], (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(cs.members[2].size(), 2u);
  for (std::size_t i : cs.members[2]) EXPECT_FALSE(labeled[i]);
}

TEST(Select, InvariantUnderMonotoneScoreTransform) {
  std::mt19937_64 rng(13);
  const std::size_t n = 60, c = 4;
  const Matrix f = normalized_rows(random_matrix(n, 3, rng));
  const auto ds = make_dataset(f, std::vector<int>(n, -1), static_cast<int>(c), {}, std::vector<bool>(n, false));
  const Matrix scores = random_simplex_rows(n, c, rng);
  const auto base = select_from_scores(scores, ds, 9);
  Matrix moved = scores;
  for (std::size_t i = 0; i < n; ++i) {
    moved(i, 1) = std::exp(5.0 * scores(i, 1)) - 3.0;
    moved(i, 3) = std::pow(scores(i, 3), 3.0) * 1e4 + 7.0;
  }
  const auto after = select_from_scores(moved, ds, 9);
  EXPECT_EQ(after.members, base.members);
}

TEST(Select, TiesBrokenBySampleId) {
  const Matrix f(6, 2, 0.5);
  const auto ds = make_dataset(f, std::vector<int>(6, -1), 1, {}, std::vector<bool>(6, false));
  const auto cs = select_from_scores(Matrix(6, 1, 1.0), ds, 3);
  EXPECT_EQ(cs.members[0], (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Select, OversizedNsWarnsAndTakesAll) {
  const Matrix f(4, 2, 0.5);
  const auto ds = make_dataset(f, std::vector<int>(4, -1), 1, {}, std::vector<bool>(4, false));
  const auto before = log::warning_count();
  log::set_level(log::Level::kQuiet);
  const auto cs = select_from_scores(Matrix(4, 1, 1.0), ds, 10);
  log::set_level(log::Level::kWarn);
  EXPECT_EQ(cs.members[0].size(), 4u);
  EXPECT_GT(log::warning_count(), before);
}

TEST(Purity, PerfectSelectionIsOne) {
  CandidateSet cs;
  cs.members = {{0, 1}, {2, 3}, {4, 5}};
  const std::vector<int> labels{0, 0, 2, 2, 1, 1};  // new classes 1 and 2 swapped
  DatasetMeta meta;
  meta.num_classes = 3;
  meta.old_classes = {0};
  const auto r = candidate_purity(cs, labels, meta);
  EXPECT_DOUBLE_EQ(r.mean_new, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[0], 1.0);
  EXPECT_EQ(r.new_class_map, (std::vector<int>{2, 1}));
}

TEST(Purity, RandomSelectionIsNearChance) {
  // Monte-Carlo: a uniform random predictor yields purity close to 1 / C_new.
  // Hungarian alignment picks the best of C_new! pairings, which biases the
  // estimate slightly upward, so the tolerance is one-sided-wide.
  std::mt19937_64 rng(14);
  const int c_new = 5;
  const std::size_t per = 200, n = per * static_cast<std::size_t>(c_new);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i / per);
  const auto ds = make_dataset(Matrix(n, 1, 1.0), labels, c_new, {}, std::vector<bool>(n, false));
  double acc = 0.0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const Matrix scores = random_matrix(n, static_cast<std::size_t>(c_new), rng);
    acc += candidate_purity(select_from_scores(scores, ds, 100), labels, ds.meta).mean_new;
  }
  const double mean = acc / trials;
  EXPECT_GT(mean, 1.0 / c_new - 0.01);
  EXPECT_LT(mean, 1.0 / c_new + 0.05);
}

TEST(Prototypes, FileRoundTrip) {
  testing::TempDir dir;
  std::mt19937_64 rng(15);
  const Prototypes p{normalized_rows(random_matrix(6, 5, rng))};
  save_prototypes(p, dir / "p.bin");
  const auto q = load_prototypes(dir / "p.bin");
  ASSERT_EQ(q.w.rows(), 6u);
  ASSERT_EQ(q.w.cols(), 5u);
  for (std::size_t k = 0; k < p.w.size(); ++k) EXPECT_NEAR(q.w.flat()[k], p.w.flat()[k], 1e-6);
  check_unit_rows(q, 1e-12);
}

TEST(Prototypes, BadMagicAndTruncation) {
  testing::TempDir dir;
  {
    std::ofstream out(dir / "bad.bin", std::ios::binary);
    out << "NOPE0000";
  }
  try {
    load_prototypes(dir / "bad.bin");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kBadMagic);
  }
  std::mt19937_64 rng(16);
  save_prototypes(Prototypes{normalized_rows(random_matrix(3, 3, rng))}, dir / "p.bin");
  std::filesystem::resize_file(dir / "p.bin", 20);
  try {
    load_prototypes(dir / "p.bin");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTruncated);
  }
}

}  // namespace
}  // namespace partdisc
