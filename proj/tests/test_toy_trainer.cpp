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


#include <cmath>
#include <cstring>
#include <fstream>

#include <gtest/gtest.h>

#include "partdisc/candidate_selection.hpp"
#include "partdisc/error.hpp"
#include "partdisc/linalg.hpp"
#include "partdisc/log.hpp"
#include "partdisc/run_config.hpp"
#include "partdisc/toy_trainer.hpp"
#include "test_util.hpp"

namespace partdisc {
namespace {

SynthConfig small_synth(std::uint64_t seed = 0) {
  SynthConfig s;
  s.num_classes = 6;
  s.old_class_count = 3;
  s.samples_per_class = 16;
  s.dim = 8;
  s.seed = seed;
  return s;
}

TrainConfig small_train(TrainMode mode, std::uint64_t seed = 0) {
  TrainConfig t;
  t.mode = mode;
  t.epochs = 3;
  t.warmup_epochs = 1;
  t.batch_size = 32;
  t.parts = 4;
  t.seed = seed;
  return t;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

void expect_terms_identical(const BaseTerms& a, const BaseTerms& b) {
  EXPECT_TRUE(same_bits(a.sup_cls, b.sup_cls));
  EXPECT_TRUE(same_bits(a.unsup_cls, b.unsup_cls));
  EXPECT_TRUE(same_bits(a.mean_entropy, b.mean_entropy));
  EXPECT_TRUE(same_bits(a.sup_rep, b.sup_rep));
  EXPECT_TRUE(same_bits(a.unsup_rep, b.unsup_rep));
  EXPECT_TRUE(same_bits(a.total, b.total));
}

void expect_history_identical(const std::vector<EpochMetrics>& a, const std::vector<EpochMetrics>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t e = 0; e < a.size(); ++e) {
    SCOPED_TRACE("epoch " + std::to_string(e));
    EXPECT_TRUE(same_bits(a[e].lr, b[e].lr));
    EXPECT_TRUE(same_bits(a[e].alpha, b[e].alpha));
    EXPECT_TRUE(same_bits(a[e].tau_t, b[e].tau_t));
    EXPECT_TRUE(same_bits(a[e].loss, b[e].loss));
    expect_terms_identical(a[e].global, b[e].global);
    expect_terms_identical(a[e].part, b[e].part);
    EXPECT_TRUE(same_bits(a[e].pdr, b[e].pdr));
    EXPECT_TRUE(same_bits(a[e].acc_all, b[e].acc_all));
    EXPECT_TRUE(same_bits(a[e].purity, b[e].purity));
  }
}

void expect_params_identical(ModelParams a, ModelParams b) {
  std::vector<Matrix> ta, tb;
  for_each_tensor(a, [&](const std::string&, Matrix& m) { ta.push_back(m); });
  for_each_tensor(b, [&](const std::string&, Matrix& m) { tb.push_back(m); });
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t t = 0; t < ta.size(); ++t) {
    ASSERT_EQ(ta[t].size(), tb[t].size());
    EXPECT_EQ(0, std::memcmp(ta[t].data(), tb[t].data(), ta[t].size() * sizeof(double))) << "tensor " << t;
  }
}

class ToyTrainer : public ::testing::Test {
 protected:
  void SetUp() override { log::set_level(log::Level::kWarn); }
};

TEST_F(ToyTrainer, SameSeedGivesBitIdenticalTrajectory) {
  const auto ds = generate_synthetic(small_synth());
  const auto a = train(ds, small_train(TrainMode::kFull));
  const auto b = train(ds, small_train(TrainMode::kFull));
  expect_history_identical(a.history, b.history);
  expect_params_identical(a.state.params, b.state.params);
}

TEST_F(ToyTrainer, ThreadCountDoesNotChangeTheTrajectory) {
  const auto ds = generate_synthetic(small_synth());
  auto cfg = small_train(TrainMode::kFull);
  const auto a = train(ds, cfg);
  cfg.threads = 3;
  const auto b = train(ds, cfg);
  expect_history_identical(a.history, b.history);
  expect_params_identical(a.state.params, b.state.params);
}

TEST_F(ToyTrainer, AlphaZeroMatchesBaselineBitwise) {
  const auto ds = generate_synthetic(small_synth(3));
  auto full = small_train(TrainMode::kFull, 3);
  full.loss.alpha = 0.0;
  const auto a = train(ds, full);
  const auto b = train(ds, small_train(TrainMode::kBaseline, 3));
  expect_history_identical(a.history, b.history);
  expect_params_identical(a.state.params, b.state.params);
}

TEST_F(ToyTrainer, PrototypesStayUnitNorm) {
  const auto ds = generate_synthetic(small_synth(1));
  for (int epochs : {1, 2, 3}) {
    auto cfg = small_train(TrainMode::kFull, 1);
    cfg.epochs = epochs;
    const auto r = train(ds, cfg);
    const Matrix& w = r.state.params.prototypes;
    for (std::size_t c = 0; c < w.rows(); ++c) EXPECT_NEAR(l2_norm(w.row(c)), 1.0, 1e-6);
  }
}

TEST_F(ToyTrainer, ScheduleRampsAlphaAndTeacherTemperature) {
  const auto ds = generate_synthetic(small_synth());
  auto cfg = small_train(TrainMode::kFull);
  cfg.epochs = 4;
  cfg.warmup_epochs = 2;
  cfg.tau_t_epochs = 2;
  cfg.loss.alpha = 2.0;
  const auto r = train(ds, cfg);
  const double alpha[] = {0.0, 1.0, 2.0, 2.0};
  const double tau[] = {0.07, 0.055, 0.04, 0.04};
  for (int e = 0; e < 4; ++e) {
    EXPECT_DOUBLE_EQ(r.history[e].alpha, alpha[e]);
    EXPECT_NEAR(r.history[e].tau_t, tau[e], 1e-15);
  }
  EXPECT_DOUBLE_EQ(r.history[0].lr, cfg.learning_rate);
  for (int e = 1; e < 4; ++e) EXPECT_LT(r.history[e].lr, r.history[e - 1].lr);
  EXPECT_EQ(r.history.back().pdr == 0.0, false);
}

TEST_F(ToyTrainer, BaselineReportsNoPartTerms) {
  const auto ds = generate_synthetic(small_synth());
  const auto r = train(ds, small_train(TrainMode::kBaseline));
  for (const auto& m : r.history) {
    EXPECT_EQ(m.alpha, 0.0);
    EXPECT_EQ(m.pdr, 0.0);
    EXPECT_EQ(m.part.total, 0.0);
  }
  EXPECT_TRUE(r.state.part_model.classes.empty());
}

TEST_F(ToyTrainer, AssignmentsFollowLabelsOnLabeledSamples) {
  const auto ds = generate_synthetic(small_synth());
  const auto r = train(ds, small_train(TrainMode::kFull));
  ASSERT_EQ(r.state.assignments.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.meta.is_labeled(ds.samples[i].id)) EXPECT_EQ(r.state.assignments[i], *ds.samples[i].label);
}

TEST_F(ToyTrainer, DivergenceAbortsWithContext) {
  const auto ds = generate_synthetic(small_synth());
  auto cfg = small_train(TrainMode::kFull);
  cfg.learning_rate = 1e300;
  try {
    train(ds, cfg);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumerical);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}

TEST_F(ToyTrainer, RejectsInvalidConfig) {
  const auto ds = generate_synthetic(small_synth());
  auto cfg = small_train(TrainMode::kFull);
  cfg.warmup_epochs = cfg.epochs + 1;
  EXPECT_THROW(train(ds, cfg), Error);
  cfg = small_train(TrainMode::kFull);
  cfg.batch_size = 1;
  EXPECT_THROW(train(ds, cfg), Error);
}

TEST(TrainMode, ParsesAndPrints) {
  for (auto m : {TrainMode::kBaseline, TrainMode::kPdrOnly, TrainMode::kFull})
    EXPECT_EQ(parse_train_mode(to_string(m)), m);
  EXPECT_THROW(parse_train_mode("partgcd"), Error);
}

// --- predict ----------------------------------------------------------------

struct Fixture {
  FeatureDataset ds;
  TrainState state;
};

Fixture random_state(std::uint64_t seed) {
  Fixture f{generate_synthetic(small_synth(seed)), {}};
  const std::size_t d = f.ds.meta.dim;
  const auto c = static_cast<std::size_t>(f.ds.meta.num_classes);
  Rng rng = make_rng(seed, 99);
  f.state.params = init_model(ModelShape{d, c, 3, d, 0, 0, false}, rng);
  f.state.parts = 3;
  CandidateSet cands;
  cands.members.resize(c);
  for (std::size_t i = 0; i < f.ds.size(); ++i) cands.members[*f.ds.samples[i].label].push_back(i);
  f.state.part_model = fit_class_gmms(f.ds, cands, 3, GmmConfig{}, false, seed);
  return f;
}

// Direct per-sample scan, written independently of prediction_scores.
std::vector<int> reference_predict(const TrainState& st, const FeatureDataset& ds) {
  const std::size_t d = ds.meta.dim;
  const Matrix& w = st.params.prototypes;
  auto cos_softmax = [&](std::span<const double> x) {
    std::vector<double> logits(w.rows());
    const double nx = l2_norm(x);
    for (std::size_t c = 0; c < w.rows(); ++c) {
      double dot = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) dot += x[j] * w(c, j);
      logits[c] = dot / (nx * l2_norm(w.row(c)));
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (double& l : logits) l /= z;
    return logits;
  };
  std::vector<int> out;
  for (const auto& s : ds.samples) {
    Matrix cls(1, d);
    std::copy(s.cls_fixed.begin(), s.cls_fixed.end(), cls.row(0).begin());
    const auto pg = cos_softmax(encode_cls(st.params, cls).row(0));
    std::size_t g = 0;
    for (std::size_t c = 1; c < pg.size(); ++c)
      if (pg[c] > pg[g]) g = c;
    const auto sp = sample_parts(s, d, st.part_model.classes[g], false);
    const Matrix v = encode_parts(st.params, sp.part_inputs, sp.mass);
    Matrix flat(1, v.size());
    std::copy(v.flat().begin(), v.flat().end(), flat.row(0).begin());
    const auto pp = cos_softmax(mlp_forward(st.params.adapter, flat).row(0));
    int best = 0;
    for (std::size_t c = 1; c < pg.size(); ++c)
      if (pg[c] + pp[c] > pg[best] + pp[best]) best = static_cast<int>(c);
    out.push_back(best);
  }
  return out;
}

TEST(Predict, MatchesDirectTwoSoftmaxScan) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto f = random_state(seed);
    EXPECT_EQ(predict(f.state, f.ds, true), reference_predict(f.state, f.ds)) << "seed " << seed;
    EXPECT_EQ(predict(f.state, f.ds, true, 4), predict(f.state, f.ds, true, 1));
  }
}

TEST(Predict, ScoresAreSumsOfTwoDistributions) {
  const auto f = random_state(5);
  const Matrix s = prediction_scores(f.state, f.ds, true);
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double sum = 0.0;
    for (double v : s.row(i)) sum += v;
    EXPECT_NEAR(sum, 2.0, 1e-12);
  }
  const Matrix g = prediction_scores(f.state, f.ds, false);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    double sum = 0.0;
    for (double v : g.row(i)) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Predict, InvariantToEncoderScale) {
  // Features are normalized before the cosine logits, so scaling the encoder
  // (and the adapter input through it) leaves the global branch unchanged.
  auto f = random_state(7);
  const auto before = predict(f.state, f.ds, false);
  for (double& v : f.state.params.encoder.w.flat()) v *= 3.5;
  for (double& v : f.state.params.encoder.b.flat()) v *= 3.5;
  EXPECT_EQ(predict(f.state, f.ds, false), before);
}

TEST(Predict, TiesGoToTheLowerClass) {
  auto f = random_state(2);
  // Identical prototypes make every class score equal.
  for (std::size_t c = 0; c < f.state.params.prototypes.rows(); ++c)
    std::fill(f.state.params.prototypes.row(c).begin(), f.state.params.prototypes.row(c).end(), 1.0);
  for (int y : predict(f.state, f.ds, true)) EXPECT_EQ(y, 0);
}

// --- state file ---------------------------------------------------------------

TEST(StateFile, RoundTripsExactly) {
  testing::TempDir dir;
  const auto ds = generate_synthetic(small_synth());
  log::set_level(log::Level::kWarn);
  auto cfg = small_train(TrainMode::kFull);
  cfg.epochs = 1;
  cfg.warmup_epochs = 0;
  const auto r = train(ds, cfg);
  save_state(r.state, dir / "state.bin");
  const auto back = load_state(dir / "state.bin");
  EXPECT_EQ(back.epoch, r.state.epoch);
  EXPECT_EQ(back.parts, r.state.parts);
  EXPECT_EQ(back.assignments, r.state.assignments);
  expect_params_identical(back.params, r.state.params);
  expect_params_identical(back.velocity, r.state.velocity);
}

TEST(StateFile, RejectsTruncationAndForeignFiles) {
  testing::TempDir dir;
  const auto f = random_state(0);
  save_state(f.state, dir / "s.bin");
  const auto full = std::filesystem::file_size(dir / "s.bin");
  std::filesystem::resize_file(dir / "s.bin", full - 5);
  EXPECT_THROW(load_state(dir / "s.bin"), Error);
  {
    std::ofstream out(dir / "x.bin", std::ios::binary);
    out << "PGCD0000";
  }
  try {
    load_state(dir / "x.bin");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kBadMagic);
  }
}

// --- run config ---------------------------------------------------------------

TEST(RunConfig, EmptyDocumentGivesDefaults) {
  const auto c = parse_run_config("");
  EXPECT_TRUE(c.data_path.empty());
  EXPECT_EQ(c.train.epochs, TrainConfig{}.epochs);
  EXPECT_EQ(c.train.mode, TrainMode::kFull);
  EXPECT_EQ(c.synth.num_classes, 20);
}

TEST(RunConfig, ReadsEverySection) {
  const auto c = parse_run_config(R"(
[data]
path = "x.pgcd"
[synth]
num_classes = 8
class_separation = 2
[train]
mode = "pdr_only"
epochs = 7
warmup_epochs = 2
seed = 42
[loss]
alpha = 0.5
symmetric_unsup = false
[gmm]
kmeans_restarts = 2
[augment]
drop_prob = 0.0
)");
  EXPECT_EQ(c.data_path, "x.pgcd");
  EXPECT_EQ(c.synth.num_classes, 8);
  EXPECT_EQ(c.synth.class_separation, 2.0);
  EXPECT_EQ(c.train.mode, TrainMode::kPdrOnly);
  EXPECT_EQ(c.train.epochs, 7);
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(c.train.loss.alpha, 0.5);
  EXPECT_FALSE(c.train.loss.symmetric_unsup);
  EXPECT_EQ(c.train.gmm.kmeans_restarts, 2);
  EXPECT_EQ(c.train.augment.drop_prob, 0.0);
}

TEST(RunConfig, DumpParsesBackToTheSameConfig) {
  auto c = parse_run_config("[train]\nlearning_rate = 0.0123456789\nmode = \"baseline\"\n[loss]\ntau_s = 0.07\n");
  const std::string text = dump_run_config(c);
  const auto back = parse_run_config(text);
  EXPECT_EQ(dump_run_config(back), text);
  EXPECT_EQ(back.train.learning_rate, 0.0123456789);
  EXPECT_EQ(back.train.loss.tau_s, 0.07);
  EXPECT_EQ(back.train.mode, TrainMode::kBaseline);
}

TEST(RunConfig, RejectsUnknownKeysTypesAndValues) {
  auto kind = [](const std::string& text) {
    try {
      parse_run_config(text);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kIo;  // sentinel: nothing thrown
  };
  EXPECT_EQ(kind("[train]\nepoch = 3\n"), ErrorKind::kValidation);
  EXPECT_EQ(kind("[trian]\nepochs = 3\n"), ErrorKind::kValidation);
  EXPECT_EQ(kind("[train]\nepochs = \"3\"\n"), ErrorKind::kValidation);
  EXPECT_EQ(kind("[train]\nbatch_size = -4\n"), ErrorKind::kValidation);
  EXPECT_EQ(kind("[train]\nepochs = 0\n"), ErrorKind::kValidation);
  EXPECT_EQ(kind("[train\n"), ErrorKind::kValidation);
  EXPECT_EQ(kind("[loss]\ntau_s = -1.0\n"), ErrorKind::kValidation);
}

}  // namespace
}  // namespace partdisc
