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

// Desk-scale training loop: a linear encoder over fixed features trained with
// the global objective, optionally with the part branch and part discrepancy
// term. Each epoch re-estimates candidates and part GMMs from the current
// model before the batch updates.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "partdisc/candidate_selection.hpp"
#include "partdisc/feature_store.hpp"
#include "partdisc/objectives.hpp"
#include "partdisc/part_gmm.hpp"

namespace partdisc {

enum class TrainMode {
  kBaseline,  // global objective only
  kPdrOnly,   // global objective + alpha * part discrepancy
  kFull,      // global + alpha * (part-enhanced objective + part discrepancy)
};

const char* to_string(TrainMode m) noexcept;
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::kFull;
  int epochs = 50;
  int warmup_epochs = 5;     // alpha ramps linearly from 0 over these epochs
  std::size_t batch_size = 64;
  double learning_rate = 0.05;  // cosine-decayed per step to 0
  double momentum = 0.9;
  double tau_t_start = 0.07;  // teacher temperature, linear over tau_t_epochs
  double tau_t_end = 0.04;
  int tau_t_epochs = 8;
  LossConfig loss;            // loss.tau_t and loss.alpha are scheduled
  double gamma = 1.0;         // candidate count scale
  int parts = 0;              // K; 0 selects it by silhouette over [k_min, k_max]
  int k_min = 2;
  int k_max = 8;
  GmmConfig gmm;
  bool gmm_normalize = false;
  AugmentConfig augment;
  std::size_t proj_dim = 0;   // 0 -> feature dim
  std::size_t adapter_width = 0;
  bool separate_part_projector = false;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

void validate(const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;     // at the epoch's first step
  double alpha = 0.0;
  double tau_t = 0.0;
  double loss = 0.0;   // mean over batches
  BaseTerms global;    // batch means
  BaseTerms part;
  double pdr = 0.0;
  double acc_all = 0.0, acc_old = 0.0, acc_new = 0.0;  // unlabeled set, after the epoch
  double purity = 0.0;  // mean new-class candidate purity at the epoch's selection
  double purity_raw = 0.0;  // same, had candidates been the top raw predictions
};

struct TrainState {
  ModelParams params;
  ModelParams velocity;
  int epoch = 0;
  int parts = 0;
  PartModel part_model;             // empty in baseline mode
  std::vector<int> assignments;     // per sample class used for the part map
};

struct TrainResult {
  TrainState state;
  std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

TrainResult train(const FeatureDataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Part-map inputs of one (possibly augmented) sample under a class GMM:
/// M over the sample's filtered patches, its part inputs M^T X (learnable
/// patches) and part mass. `present` lists the argmax parts of those patches.
struct SampleParts {
  Matrix part_inputs;
  std::vector<double> mass;
  std::vector<int> present;
};
SampleParts sample_parts(const Sample& s, std::size_t dim, const GmmParams& gmm, bool normalize);

/// Sum of softmax(cos(f, W)) and softmax(cos(h, W)), no temperature; the
/// second term only when the model has a trained adapter.
Matrix prediction_scores(const TrainState& state, const FeatureDataset& ds, bool use_parts,
                         unsigned threads = 1);

/// argmax of prediction_scores, ties to the lower class.
std::vector<int> predict(const TrainState& state, const FeatureDataset& ds, bool use_parts,
                         unsigned threads = 1);

/// l2-normalized encoder output for every sample's CLS feature (n x d).
Matrix encoded_cls(const TrainState& state, const FeatureDataset& ds);

/// The trainer's epoch-start prototype calibration applied to a trained
/// state: softmax(cos / tau_s), Sinkhorn, then class-weighted means.
Prototypes calibrated_prototypes(const TrainState& state, const FeatureDataset& ds, double tau_s);

/// "PSTA" | u32 version | u32 d | u32 C | u32 K | u32 proj | u32 adapter width
/// | u32 projector width | u32 flags (bit0 separate projector) | i32 epoch
/// | u32 n | i32[n] assignments | f64 tensors of params then velocity, in
/// for_each_tensor order. The part model goes to its own PGMM file.
void save_state(const TrainState& s, const std::filesystem::path& path);
TrainState load_state(const std::filesystem::path& path);

}  // namespace partdisc
