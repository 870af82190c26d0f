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

// Feature container: per-sample CLS / patch features and attention, the PGCD
// binary format, and a synthetic fine-grained dataset generator.
//
// Binary layout (all little-endian):
//   header, 32 bytes:
//     char[4] "PGCD" | u32 version=1 | u32 sample_count | u32 C | u32 d | u32 N_p
//     | u8 flags (bit0: has patches_learnable) | 7 reserved zero bytes
//   per sample:
//     u64 id | i32 label (-1 = unknown) | f32[d] cls_fixed | f32[N_p*d] patches_fixed
//     | f32[N_p*d] patches_learnable (if flag) | f32[N_p] attention
//
// The binary label is the class label when known (ground truth for synthetic
// data). Membership in the labeled split lives in the sidecar manifest
// `<path>.manifest.csv`, one `id,label,is_labeled` line per sample.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "partdisc/matrix.hpp"

namespace partdisc {

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeaderBytes = 32;

struct Sample {
  std::uint64_t id = 0;
  std::optional<int> label;
  std::vector<float> cls_fixed;          // d
  std::vector<float> patches_fixed;      // N_p x d, row-major
  std::vector<float> patches_learnable;  // N_p x d, row-major; empty when absent
  std::vector<float> attention;          // N_p

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct DatasetMeta {
  int num_classes = 0;
  std::vector<int> old_classes;             // sorted, unique
  std::vector<std::uint64_t> labeled_ids;   // sorted, unique
  std::size_t dim = 0;
  std::size_t num_patches = 0;

  bool is_old(int cls) const noexcept;
  bool is_labeled(std::uint64_t id) const noexcept;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct FeatureDataset {
  DatasetMeta meta;
  std::vector<Sample> samples;
  bool has_learnable = true;

  std::size_t size() const noexcept { return samples.size(); }

  friend bool operator==(const FeatureDataset&, const FeatureDataset&) = default;
};

/// Throws Error(kValidation) if any Sample / DatasetMeta invariant is violated.
void validate(const FeatureDataset& dataset);

void save_dataset(const FeatureDataset& dataset, const std::filesystem::path& path);

/// Reads the binary container and, when present, its sidecar manifest.
/// Errors: kIo, kBadMagic, kVersionMismatch, kTruncated (message names the
/// record index), kValidation (non-finite value, label out of range).
FeatureDataset load_dataset(const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& container);

/// n x d matrix of cls_fixed rows (as doubles).
Matrix cls_matrix(const FeatureDataset& dataset);
/// N_p x d matrix of one sample's fixed (or learnable) patches.
Matrix patch_matrix(const Sample& sample, std::size_t dim, bool learnable = false);

struct SynthConfig {
  int num_classes = 20;
  int old_class_count = 10;
  int parts = 4;                      // K_true
  std::size_t dim = 16;
  std::size_t num_patches = 16;
  std::size_t foreground_patches = 8;
  double class_separation = 1.5;      // scale of class-specific part displacements
  double part_separation = 6.0;       // minimum distance between a class's part centers
  double noise_sigma = 0.5;           // within-part patch noise
  double cls_offset = 0.5;            // class-specific offset added to the CLS feature
  double background_sigma = 1.0;
  double part_concentration = 5.0;    // Dirichlet concentration of per-image part proportions
  int samples_per_class = 40;
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& cfg);

/// Ground truth kept alongside a generated dataset for tests and diagnostics.
struct SynthTruth {
  std::vector<Matrix> part_centers;                // per class, K x d
  std::vector<std::vector<std::size_t>> foreground; // per sample, sorted patch indices
  std::vector<std::vector<int>> patch_part;         // per sample, per patch: part or -1
};

FeatureDataset generate_synthetic(const SynthConfig& cfg, SynthTruth* truth = nullptr);

struct AugmentConfig {
  double sigma = 0.05;      // Gaussian jitter on every feature
  double drop_prob = 0.25;  // per-foreground-patch probability of zeroing attention
};

/// Second view of a sample. Foreground patches are those with attention at or
/// above the sample's mean attention.
Sample augment_view(const Sample& sample, const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace partdisc
