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
#include <limits>

#include <gtest/gtest.h>

#include "partdisc/error.hpp"
#include "partdisc/feature_store.hpp"
#include "partdisc/simd/kernels.hpp"
#include "test_util.hpp"

namespace partdisc {
namespace {

using testing::TempDir;

std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

ErrorKind load_error_kind(const std::filesystem::path& p, std::string* msg = nullptr) {
  try {
    load_dataset(p);
  } catch (const Error& e) {
    if (msg) *msg = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "load_dataset did not throw";
  return ErrorKind::kIo;
}

SynthConfig small_config(std::uint64_t seed = 5) {
  SynthConfig cfg;
  cfg.num_classes = 5;
  cfg.old_class_count = 3;
  cfg.parts = 3;
  cfg.dim = 6;
  cfg.num_patches = 8;
  cfg.foreground_patches = 5;
  cfg.samples_per_class = 20;
  cfg.seed = seed;
  return cfg;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

TEST(FeatureStore, EmptyDatasetIsHeaderOnly) {
  TempDir dir;
  FeatureDataset ds;
  ds.meta.dim = 4;
  ds.meta.num_patches = 2;
  const auto path = dir / "empty.pgcd";
  save_dataset(ds, path);
  EXPECT_EQ(std::filesystem::file_size(path), kContainerHeaderBytes);
  EXPECT_EQ(kContainerHeaderBytes, 32u);
  const auto back = load_dataset(path);
  EXPECT_EQ(back.size(), 0u);
  EXPECT_EQ(back.meta.dim, 4u);
  EXPECT_EQ(back.meta.num_patches, 2u);
}

TEST(FeatureStore, HeaderLayoutIsLittleEndian) {
  TempDir dir;
  FeatureDataset ds;
  ds.meta.num_classes = 3;
  ds.meta.dim = 2;
  ds.meta.num_patches = 1;
  Sample s;
  s.id = 0x0102030405060708ULL;
  s.label = 2;
  s.cls_fixed = {1.0f, -2.0f};
  s.patches_fixed = {0.5f, 0.25f};
  s.patches_learnable = {0.0f, 0.0f};
  s.attention = {1.0f};
  ds.samples.push_back(s);
  const auto path = dir / "one.pgcd";
  save_dataset(ds, path);
  const auto b = read_bytes(path);
  ASSERT_EQ(b.size(), 32u + 8 + 4 + 4 * (2 + 2 + 2 + 1));
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "PGCD");
  EXPECT_EQ(b[4], 1);  // version
  EXPECT_EQ(b[8], 1);  // sample_count
  EXPECT_EQ(b[12], 3);
  EXPECT_EQ(b[16], 2);
  EXPECT_EQ(b[20], 1);
  EXPECT_EQ(b[24], 1);  // flags: learnable present
  EXPECT_EQ(b[32], 0x08);
  EXPECT_EQ(b[39], 0x01);
  EXPECT_EQ(b[40], 2);  // label
  // 1.0f == 0x3F800000
  EXPECT_EQ(b[44], 0x00);
  EXPECT_EQ(b[47], 0x3F);
}

TEST(FeatureStore, ZeroFeaturesRoundTripBitExact) {
  TempDir dir;
  FeatureDataset ds;
  ds.meta.num_classes = 1;
  ds.meta.dim = 2;
  ds.meta.num_patches = 1;
  Sample s;
  s.cls_fixed = {0.0f, -0.0f};
  s.patches_fixed = {0.0f, 0.0f};
  s.patches_learnable = {0.0f, 0.0f};
  s.attention = {0.0f};
  ds.samples.push_back(s);
  save_dataset(ds, dir / "z.pgcd");
  const auto back = load_dataset(dir / "z.pgcd");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_TRUE(bitwise_equal(back.samples[0].cls_fixed, s.cls_fixed));  // keeps -0.0
  EXPECT_FALSE(back.samples[0].label.has_value());
}

TEST(FeatureStore, SyntheticRoundTripIsIdentity) {
  TempDir dir;
  auto cfg = small_config();
  cfg.samples_per_class = 20;  // 5 classes x 20 = 100 samples
  const auto ds = generate_synthetic(cfg);
  ASSERT_EQ(ds.size(), 100u);
  save_dataset(ds, dir / "s.pgcd");
  const auto back = load_dataset(dir / "s.pgcd");
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& a = ds.samples[i];
    const auto& b = back.samples[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.label, b.label);
    EXPECT_TRUE(bitwise_equal(a.cls_fixed, b.cls_fixed));
    EXPECT_TRUE(bitwise_equal(a.patches_fixed, b.patches_fixed));
    EXPECT_TRUE(bitwise_equal(a.patches_learnable, b.patches_learnable));
    EXPECT_TRUE(bitwise_equal(a.attention, b.attention));
  }
  EXPECT_EQ(back.meta, ds.meta);
}

TEST(FeatureStore, ManifestListsEverySample) {
  TempDir dir;
  const auto ds = generate_synthetic(small_config());
  save_dataset(ds, dir / "m.pgcd");
  std::ifstream man(manifest_path(dir / "m.pgcd"));
  std::string line;
  std::size_t lines = 0, labeled = 0;
  while (std::getline(man, line)) {
    ++lines;
    if (line.back() == '1') ++labeled;
  }
  EXPECT_EQ(lines, ds.size());
  EXPECT_EQ(labeled, ds.meta.labeled_ids.size());
}

TEST(FeatureStore, TwoRecordFileLoads) {
  TempDir dir;
  auto cfg = small_config();
  cfg.num_classes = 2;
  cfg.old_class_count = 1;
  cfg.samples_per_class = 1;
  const auto ds = generate_synthetic(cfg);
  save_dataset(ds, dir / "two.pgcd");
  const auto b = read_bytes(dir / "two.pgcd");
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "PGCD");
  EXPECT_EQ(load_dataset(dir / "two.pgcd").size(), 2u);
}

TEST(FeatureStore, BadMagicAndVersionAreDistinctErrors) {
  TempDir dir;
  const auto ds = generate_synthetic(small_config());
  save_dataset(ds, dir / "a.pgcd");
  auto bytes = read_bytes(dir / "a.pgcd");

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  write_bytes(dir / "magic.pgcd", bad_magic);
  EXPECT_EQ(load_error_kind(dir / "magic.pgcd"), ErrorKind::kBadMagic);

  auto bad_version = bytes;
  bad_version[4] = 2;
  write_bytes(dir / "version.pgcd", bad_version);
  EXPECT_EQ(load_error_kind(dir / "version.pgcd"), ErrorKind::kVersionMismatch);

  EXPECT_EQ(load_error_kind(dir / "missing.pgcd"), ErrorKind::kIo);
}

TEST(FeatureStore, TruncationNamesTheRecord) {
  TempDir dir;
  const auto ds = generate_synthetic(small_config());
  save_dataset(ds, dir / "a.pgcd");
  auto bytes = read_bytes(dir / "a.pgcd");
  const std::size_t record = (bytes.size() - 32) / ds.size();
  bytes.resize(32 + 3 * record + record / 2);  // mid-way through record 3
  write_bytes(dir / "t.pgcd", bytes);
  std::string msg;
  EXPECT_EQ(load_error_kind(dir / "t.pgcd", &msg), ErrorKind::kTruncated);
  EXPECT_NE(msg.find("record 3"), std::string::npos) << msg;

  bytes.resize(20);
  write_bytes(dir / "h.pgcd", bytes);
  EXPECT_EQ(load_error_kind(dir / "h.pgcd"), ErrorKind::kTruncated);
}

TEST(FeatureStore, NanFeatureIsRejected) {
  TempDir dir;
  const auto ds = generate_synthetic(small_config());
  save_dataset(ds, dir / "a.pgcd");
  auto bytes = read_bytes(dir / "a.pgcd");
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::uint32_t raw;
  std::memcpy(&raw, &nan, 4);
  const std::size_t offset = 32 + 8 + 4;  // first cls value of record 0
  for (int i = 0; i < 4; ++i) bytes[offset + i] = static_cast<unsigned char>((raw >> (8 * i)) & 0xFF);
  write_bytes(dir / "nan.pgcd", bytes);
  std::filesystem::copy_file(manifest_path(dir / "a.pgcd"), manifest_path(dir / "nan.pgcd"));
  EXPECT_EQ(load_error_kind(dir / "nan.pgcd"), ErrorKind::kValidation);
}

TEST(FeatureStore, HeaderOverflowIsReported) {
  TempDir dir;
  FeatureDataset ds;
  ds.meta.dim = std::size_t{1} << 33;
  ds.meta.num_patches = 1;
  EXPECT_THROW(save_dataset(ds, dir / "o.pgcd"), Error);
}

TEST(FeatureStore, MissingManifestMeansNoLabeledSplit) {
  TempDir dir;
  const auto ds = generate_synthetic(small_config());
  save_dataset(ds, dir / "a.pgcd");
  std::filesystem::remove(manifest_path(dir / "a.pgcd"));
  const auto back = load_dataset(dir / "a.pgcd");
  EXPECT_TRUE(back.meta.labeled_ids.empty());
  EXPECT_TRUE(back.meta.old_classes.empty());
  EXPECT_TRUE(back.samples[0].label.has_value());
}

TEST(Synthetic, ZeroNoiseMakesForegroundIdentical) {
  auto cfg = small_config();
  cfg.num_classes = 2;
  cfg.old_class_count = 1;
  cfg.parts = 1;
  cfg.noise_sigma = 0.0;
  SynthTruth truth;
  const auto ds = generate_synthetic(cfg, &truth);
  for (int c = 0; c < 2; ++c) {
    std::vector<float> ref;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (*ds.samples[i].label != c) continue;
      for (std::size_t j : truth.foreground[i]) {
        std::vector<float> row(ds.samples[i].patches_fixed.begin() + static_cast<long>(j * cfg.dim),
                               ds.samples[i].patches_fixed.begin() + static_cast<long>((j + 1) * cfg.dim));
        if (ref.empty()) ref = row;
        EXPECT_EQ(row, ref);
      }
    }
  }
}

TEST(Synthetic, HalfOfOldClassesLabeled) {
  auto cfg = small_config();
  cfg.num_classes = 20;
  cfg.old_class_count = 10;
  cfg.samples_per_class = 30;
  const auto ds = generate_synthetic(cfg);
  EXPECT_EQ(ds.meta.labeled_ids.size(), 150u);
  EXPECT_EQ(ds.meta.old_classes.size(), 10u);
  for (const auto& s : ds.samples) {
    if (ds.meta.is_labeled(s.id)) EXPECT_LT(*s.label, 10);
  }
}

TEST(Synthetic, SameSeedIsBitIdentical) {
  const auto a = generate_synthetic(small_config(11));
  const auto b = generate_synthetic(small_config(11));
  EXPECT_EQ(a, b);
  const auto c = generate_synthetic(small_config(12));
  EXPECT_NE(a, c);
}

TEST(Synthetic, PartCentersRespectSeparation) {
  auto cfg = small_config();
  SynthTruth truth;
  generate_synthetic(cfg, &truth);
  for (const auto& centers : truth.part_centers)
    for (std::size_t a = 0; a < centers.rows(); ++a)
      for (std::size_t b = a + 1; b < centers.rows(); ++b)
        EXPECT_GE(std::sqrt(simd::squared_distance(centers.row(a), centers.row(b))),
                  cfg.part_separation);
}

TEST(Synthetic, WithinPartVarianceVanishesWithNoise) {
  // noise -> 0: patches of a (class, part) pair collapse onto the part center.
  for (double sigma : {0.5, 0.05, 0.0}) {
    auto cfg = small_config();
    cfg.noise_sigma = sigma;
    SynthTruth truth;
    const auto ds = generate_synthetic(cfg, &truth);
    double max_dev = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto label = static_cast<std::size_t>(*ds.samples[i].label);
      const Matrix patches = patch_matrix(ds.samples[i], cfg.dim);
      for (std::size_t j = 0; j < cfg.num_patches; ++j) {
        const int part = truth.patch_part[i][j];
        if (part < 0) continue;
        const double dev = std::sqrt(simd::squared_distance(
            patches.row(j), truth.part_centers[label].row(static_cast<std::size_t>(part))));
        max_dev = std::max(max_dev, dev);
      }
    }
    EXPECT_LE(max_dev, 8.0 * sigma + 1e-5) << "sigma=" << sigma;
  }
}

TEST(Synthetic, AttentionMarksExactlyTheForeground) {
  SynthTruth truth;
  const auto ds = generate_synthetic(small_config(), &truth);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& attn = ds.samples[i].attention;
    double mean = 0.0;
    for (float a : attn) mean += a;
    mean /= static_cast<double>(attn.size());
    std::vector<std::size_t> high;
    for (std::size_t j = 0; j < attn.size(); ++j)
      if (attn[j] >= mean) high.push_back(j);
    EXPECT_EQ(high, truth.foreground[i]);
  }
}

TEST(Synthetic, InfeasibleSeparationFails) {
  auto cfg = small_config();
  cfg.dim = 1;
  cfg.parts = 3;  // at most two points at distance r on a 1-d "sphere"
  cfg.class_separation = 0.01;
  EXPECT_THROW(generate_synthetic(cfg), Error);
}

TEST(Augment, ZeroMagnitudeIsIdentity) {
  const auto ds = generate_synthetic(small_config());
  const auto view = augment_view(ds.samples[3], AugmentConfig{0.0, 0.0}, 99);
  EXPECT_EQ(view, ds.samples[3]);
}

TEST(Augment, FullDropZeroesAllForegroundAttention) {
  SynthTruth truth;
  const auto ds = generate_synthetic(small_config(), &truth);
  const auto view = augment_view(ds.samples[0], AugmentConfig{0.0, 1.0}, 1);
  for (std::size_t j : truth.foreground[0]) EXPECT_EQ(view.attention[j], 0.0f);
  EXPECT_EQ(view.id, ds.samples[0].id);
}

TEST(Augment, DeterministicForFixedSeed) {
  const auto ds = generate_synthetic(small_config());
  const AugmentConfig cfg{0.1, 0.3};
  EXPECT_EQ(augment_view(ds.samples[2], cfg, 7), augment_view(ds.samples[2], cfg, 7));
  EXPECT_NE(augment_view(ds.samples[2], cfg, 7), augment_view(ds.samples[2], cfg, 8));
}

}  // namespace
}  // namespace partdisc
