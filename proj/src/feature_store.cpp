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

#include "partdisc/feature_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "byteio.hpp"
#include "partdisc/error.hpp"
#include "partdisc/linalg.hpp"
#include "partdisc/log.hpp"
#include "partdisc/runtime.hpp"
#include "partdisc/simd/kernels.hpp"

namespace partdisc {
namespace {

using detail::ByteReader;
using detail::ByteWriter;

constexpr std::array<char, 4> kMagic{'P', 'G', 'C', 'D'};
constexpr std::uint8_t kFlagLearnable = 0x1;

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float f) { return std::isfinite(f); });
}

std::uint32_t checked_u32(std::size_t v, const char* field) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    fail(ErrorKind::kInvalidArgument,
         std::string("header field ") + field + " overflows u32: " + std::to_string(v));
  }
  return static_cast<std::uint32_t>(v);
}

std::vector<float> random_unit(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& x : v) {
      x = normal(rng);
      n2 += x * x;
    }
  } while (n2 < 1e-12);
  const double inv = 1.0 / std::sqrt(n2);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

}  // namespace

bool DatasetMeta::is_old(int cls) const noexcept {
  return std::binary_search(old_classes.begin(), old_classes.end(), cls);
}

bool DatasetMeta::is_labeled(std::uint64_t id) const noexcept {
  return std::binary_search(labeled_ids.begin(), labeled_ids.end(), id);
}

void validate(const FeatureDataset& ds) {
  const auto& m = ds.meta;
  auto bad = [](const std::string& what) { fail(ErrorKind::kValidation, what); };
  if (m.num_classes < 0) bad("negative class count");
  if (!std::is_sorted(m.old_classes.begin(), m.old_classes.end()) ||
      std::adjacent_find(m.old_classes.begin(), m.old_classes.end()) != m.old_classes.end()) {
    bad("old_classes must be sorted and unique");
  }
  if (m.old_classes.size() > static_cast<std::size_t>(m.num_classes)) {
    bad("more old classes than classes");
  }
  for (int c : m.old_classes)
    if (c < 0 || c >= m.num_classes) bad("old class " + std::to_string(c) + " out of range");
  if (!std::is_sorted(m.labeled_ids.begin(), m.labeled_ids.end())) bad("labeled_ids unsorted");

  const std::size_t d = m.dim;
  const std::size_t np = m.num_patches;
  std::set<std::uint64_t> seen;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    const std::string where = "sample " + std::to_string(i) + " (id " + std::to_string(s.id) + ")";
    if (!seen.insert(s.id).second) bad(where + ": duplicate id");
    if (s.cls_fixed.size() != d || s.patches_fixed.size() != np * d || s.attention.size() != np) {
      bad(where + ": tensor shape does not match d/N_p");
    }
    if (ds.has_learnable ? s.patches_learnable.size() != np * d : !s.patches_learnable.empty()) {
      bad(where + ": patches_learnable shape does not match the dataset flag");
    }
    if (!all_finite(s.cls_fixed) || !all_finite(s.patches_fixed) ||
        !all_finite(s.patches_learnable) || !all_finite(s.attention)) {
      bad(where + ": non-finite feature value");
    }
    for (float a : s.attention)
      if (a < 0.0f) bad(where + ": negative attention");
    if (s.label && (*s.label < 0 || *s.label >= m.num_classes)) {
      bad(where + ": label " + std::to_string(*s.label) + " outside [0, C)");
    }
    if (m.is_labeled(s.id)) {
      if (!s.label) bad(where + ": labeled sample without a label");
      if (!m.is_old(*s.label)) bad(where + ": labeled sample outside the old classes");
    }
  }
}

std::filesystem::path manifest_path(const std::filesystem::path& container) {
  std::filesystem::path p = container;
  p += ".manifest.csv";
  return p;
}

void save_dataset(const FeatureDataset& ds, const std::filesystem::path& path) {
  validate(ds);
  const std::uint32_t count = checked_u32(ds.samples.size(), "sample_count");
  const std::uint32_t classes = checked_u32(static_cast<std::size_t>(ds.meta.num_classes), "C");
  const std::uint32_t d = checked_u32(ds.meta.dim, "d");
  const std::uint32_t np = checked_u32(ds.meta.num_patches, "N_p");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  ByteWriter w(out);
  out.write(kMagic.data(), 4);
  w.u32(kContainerVersion);
  w.u32(count);
  w.u32(classes);
  w.u32(d);
  w.u32(np);
  w.u8(ds.has_learnable ? kFlagLearnable : 0);
  for (int i = 0; i < 7; ++i) w.u8(0);
  for (const Sample& s : ds.samples) {
    w.u64(s.id);
    w.i32(s.label ? *s.label : -1);
    w.f32s(s.cls_fixed);
    w.f32s(s.patches_fixed);
    if (ds.has_learnable) w.f32s(s.patches_learnable);
    w.f32s(s.attention);
  }
  out.flush();
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());

  std::ofstream man(manifest_path(path), std::ios::trunc);
  if (!man) fail(ErrorKind::kIo, "cannot write manifest for " + path.string());
  for (const Sample& s : ds.samples) {
    man << s.id << ',' << (s.label ? *s.label : -1) << ',' << (ds.meta.is_labeled(s.id) ? 1 : 0)
        << '\n';
  }
  if (!man) fail(ErrorKind::kIo, "manifest write failed for " + path.string());
}

FeatureDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  ByteReader r(bytes);
  if (!r.has(kContainerHeaderBytes)) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
      fail(ErrorKind::kBadMagic, path.string() + ": not a PGCD container");
    }
    fail(ErrorKind::kTruncated, path.string() + ": truncated header");
  }
  if (std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
    fail(ErrorKind::kBadMagic, path.string() + ": not a PGCD container");
  }
  r.skip(4);
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion) {
    fail(ErrorKind::kVersionMismatch, path.string() + ": container version " +
                                          std::to_string(version) + ", expected " +
                                          std::to_string(kContainerVersion));
  }
  const std::uint32_t count = r.u32();
  FeatureDataset ds;
  ds.meta.num_classes = static_cast<int>(r.u32());
  ds.meta.dim = r.u32();
  ds.meta.num_patches = r.u32();
  ds.has_learnable = (r.u8() & kFlagLearnable) != 0;
  r.skip(7);

  const std::size_t d = ds.meta.dim;
  const std::size_t np = ds.meta.num_patches;
  const std::size_t record_bytes =
      8 + 4 + 4 * (d + np * d * (ds.has_learnable ? 2 : 1) + np);
  ds.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!r.has(record_bytes)) {
      fail(ErrorKind::kTruncated, path.string() + ": truncated at record " + std::to_string(i) +
                                      " of " + std::to_string(count));
    }
    Sample s;
    s.id = r.u64();
    const std::int32_t label = r.i32();
    if (label >= 0) s.label = label;
    s.cls_fixed.resize(d);
    r.f32s(s.cls_fixed);
    s.patches_fixed.resize(np * d);
    r.f32s(s.patches_fixed);
    if (ds.has_learnable) {
      s.patches_learnable.resize(np * d);
      r.f32s(s.patches_learnable);
    }
    s.attention.resize(np);
    r.f32s(s.attention);
    if (label < -1) {
      fail(ErrorKind::kValidation, path.string() + ": record " + std::to_string(i) +
                                       " has invalid label " + std::to_string(label));
    }
    ds.samples.push_back(std::move(s));
  }
  if (r.remaining() != 0) {
    log::warn(path.string() + ": " + std::to_string(r.remaining()) + " trailing bytes ignored");
  }

  const auto man_path = manifest_path(path);
  if (std::filesystem::exists(man_path)) {
    std::ifstream man(man_path);
    std::string line;
    std::set<int> old;
    std::set<std::uint64_t> known;
    for (const Sample& s : ds.samples) known.insert(s.id);
    std::size_t lineno = 0;
    while (std::getline(man, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::uint64_t id = 0;
      long long label = 0;
      int labeled = 0;
      char c1 = 0, c2 = 0;
      if (!(ss >> id >> c1 >> label >> c2 >> labeled) || c1 != ',' || c2 != ',') {
        fail(ErrorKind::kValidation,
             man_path.string() + ":" + std::to_string(lineno) + ": malformed manifest line");
      }
      if (!known.count(id)) {
        fail(ErrorKind::kValidation, man_path.string() + ":" + std::to_string(lineno) +
                                         ": unknown sample id " + std::to_string(id));
      }
      if (labeled) {
        ds.meta.labeled_ids.push_back(id);
        if (label >= 0) old.insert(static_cast<int>(label));
      }
    }
    std::sort(ds.meta.labeled_ids.begin(), ds.meta.labeled_ids.end());
    ds.meta.labeled_ids.erase(std::unique(ds.meta.labeled_ids.begin(), ds.meta.labeled_ids.end()),
                              ds.meta.labeled_ids.end());
    ds.meta.old_classes.assign(old.begin(), old.end());
  }
  validate(ds);
  return ds;
}

Matrix cls_matrix(const FeatureDataset& ds) {
  Matrix out(ds.samples.size(), ds.meta.dim);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& src = ds.samples[i].cls_fixed;
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix patch_matrix(const Sample& s, std::size_t dim, bool learnable) {
  const auto& src = learnable ? s.patches_learnable : s.patches_fixed;
  require(dim > 0 && src.size() % dim == 0, "patch_matrix: size is not a multiple of dim");
  Matrix out(src.size() / dim, dim);
  std::copy(src.begin(), src.end(), out.data());
  return out;
}

void validate(const SynthConfig& c) {
  auto bad = [](const std::string& what) { fail(ErrorKind::kInvalidArgument, "synth: " + what); };
  if (c.num_classes < 1) bad("num_classes must be >= 1");
  if (c.old_class_count < 0 || c.old_class_count > c.num_classes) bad("old_class_count out of range");
  if (c.parts < 1) bad("parts (K_true) must be >= 1");
  if (c.dim < 1 || c.num_patches < 1) bad("dim and num_patches must be >= 1");
  if (c.foreground_patches < 1 || c.foreground_patches > c.num_patches) {
    bad("foreground_patches must lie in [1, num_patches]");
  }
  if (!(c.class_separation > 0.0) || !(c.part_separation > 0.0)) bad("separations must be > 0");
  if (c.noise_sigma < 0.0 || c.background_sigma < 0.0 || c.cls_offset < 0.0) {
    bad("noise scales must be >= 0");
  }
  if (c.samples_per_class < 1) bad("samples_per_class must be >= 1");
  if (!(c.part_concentration > 0.0) || !std::isfinite(c.part_concentration))
    bad("part_concentration must be > 0");
}

FeatureDataset generate_synthetic(const SynthConfig& cfg, SynthTruth* truth) {
  validate(cfg);
  const std::size_t d = cfg.dim;
  const std::size_t np = cfg.num_patches;
  const std::size_t fg = cfg.foreground_patches;
  const auto K = static_cast<std::size_t>(cfg.parts);
  const auto C = static_cast<std::size_t>(cfg.num_classes);

  Rng layout_rng = make_rng(cfg.seed, 1);
  Rng sample_rng = make_rng(cfg.seed, 2);
  Rng split_rng = make_rng(cfg.seed, 3);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Shared part layout: every class has the same K coarse parts, displaced per
  // class by class_separation. The classes differ in the details of each part,
  // not in which parts exist.
  auto to_double = [](const std::vector<float>& v) { return std::vector<double>(v.begin(), v.end()); };
  std::vector<Matrix> centers;
  constexpr int kLayoutTries = 50;
  constexpr int kClassTries = 200;
  bool placed = false;
  for (int layout = 0; layout < kLayoutTries && !placed; ++layout) {
    std::vector<std::vector<double>> base(K);
    for (auto& b : base) {
      b = to_double(random_unit(d, layout_rng));
      for (double& x : b) x *= cfg.part_separation;
    }
    centers.assign(C, Matrix(K, d));
    placed = true;
    for (std::size_t c = 0; c < C && placed; ++c) {
      bool ok = false;
      for (int attempt = 0; attempt < kClassTries && !ok; ++attempt) {
        for (std::size_t k = 0; k < K; ++k) {
          const auto eps = random_unit(d, layout_rng);
          for (std::size_t j = 0; j < d; ++j)
            centers[c](k, j) = base[k][j] + cfg.class_separation * eps[j];
        }
        ok = true;
        for (std::size_t a = 0; a < K && ok; ++a)
          for (std::size_t b = a + 1; b < K && ok; ++b)
            ok = std::sqrt(simd::squared_distance(centers[c].row(a), centers[c].row(b))) >=
                 cfg.part_separation;
      }
      placed = ok;
    }
  }
  if (!placed) {
    fail(ErrorKind::kInvalidArgument,
         "synth: cannot place " + std::to_string(K) + " parts at mutual distance >= " +
             std::to_string(cfg.part_separation) + " in dimension " + std::to_string(d));
  }
  std::vector<std::vector<double>> cls_offsets(C);
  for (std::size_t c = 0; c < C; ++c) {
    const auto off = random_unit(d, layout_rng);
    cls_offsets[c].resize(d);
    for (std::size_t j = 0; j < d; ++j) cls_offsets[c][j] = cfg.cls_offset * off[j];
  }

  std::vector<double> bg_center = to_double(random_unit(d, layout_rng));
  for (double& x : bg_center) x *= cfg.part_separation;

  FeatureDataset ds;
  ds.meta.num_classes = cfg.num_classes;
  ds.meta.dim = d;
  ds.meta.num_patches = np;
  ds.has_learnable = true;
  for (int c = 0; c < cfg.old_class_count; ++c) ds.meta.old_classes.push_back(c);
  if (truth) {
    truth->part_centers = centers;
    truth->foreground.clear();
    truth->patch_part.clear();
  }

  std::gamma_distribution<double> gamma(cfg.part_concentration, 1.0);
  std::uint64_t next_id = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<std::uint64_t> class_ids;
    for (int s = 0; s < cfg.samples_per_class; ++s) {
      Sample sample;
      sample.id = next_id++;
      sample.label = static_cast<int>(c);
      sample.cls_fixed.assign(d, 0.0f);
      sample.patches_fixed.assign(np * d, 0.0f);
      sample.attention.assign(np, 0.0f);

      // Per-image part proportions ~ Dirichlet(concentration): pose and occlusion vary, so
      // the global mean mixes the parts in a different ratio every time.
      std::vector<double> mix(K);
      double total = 0.0;
      for (double& w : mix) total += (w = gamma(sample_rng));
      for (double& w : mix) w /= total;
      std::discrete_distribution<int> pick_part(mix.begin(), mix.end());

      std::vector<std::size_t> order(np);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), sample_rng);
      std::vector<std::size_t> fg_idx(order.begin(), order.begin() + static_cast<long>(fg));
      std::sort(fg_idx.begin(), fg_idx.end());
      std::vector<int> part_of(np, -1);
      for (std::size_t j : fg_idx) part_of[j] = pick_part(sample_rng);

      std::vector<double> fg_mean(d, 0.0);
      for (std::size_t j = 0; j < np; ++j) {
        float* row = sample.patches_fixed.data() + j * d;
        if (part_of[j] >= 0) {
          const auto center = centers[c].row(static_cast<std::size_t>(part_of[j]));
          for (std::size_t t = 0; t < d; ++t) {
            row[t] = static_cast<float>(center[t] + cfg.noise_sigma * normal(sample_rng));
            fg_mean[t] += row[t];
          }
          sample.attention[j] = 1.0f;
        } else {
          for (std::size_t t = 0; t < d; ++t)
            row[t] = static_cast<float>(bg_center[t] + cfg.background_sigma * normal(sample_rng));
        }
      }
      for (std::size_t t = 0; t < d; ++t)
        sample.cls_fixed[t] =
            static_cast<float>(fg_mean[t] / static_cast<double>(fg) + cls_offsets[c][t]);
      sample.patches_learnable = sample.patches_fixed;
      if (truth) {
        truth->foreground.push_back(fg_idx);
        truth->patch_part.push_back(part_of);
      }
      class_ids.push_back(sample.id);
      ds.samples.push_back(std::move(sample));
    }
    if (static_cast<int>(c) < cfg.old_class_count) {
      std::shuffle(class_ids.begin(), class_ids.end(), split_rng);
      const std::size_t half = class_ids.size() / 2;
      ds.meta.labeled_ids.insert(ds.meta.labeled_ids.end(), class_ids.begin(),
                                 class_ids.begin() + static_cast<long>(half));
    }
  }
  std::sort(ds.meta.labeled_ids.begin(), ds.meta.labeled_ids.end());
  return ds;
}

Sample augment_view(const Sample& sample, const AugmentConfig& cfg, std::uint64_t seed) {
  Sample view = sample;
  Rng rng = make_rng(seed, 0xA06);
  if (cfg.sigma > 0.0) {
    std::normal_distribution<double> jitter(0.0, cfg.sigma);
    auto perturb = [&](std::vector<float>& v) {
      for (float& x : v) x = static_cast<float>(x + jitter(rng));
    };
    perturb(view.cls_fixed);
    perturb(view.patches_fixed);
    perturb(view.patches_learnable);
  }
  if (cfg.drop_prob > 0.0 && !view.attention.empty()) {
    double mean = 0.0;
    for (float a : sample.attention) mean += a;
    mean /= static_cast<double>(sample.attention.size());
    std::bernoulli_distribution drop(std::min(1.0, cfg.drop_prob));
    for (std::size_t j = 0; j < view.attention.size(); ++j) {
      if (static_cast<double>(sample.attention[j]) >= mean && drop(rng)) view.attention[j] = 0.0f;
    }
  }
  return view;
}

}  // namespace partdisc
