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


#include "partdisc/toy_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

#include "byteio.hpp"
#include "partdisc/candidate_selection.hpp"
#include "partdisc/error.hpp"
#include "partdisc/evaluation.hpp"
#include "partdisc/linalg.hpp"
#include "partdisc/log.hpp"
#include "partdisc/runtime.hpp"
#include "partdisc/transport.hpp"

namespace partdisc {
namespace {

constexpr std::uint32_t kStateVersion = 1;

// Seed streams; each consumer draws from its own.
constexpr std::uint64_t kStreamInit = 11;
constexpr std::uint64_t kStreamSelectK = 12;
constexpr std::uint64_t kStreamGmm = 1 << 20;
constexpr std::uint64_t kStreamOrder = 2 << 20;
constexpr std::uint64_t kStreamAugment = 3 << 20;

std::uint64_t view_seed(std::uint64_t seed, int epoch, std::uint64_t id, int view) {
  Rng r = make_rng(seed, kStreamAugment + static_cast<std::uint64_t>(epoch));
  Rng s = make_rng(r(), id * 2 + static_cast<std::uint64_t>(view));
  return s();
}

Matrix cls_rows(const std::vector<const Sample*>& samples, std::size_t d) {
  Matrix m(samples.size(), d);
  for (std::size_t i = 0; i < samples.size(); ++i)
    std::copy(samples[i]->cls_fixed.begin(), samples[i]->cls_fixed.end(), m.row(i).begin());
  return m;
}

Matrix global_probs(const ModelParams& p, const Matrix& cls, double tau) {
  return softmax_rows(matmul_nt(normalized_rows(encode_cls(p, cls)), normalized_rows(p.prototypes)), tau);
}

void sgd_step(ModelParams& p, ModelParams& vel, ModelParams& grad, double lr, double momentum) {
  std::vector<Matrix*> ps, vs, gs;
  for_each_tensor(p, [&](const std::string&, Matrix& m) { ps.push_back(&m); });
  for_each_tensor(vel, [&](const std::string&, Matrix& m) { vs.push_back(&m); });
  for_each_tensor(grad, [&](const std::string&, Matrix& m) { gs.push_back(&m); });
  for (std::size_t t = 0; t < ps.size(); ++t) {
    auto v = vs[t]->flat();
    auto g = gs[t]->flat();
    auto x = ps[t]->flat();
    for (std::size_t k = 0; k < x.size(); ++k) {
      v[k] = momentum * v[k] + g[k];
      x[k] -= lr * v[k];
    }
  }
  normalize_rows(p.prototypes);
}

void accumulate(BaseTerms& acc, const BaseTerms& t, double w) {
  acc.sup_cls += w * t.sup_cls;
  acc.unsup_cls += w * t.unsup_cls;
  acc.mean_entropy += w * t.mean_entropy;
  acc.sup_rep += w * t.sup_rep;
  acc.unsup_rep += w * t.unsup_rep;
  acc.total += w * t.total;
}

int choose_parts(const FeatureDataset& ds, const TrainConfig& cfg) {
  if (cfg.parts > 0) return cfg.parts;
  // Pool each old class's labeled patches into one set.
  std::vector<Matrix> sets;
  for (int c : ds.meta.old_classes) {
    std::vector<double> flat;
    std::size_t rows = 0;
    for (const auto& s : ds.samples) {
      if (!ds.meta.is_labeled(s.id) || !s.label || *s.label != c) continue;
      const Matrix pts = gmm_points(s, ds.meta.dim, cfg.gmm_normalize);
      flat.insert(flat.end(), pts.flat().begin(), pts.flat().end());
      rows += pts.rows();
    }
    Matrix m(rows, ds.meta.dim);
    std::copy(flat.begin(), flat.end(), m.flat().begin());
    sets.push_back(std::move(m));
  }
  const auto sel = select_k(sets, cfg.k_min, cfg.k_max, make_rng(cfg.seed, kStreamSelectK)(), cfg.threads);
  log::info("selected K = " + std::to_string(sel.k) + " parts by silhouette");
  return sel.k;
}

}  // namespace

const char* to_string(TrainMode m) noexcept {
  switch (m) {
    case TrainMode::kBaseline: return "baseline";
    case TrainMode::kPdrOnly: return "pdr_only";
    case TrainMode::kFull: return "full";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "baseline") return TrainMode::kBaseline;
  if (s == "pdr_only") return TrainMode::kPdrOnly;
  if (s == "full") return TrainMode::kFull;
  fail(ErrorKind::kValidation, "unknown training mode '" + s + "' (baseline | pdr_only | full)");
}

void validate(const TrainConfig& cfg) {
  validate(cfg.loss);
  auto bad = [](const std::string& what) { fail(ErrorKind::kValidation, "train config: " + what); };
  if (cfg.epochs < 1) bad("epochs must be >= 1");
  if (cfg.warmup_epochs < 0 || cfg.warmup_epochs > cfg.epochs) bad("warmup_epochs must lie in [0, epochs]");
  if (cfg.batch_size < 2) bad("batch_size must be >= 2");
  if (!(cfg.learning_rate > 0.0)) bad("learning_rate must be positive");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) bad("momentum must lie in [0, 1)");
  if (!(cfg.tau_t_start > 0.0 && cfg.tau_t_end > 0.0)) bad("teacher temperatures must be positive");
  if (cfg.tau_t_epochs < 0) bad("tau_t_epochs must be >= 0");
  if (!(cfg.gamma > 0.0)) bad("gamma must be positive");
  if (cfg.parts < 0) bad("parts must be >= 0");
  if (cfg.parts == 0 && (cfg.k_min < 2 || cfg.k_max < cfg.k_min)) bad("need 2 <= k_min <= k_max");
}

SampleParts sample_parts(const Sample& s, std::size_t dim, const GmmParams& gmm, bool normalize) {
  const std::size_t k = gmm.k();
  SampleParts out{Matrix(k, dim, 0.0), std::vector<double>(k, 0.0), {}};
  const auto keep = filter_patches(s);
  if (keep.empty()) return out;
  const auto& learn = s.patches_learnable.empty() ? s.patches_fixed : s.patches_learnable;
  Matrix fixed(keep.size(), dim), x(keep.size(), dim);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    for (std::size_t j = 0; j < dim; ++j) {
      fixed(r, j) = s.patches_fixed[keep[r] * dim + j];
      x(r, j) = learn[keep[r] * dim + j];
    }
  }
  if (normalize) normalize_rows(fixed);
  const Matrix m = part_posteriors(fixed, gmm);
  out.part_inputs = part_features(m, x);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < k; ++c) out.mass[c] += m(r, c);
  std::vector<std::size_t> all(keep.size());
  std::iota(all.begin(), all.end(), 0);
  out.present = present_parts(m, all);
  return out;
}

Matrix prediction_scores(const TrainState& state, const FeatureDataset& ds, bool use_parts, unsigned threads) {
  const std::size_t d = ds.meta.dim;
  std::vector<const Sample*> all;
  for (const auto& s : ds.samples) all.push_back(&s);
  const Matrix x = cls_rows(all, d);
  Matrix scores = global_probs(state.params, x, 1.0);
  if (!use_parts || state.part_model.classes.empty()) return scores;
  require(state.part_model.classes.size() == scores.cols(), "predict: part model does not cover every class");

  const std::size_t k = state.params.parts();
  Matrix flat(ds.size(), k * d);
  parallel_for(ds.size(), threads, [&](std::size_t i) {
    const auto a = argmax(scores.row(i));
    const auto sp = sample_parts(ds.samples[i], d, state.part_model.classes[a], state.part_model.normalized_inputs);
    const Matrix v = encode_parts(state.params, sp.part_inputs, sp.mass);
    std::copy(v.flat().begin(), v.flat().end(), flat.row(i).begin());
  });
  const Matrix h = mlp_forward(state.params.adapter, flat);
  const Matrix hp =
      softmax_rows(matmul_nt(normalized_rows(h), normalized_rows(state.params.prototypes)), 1.0);
  add_scaled(scores, hp);
  return scores;
}

std::vector<int> predict(const TrainState& state, const FeatureDataset& ds, bool use_parts, unsigned threads) {
  const Matrix s = prediction_scores(state, ds, use_parts, threads);
  std::vector<int> out(s.rows());
  for (std::size_t i = 0; i < s.rows(); ++i) out[i] = static_cast<int>(argmax(s.row(i)));
  return out;
}

Matrix encoded_cls(const TrainState& state, const FeatureDataset& ds) {
  return normalized_rows(encode_cls(state.params, cls_matrix(ds)));
}

Prototypes calibrated_prototypes(const TrainState& state, const FeatureDataset& ds, double tau_s) {
  validate(ds);
  require(static_cast<std::size_t>(ds.meta.num_classes) == state.params.num_classes() &&
              ds.meta.dim == state.params.dim(),
          "calibrated_prototypes: state does not match the dataset's classes or dimension");
  std::size_t labeled = 0;
  for (const auto& s : ds.samples) labeled += ds.meta.is_labeled(s.id);
  const std::size_t old = std::max<std::size_t>(1, ds.meta.old_classes.size());
  const Matrix fn = encoded_cls(state, ds);
  const Matrix p = softmax_rows(matmul_nt(fn, normalized_rows(state.params.prototypes)), tau_s);
  const Matrix q = sinkhorn_adjust(p).q;
  return calibrate_prototypes(q, fn, std::max<int>(1, static_cast<int>(labeled / old)));
}

TrainResult train(const FeatureDataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  validate(cfg);
  validate(ds);
  const std::size_t n = ds.size();
  const std::size_t d = ds.meta.dim;
  const auto c = static_cast<std::size_t>(ds.meta.num_classes);
  const std::size_t old = ds.meta.old_classes.size();
  require(old >= 1, "train: need at least one old class");
  std::size_t labeled = 0;
  for (const auto& s : ds.samples) labeled += ds.meta.is_labeled(s.id);
  require(labeled >= 1 && labeled < n, "train: need both labeled and unlabeled samples");

  const bool use_pdr = cfg.mode != TrainMode::kBaseline;
  const bool use_branch = cfg.mode == TrainMode::kFull;
  const bool parts_in_predict = use_branch && cfg.loss.alpha > 0.0;

  TrainResult res;
  TrainState& st = res.state;
  st.parts = choose_parts(ds, cfg);
  {
    Rng init = make_rng(cfg.seed, kStreamInit);
    ModelShape shape{d, c, static_cast<std::size_t>(st.parts), cfg.proj_dim ? cfg.proj_dim : d,
                     cfg.adapter_width, 0, cfg.separate_part_projector};
    st.params = init_model(shape, init);
  }
  st.velocity = zeros_like(st.params);

  std::vector<const Sample*> all;
  std::vector<int> truth(n, -1), batch_label(n, -1);
  std::vector<std::size_t> unlabeled;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = ds.samples[i];
    all.push_back(&s);
    truth[i] = s.label.value_or(-1);
    if (ds.meta.is_labeled(s.id)) {
      batch_label[i] = truth[i];
    } else {
      unlabeled.push_back(i);
    }
  }
  const Matrix x_all = cls_rows(all, d);
  const int ns = compute_ns(cfg.gamma, labeled, old);
  const int fallback = std::max<int>(1, static_cast<int>(labeled / old));
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(steps_per_epoch) * cfg.epochs;
  std::size_t step = 0;

  Matrix slot_reference;  // set by the first GMM fit
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochMetrics em;
    em.epoch = e;
    const double alpha = use_pdr ? cfg.loss.alpha : 0.0;  // baseline never weights the part terms
    em.alpha = cfg.warmup_epochs > 0 ? alpha * std::min(1.0, static_cast<double>(e) / cfg.warmup_epochs) : alpha;
    const double ramp = cfg.tau_t_epochs > 0 ? std::min(1.0, static_cast<double>(e) / cfg.tau_t_epochs) : 1.0;
    em.tau_t = cfg.tau_t_start + (cfg.tau_t_end - cfg.tau_t_start) * ramp;

    // Epoch-level refresh: predictions, transport, candidates, part models.
    const Matrix p = global_probs(st.params, x_all, cfg.loss.tau_s);
    const Matrix q = sinkhorn_adjust(p).q;
    st.assignments = compute_assignments(q);
    for (std::size_t i = 0; i < n; ++i)
      if (batch_label[i] >= 0) st.assignments[i] = batch_label[i];
    const Matrix fn = normalized_rows(encode_cls(st.params, x_all));
    const auto cal = calibrate_prototypes(q, fn, fallback);
    const auto cands = select_candidates(cal, fn, ds, ns);
    em.purity = candidate_purity(cands, truth, ds.meta).mean_new;
    em.purity_raw = candidate_purity(select_from_scores(p, ds, ns), truth, ds.meta).mean_new;
    if (use_pdr) {
      st.part_model = fit_class_gmms(ds, cands, static_cast<std::size_t>(st.parts), cfg.gmm, cfg.gmm_normalize,
                                     make_rng(cfg.seed, kStreamGmm + static_cast<std::uint64_t>(e))(), cfg.threads,
                                     slot_reference.empty() ? nullptr : &slot_reference);
      // Keep part slots stable across refits so the adapter sees a fixed layout.
      if (slot_reference.empty()) slot_reference = slot_means(st.part_model.classes);
    }

    // Batch updates.
    LossConfig lc = cfg.loss;
    lc.alpha = em.alpha;
    lc.tau_t = em.tau_t;
    lc.pdr = use_pdr;
    lc.part_branch = use_branch;
    const bool need_parts = use_pdr && lc.alpha > 0.0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng = make_rng(cfg.seed, kStreamOrder + static_cast<std::uint64_t>(e));
    std::shuffle(order.begin(), order.end(), order_rng);

    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++step) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      if (b < 2) continue;  // a lone trailing sample has no contrastive partner
      BatchViewPair batch;
      for (auto& v : batch.views) {
        v.cls = Matrix(b, d);
        if (need_parts) {
          v.part_inputs.resize(b);
          v.part_mass.resize(b);
        }
      }
      batch.labels.resize(b);
      batch.shared.resize(b);
      parallel_for(b, cfg.threads, [&](std::size_t r) {
        const std::size_t i = order[start + r];
        const Sample& s = ds.samples[i];
        batch.labels[r] = batch_label[i];
        std::vector<int> present[2];
        for (int v = 0; v < 2; ++v) {
          const Sample view = augment_view(s, cfg.augment, view_seed(cfg.seed, e, s.id, v));
          auto& vb = batch.views[v];
          std::copy(view.cls_fixed.begin(), view.cls_fixed.end(), vb.cls.row(r).begin());
          if (!need_parts) continue;
          auto sp = sample_parts(view, d, st.part_model.classes[static_cast<std::size_t>(st.assignments[i])],
                                 st.part_model.normalized_inputs);
          vb.part_inputs[r] = std::move(sp.part_inputs);
          vb.part_mass[r] = std::move(sp.mass);
          present[v] = std::move(sp.present);
        }
        std::set_intersection(present[0].begin(), present[0].end(), present[1].begin(), present[1].end(),
                              std::back_inserter(batch.shared[r]));
      });

      const double lr = cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
      if (batches == 0) em.lr = lr;
      auto r = total_objective(batch, st.params, lc);
      if (!std::isfinite(r.total)) {
        fail(ErrorKind::kNumerical, "training diverged (loss " + std::to_string(r.total) + ") at epoch " +
                                        std::to_string(e) + ", batch " + std::to_string(batches));
      }
      sgd_step(st.params, st.velocity, r.grad, lr, cfg.momentum);
      em.loss += r.total;
      accumulate(em.global, r.global, 1.0);
      accumulate(em.part, r.part, 1.0);
      em.pdr += r.pdr;
      ++batches;
    }
    const double inv = batches ? 1.0 / static_cast<double>(batches) : 0.0;
    em.loss *= inv;
    em.pdr *= inv;
    BaseTerms g{}, pt{};
    accumulate(g, em.global, inv);
    accumulate(pt, em.part, inv);
    em.global = g;
    em.part = pt;

    st.epoch = e + 1;
    const auto preds = predict(st, ds, parts_in_predict, cfg.threads);
    std::vector<int> up, ut;
    for (std::size_t i : unlabeled) {
      up.push_back(preds[i]);
      ut.push_back(truth[i]);
    }
    const auto acc = clustering_acc(up, ut, ds.meta.old_classes, ds.meta.num_classes);
    em.acc_all = acc.all;
    em.acc_old = acc.old_acc;
    em.acc_new = acc.new_acc;
    res.history.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  return res;
}

void save_state(const TrainState& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  detail::ByteWriter w(out);
  detail::write_tag(w, "PSTA", kStateVersion);
  const auto& p = s.params;
  w.u32(static_cast<std::uint32_t>(p.dim()));
  w.u32(static_cast<std::uint32_t>(p.num_classes()));
  w.u32(static_cast<std::uint32_t>(p.parts()));
  w.u32(static_cast<std::uint32_t>(p.projector.out.out_dim()));
  w.u32(static_cast<std::uint32_t>(p.adapter.hidden.out_dim()));
  w.u32(static_cast<std::uint32_t>(p.projector.hidden.out_dim()));
  w.u32(p.part_projector.empty() ? 0u : 1u);
  w.i32(s.epoch);
  w.u32(static_cast<std::uint32_t>(s.assignments.size()));
  for (int a : s.assignments) w.i32(a);
  auto put = [&](const std::string&, const Matrix& m) { w.f64s(m.flat()); };
  for_each_tensor(s.params, put);
  for_each_tensor(s.velocity, put);
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

TrainState load_state(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes);
  detail::read_tag(r, "PSTA", kStateVersion, path);
  detail::need(r, 9 * 4, path);
  ModelShape shape;
  shape.dim = r.u32();
  shape.classes = r.u32();
  shape.parts = r.u32();
  shape.proj_dim = r.u32();
  shape.adapter_width = r.u32();
  shape.projector_width = r.u32();
  shape.separate_part_projector = (r.u32() & 1u) != 0;
  if (shape.dim == 0 || shape.classes == 0 || shape.parts == 0 || shape.proj_dim == 0 || shape.adapter_width == 0 ||
      shape.projector_width == 0)
    fail(ErrorKind::kValidation, path.string() + ": zero model dimension");
  TrainState s;
  s.epoch = r.i32();
  const std::size_t n = r.u32();
  detail::need(r, n * 4, path);
  s.assignments.resize(n);
  for (int& a : s.assignments) a = r.i32();
  Rng unused = make_rng(0);
  s.params = init_model(shape, unused);
  s.velocity = zeros_like(s.params);
  s.parts = static_cast<int>(shape.parts);
  auto get = [&](const std::string&, Matrix& m) {
    detail::need(r, m.size() * 8, path);
    r.f64s(m.flat());
    for (double v : m.flat())
      if (!std::isfinite(v)) fail(ErrorKind::kValidation, path.string() + ": non-finite parameter");
  };
  for_each_tensor(s.params, get);
  for_each_tensor(s.velocity, get);
  if (r.remaining() != 0) fail(ErrorKind::kValidation, path.string() + ": trailing bytes");
  return s;
}

}  // namespace partdisc
