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


#include "partdisc/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "partdisc/error.hpp"
#include "partdisc/linalg.hpp"
#include "partdisc/log.hpp"
#include "partdisc/simd/kernels.hpp"

namespace partdisc {
namespace {

struct Cosine {
  Matrix xh, wh, s;  // normalized features, normalized prototypes, logits (cosines)
};

Cosine cosine_logits(const Matrix& x, const Matrix& w) {
  require(x.cols() == w.cols(), "cosine logits: feature and prototype widths differ");
  Cosine c{normalized_rows(x), normalized_rows(w), {}};
  c.s = matmul_nt(c.xh, c.wh);
  return c;
}

// Pulls dS (rows x C) back to the raw features and prototypes.
void cosine_backward(const Matrix& x, const Matrix& w, const Cosine& c, const Matrix& ds, Matrix& dx,
                     Matrix& dw) {
  const Matrix dxh = matmul(ds, c.wh);
  const Matrix dwh = matmul(transpose(ds), c.xh);
  add_scaled(dx, normalize_rows_backward(x, dxh));
  add_scaled(dw, normalize_rows_backward(w, dwh));
}

std::vector<double> scaled(std::span<const double> row, double inv_tau) {
  std::vector<double> z(row.begin(), row.end());
  for (double& v : z) v *= inv_tau;
  return z;
}

// Mean CE over labeled rows of softmax(S / tau); adds weight * dLoss/dS to ds.
double sup_ce(const Matrix& s, std::span<const int> labels, double tau, Matrix& ds, double weight) {
  require(labels.size() == s.rows(), "supervised CE: one label per row required");
  std::size_t nl = 0;
  for (int y : labels) nl += y >= 0;
  if (nl == 0) return 0.0;
  const double inv = 1.0 / tau;
  double total = 0.0;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const int y = labels[i];
    if (y < 0) continue;
    require(static_cast<std::size_t>(y) < s.cols(), "supervised CE: label out of range");
    auto z = scaled(s.row(i), inv);
    total += log_sum_exp(z) - z[static_cast<std::size_t>(y)];
    softmax_inplace(z);
    z[static_cast<std::size_t>(y)] -= 1.0;
    for (std::size_t c = 0; c < z.size(); ++c) ds(i, c) += weight * z[c] * inv / static_cast<double>(nl);
  }
  return total / static_cast<double>(nl);
}

// Mean over rows of CE(q, softmax(S / tau_s)) for constant targets q.
double distill_ce(const Matrix& student, const Matrix& q, double tau_s, Matrix& ds, double weight) {
  require(q.rows() == student.rows() && q.cols() == student.cols(), "distillation: target shape mismatch");
  const std::size_t n = student.rows();
  const double inv_s = 1.0 / tau_s;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto qi = q.row(i);
    auto z = scaled(student.row(i), inv_s);
    const double lse = log_sum_exp(z);
    const double mass = simd::sum(qi);
    for (std::size_t c = 0; c < z.size(); ++c) total -= qi[c] * (z[c] - lse);
    softmax_inplace(z);
    for (std::size_t c = 0; c < z.size(); ++c)
      ds(i, c) += weight * (mass * z[c] - qi[c]) * inv_s / static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

Matrix softmax_of(const Matrix& s, double tau) { return softmax_rows(s, tau); }

// dLoss/dS given dLoss/dP for P = softmax(S / tau), added into ds.
void softmax_backward(const Matrix& p, const Matrix& dp, double tau, Matrix& ds) {
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const double inner = simd::dot(p.row(i), dp.row(i));
    for (std::size_t c = 0; c < p.cols(); ++c) ds(i, c) += p(i, c) * (dp(i, c) - inner) / tau;
  }
}

// Contrastive loss over the rows of zh (already normalized). For each anchor
// a in `active`: denominator over the other active rows, positives pos[a].
// Returns the sum of anchor losses / norm and adds the gradient to dzh.
double contrast(const Matrix& zh, std::span<const std::size_t> active,
                const std::vector<std::vector<std::size_t>>& pos, double tau, double norm, Matrix& dzh) {
  const double inv = 1.0 / tau;
  double total = 0.0;
  std::vector<double> logits;
  std::vector<std::size_t> others;
  for (std::size_t ai = 0; ai < active.size(); ++ai) {
    const std::size_t a = active[ai];
    const auto& p = pos[ai];
    if (p.empty()) continue;
    logits.clear();
    others.clear();
    for (std::size_t n : active) {
      if (n == a) continue;
      others.push_back(n);
      logits.push_back(simd::dot(zh.row(a), zh.row(n)) * inv);
    }
    const double lse = log_sum_exp(logits);
    std::vector<double> g(logits);
    softmax_inplace(g);
    const double share = 1.0 / static_cast<double>(p.size());
    for (std::size_t t = 0; t < others.size(); ++t) {
      if (std::find(p.begin(), p.end(), others[t]) != p.end()) {
        total += share * (lse - logits[t]);
        g[t] -= share;
      }
    }
    for (std::size_t t = 0; t < others.size(); ++t) {
      const double c = g[t] * inv / norm;
      simd::axpy(c, zh.row(others[t]), dzh.row(a));
      simd::axpy(c, zh.row(a), dzh.row(others[t]));
    }
  }
  return total / norm;
}

Matrix vstack(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "stack: width mismatch");
  Matrix out(a.rows() + b.rows(), a.cols());
  std::copy(a.flat().begin(), a.flat().end(), out.flat().begin());
  std::copy(b.flat().begin(), b.flat().end(), out.flat().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

Matrix rows_of(const Matrix& m, std::size_t from, std::size_t count) {
  Matrix out(count, m.cols());
  for (std::size_t i = 0; i < count; ++i) {
    const auto src = m.row(from + i);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

double supcon_impl(const Matrix& zh, std::span<const int> labels, double tau, Matrix& dzh) {
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) active.push_back(i);
  if (active.empty()) return 0.0;
  std::vector<std::vector<std::size_t>> pos(active.size());
  for (std::size_t ai = 0; ai < active.size(); ++ai)
    for (std::size_t n : active)
      if (n != active[ai] && labels[n] == labels[active[ai]]) pos[ai].push_back(n);
  return contrast(zh, active, pos, tau, static_cast<double>(active.size()), dzh);
}

double infonce_impl(const Matrix& zh, std::size_t b, double tau, Matrix& dzh) {
  if (b < 2) fail(ErrorKind::kInvalidArgument, "unsup_rep_loss: batch of " + std::to_string(b) +
                                                   " leaves no negatives");
  std::vector<std::size_t> active(2 * b);
  std::vector<std::vector<std::size_t>> pos(2 * b);
  for (std::size_t i = 0; i < 2 * b; ++i) {
    active[i] = i;
    pos[i] = {i < b ? i + b : i - b};
  }
  return contrast(zh, active, pos, tau, static_cast<double>(2 * b), dzh);
}

// Mean entropy regularizer over prediction rows; adds dZeta/dP to dps.
double mean_entropy_impl(const std::vector<const Matrix*>& ps, double eps, std::vector<Matrix>& dps) {
  require(!ps.empty(), "mean_entropy_reg: no predictions");
  const std::size_t c = ps.front()->cols();
  std::size_t n = 0;
  std::vector<double> mean(c, 0.0);
  for (const Matrix* p : ps) {
    require(p->cols() == c, "mean_entropy_reg: class count mismatch");
    for (std::size_t i = 0; i < p->rows(); ++i) simd::axpy(1.0, p->row(i), mean);
    n += p->rows();
  }
  require(n > 0, "mean_entropy_reg: no prediction rows");
  for (double& v : mean) v /= static_cast<double>(n);
  double value = 0.0;
  std::vector<double> g(c);
  constexpr double kTiny = std::numeric_limits<double>::min();
  for (std::size_t k = 0; k < c; ++k) {
    if (mean[k] > 0.0) value += mean[k] * std::log(mean[k]);
    g[k] = eps * (std::log(std::max(mean[k], kTiny)) + 1.0) / static_cast<double>(n);
  }
  for (std::size_t t = 0; t < ps.size(); ++t)
    for (std::size_t i = 0; i < ps[t]->rows(); ++i) simd::axpy(1.0, g, dps[t].row(i));
  return eps * value;
}

}  // namespace

void validate(const LossConfig& cfg) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
      fail(ErrorKind::kValidation, std::string("loss config: ") + name + " must be positive");
  };
  positive(cfg.tau_s, "tau_s");
  positive(cfg.tau_t, "tau_t");
  positive(cfg.tau_u, "tau_u");
  positive(cfg.tau_c, "tau_c");
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0))
    fail(ErrorKind::kValidation, "loss config: lambda must lie in [0, 1]");
  if (!(cfg.alpha >= 0.0) || !std::isfinite(cfg.alpha))
    fail(ErrorKind::kValidation, "loss config: alpha must be >= 0");
  if (!(cfg.eps_me >= 0.0) || !std::isfinite(cfg.eps_me))
    fail(ErrorKind::kValidation, "loss config: eps_me must be >= 0");
}

LossResult sup_cls_loss(const Matrix& features, std::span<const int> labels, const Matrix& w,
                        double tau_s) {
  const auto cos = cosine_logits(features, w);
  Matrix ds(cos.s.rows(), cos.s.cols(), 0.0);
  LossResult r;
  r.value = sup_ce(cos.s, labels, tau_s, ds, 1.0);
  r.grads = {Matrix(features.rows(), features.cols(), 0.0), Matrix(w.rows(), w.cols(), 0.0)};
  cosine_backward(features, w, cos, ds, r.grads[0], r.grads[1]);
  return r;
}

Matrix teacher_targets(const Matrix& view, const Matrix& w, double tau_t) {
  return softmax_rows(cosine_logits(view, w).s, tau_t);
}

LossResult distill_loss(const Matrix& student, const Matrix& targets, const Matrix& w, double tau_s) {
  const auto c = cosine_logits(student, w);
  Matrix ds(c.s.rows(), c.s.cols(), 0.0);
  LossResult r;
  r.value = distill_ce(c.s, targets, tau_s, ds, 1.0);
  r.grads = {Matrix(student.rows(), student.cols(), 0.0), Matrix(w.rows(), w.cols(), 0.0)};
  cosine_backward(student, w, c, ds, r.grads[0], r.grads[1]);
  return r;
}

LossResult unsup_cls_loss(const Matrix& view1, const Matrix& view2, const Matrix& w, double tau_s,
                          double tau_t, bool symmetric) {
  require(view1.rows() == view2.rows() && view1.cols() == view2.cols(), "unsup_cls_loss: views differ in shape");
  const auto c1 = cosine_logits(view1, w);
  const auto c2 = cosine_logits(view2, w);
  const Matrix q1 = softmax_rows(c1.s, tau_t);
  const Matrix q2 = softmax_rows(c2.s, tau_t);
  Matrix ds1(c1.s.rows(), c1.s.cols(), 0.0), ds2(ds1);
  LossResult r;
  if (symmetric) {
    r.value = 0.5 * distill_ce(c1.s, q2, tau_s, ds1, 0.5) + 0.5 * distill_ce(c2.s, q1, tau_s, ds2, 0.5);
  } else {
    r.value = distill_ce(c1.s, q2, tau_s, ds1, 1.0);
  }
  r.grads = {Matrix(view1.rows(), view1.cols(), 0.0), Matrix(view2.rows(), view2.cols(), 0.0),
             Matrix(w.rows(), w.cols(), 0.0)};
  cosine_backward(view1, w, c1, ds1, r.grads[0], r.grads[2]);
  cosine_backward(view2, w, c2, ds2, r.grads[1], r.grads[2]);
  return r;
}

LossResult mean_entropy_reg(const std::vector<Matrix>& predictions, double eps_me) {
  std::vector<const Matrix*> ps;
  LossResult r;
  for (const auto& p : predictions) {
    ps.push_back(&p);
    r.grads.emplace_back(p.rows(), p.cols(), 0.0);
  }
  r.value = mean_entropy_impl(ps, eps_me, r.grads);
  return r;
}

LossResult supcon_loss(const Matrix& z, std::span<const int> labels, double tau_c) {
  require(labels.size() == z.rows(), "supcon_loss: one label per row required");
  const Matrix zh = normalized_rows(z);
  Matrix dzh(z.rows(), z.cols(), 0.0);
  LossResult r;
  r.value = supcon_impl(zh, labels, tau_c, dzh);
  r.grads = {normalize_rows_backward(z, dzh)};
  return r;
}

LossResult sup_rep_loss(const Matrix& z1, const Matrix& z2, std::span<const int> labels, double tau_c) {
  require(z1.rows() == z2.rows(), "sup_rep_loss: views differ in size");
  std::vector<int> both(labels.begin(), labels.end());
  both.insert(both.end(), labels.begin(), labels.end());
  auto r = supcon_loss(vstack(z1, z2), both, tau_c);
  const Matrix g = std::move(r.grads[0]);
  r.grads = {rows_of(g, 0, z1.rows()), rows_of(g, z1.rows(), z2.rows())};
  return r;
}

LossResult unsup_rep_loss(const Matrix& z1, const Matrix& z2, double tau_u) {
  require(z1.rows() == z2.rows(), "unsup_rep_loss: views differ in size");
  const Matrix z = vstack(z1, z2);
  const Matrix zh = normalized_rows(z);
  Matrix dzh(z.rows(), z.cols(), 0.0);
  LossResult r;
  r.value = infonce_impl(zh, z1.rows(), tau_u, dzh);
  const Matrix g = normalize_rows_backward(z, dzh);
  r.grads = {rows_of(g, 0, z1.rows()), rows_of(g, z1.rows(), z2.rows())};
  return r;
}

LossResult pdr_loss(const std::vector<Matrix>& parts1, const std::vector<Matrix>& parts2,
                    const std::vector<std::vector<int>>& shared, bool include_positive) {
  const std::size_t b = parts1.size();
  require(parts2.size() == b && shared.size() == b, "pdr_loss: views and shared sets disagree on batch size");
  LossResult r;
  r.grads.reserve(2 * b);
  for (const auto& m : parts1) r.grads.emplace_back(m.rows(), m.cols(), 0.0);
  for (const auto& m : parts2) r.grads.emplace_back(m.rows(), m.cols(), 0.0);

  std::size_t terms = 0;
  for (std::size_t i = 0; i < b; ++i)
    if (shared[i].size() >= 2) terms += shared[i].size();
  if (terms == 0) {
    log::warn("pdr_loss: no sample has two shared parts; term is 0");
    return r;
  }
  const double norm = static_cast<double>(terms);
  double total = 0.0;
  std::vector<double> logits;
  for (std::size_t i = 0; i < b; ++i) {
    const auto& s = shared[i];
    if (s.size() < 2) continue;
    require(parts1[i].rows() == parts2[i].rows() && parts1[i].cols() == parts2[i].cols(),
            "pdr_loss: part shapes differ between views");
    const Matrix v1 = normalized_rows(parts1[i]);
    const Matrix v2 = normalized_rows(parts2[i]);
    Matrix dv1(v1.rows(), v1.cols(), 0.0), dv2(dv1);
    for (int k : s) {
      require(k >= 0 && static_cast<std::size_t>(k) < v1.rows(), "pdr_loss: shared part out of range");
      const auto ku = static_cast<std::size_t>(k);
      const double pos = simd::dot(v1.row(ku), v2.row(ku));
      logits.clear();
      std::vector<std::size_t> den;
      for (int kp : s) {
        if (kp == k && !include_positive) continue;
        den.push_back(static_cast<std::size_t>(kp));
        logits.push_back(simd::dot(v1.row(ku), v2.row(static_cast<std::size_t>(kp))));
      }
      total += log_sum_exp(logits) - pos;
      softmax_inplace(logits);
      // d/ds_kk' = softmax over the denominator, minus 1 on the positive.
      for (std::size_t t = 0; t < den.size(); ++t) {
        simd::axpy(logits[t] / norm, v2.row(den[t]), dv1.row(ku));
        simd::axpy(logits[t] / norm, v1.row(ku), dv2.row(den[t]));
      }
      simd::axpy(-1.0 / norm, v2.row(ku), dv1.row(ku));
      simd::axpy(-1.0 / norm, v1.row(ku), dv2.row(ku));
    }
    add_scaled(r.grads[i], normalize_rows_backward(parts1[i], dv1));
    add_scaled(r.grads[b + i], normalize_rows_backward(parts2[i], dv2));
  }
  r.value = total / norm;
  return r;
}

ModelParams init_model(const ModelShape& shape, Rng& rng) {
  require(shape.dim > 0 && shape.classes > 0 && shape.parts > 0 && shape.proj_dim > 0,
          "init_model: all sizes must be positive");
  const std::size_t d = shape.dim;
  ModelParams p;
  p.encoder = {Matrix(d, d, 0.0), Matrix(1, d, 0.0)};
  for (std::size_t j = 0; j < d; ++j) p.encoder.w(j, j) = 1.0;
  std::normal_distribution<double> normal(0.0, 1.0);
  p.prototypes = Matrix(shape.classes, d);
  for (double& v : p.prototypes.flat()) v = normal(rng);
  normalize_rows(p.prototypes);
  const std::size_t aw = shape.adapter_width ? shape.adapter_width : 2 * d;
  const std::size_t pw = shape.projector_width ? shape.projector_width : 2 * d;
  p.adapter = make_mlp(shape.parts * d, aw, d, rng);
  p.projector = make_mlp(d, pw, shape.proj_dim, rng);
  if (shape.separate_part_projector) p.part_projector = make_mlp(d, pw, shape.proj_dim, rng);
  return p;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z;
  z.encoder = zeros_like(p.encoder);
  z.prototypes = Matrix(p.prototypes.rows(), p.prototypes.cols(), 0.0);
  z.adapter = zeros_like(p.adapter);
  z.projector = zeros_like(p.projector);
  if (!p.part_projector.empty()) z.part_projector = zeros_like(p.part_projector);
  return z;
}

Matrix encode_cls(const ModelParams& p, const Matrix& cls) { return linear_forward(p.encoder, cls); }

Matrix encode_parts(const ModelParams& p, const Matrix& part_inputs, std::span<const double> mass) {
  require(mass.size() == part_inputs.rows(), "encode_parts: one mass per part required");
  Matrix v = matmul_nt(part_inputs, p.encoder.w);
  for (std::size_t k = 0; k < v.rows(); ++k) simd::axpy(mass[k], p.encoder.b.row(0), v.row(k));
  return v;
}

namespace {

Matrix flatten_parts(const std::vector<Matrix>& parts) {
  const std::size_t b = parts.size();
  const std::size_t width = b ? parts.front().size() : 0;
  Matrix out(b, width);
  for (std::size_t i = 0; i < b; ++i) {
    require(parts[i].size() == width, "part features: inconsistent part count");
    std::copy(parts[i].flat().begin(), parts[i].flat().end(), out.row(i).begin());
  }
  return out;
}

std::vector<Matrix> encode_view_parts(const ModelParams& p, const ViewBatch& view) {
  require(view.part_inputs.size() == view.cls.rows() && view.part_mass.size() == view.cls.rows(),
          "part inputs: one entry per sample required");
  std::vector<Matrix> v;
  v.reserve(view.part_inputs.size());
  for (std::size_t i = 0; i < view.part_inputs.size(); ++i)
    v.push_back(encode_parts(p, view.part_inputs[i], view.part_mass[i]));
  return v;
}

// Encoder gradient of V_i = U_i A^T + mass_i b^T.
void encoder_backward_parts(const ViewBatch& view, std::size_t i, const Matrix& dv, Linear& grad) {
  const Matrix& u = view.part_inputs[i];
  for (std::size_t k = 0; k < dv.rows(); ++k) {
    const auto g = dv.row(k);
    for (std::size_t o = 0; o < g.size(); ++o) {
      if (g[o] == 0.0) continue;
      simd::axpy(g[o], u.row(k), grad.w.row(o));
      grad.b(0, o) += g[o] * view.part_mass[i][k];
    }
  }
}

}  // namespace

Matrix part_enhanced(const ModelParams& p, const ViewBatch& view) {
  return mlp_forward(p.adapter, flatten_parts(encode_view_parts(p, view)));
}

BaseResult base_objective(const Matrix& view1, const Matrix& view2, std::span<const int> labels,
                          const Matrix& w, const Mlp& projector, const LossConfig& cfg,
                          const TeacherPair* teachers) {
  require(view1.rows() == view2.rows() && labels.size() == view1.rows(),
          "base objective: views and labels disagree on batch size");
  const double lam = cfg.lambda;
  BaseResult out;
  out.d_view1 = Matrix(view1.rows(), view1.cols(), 0.0);
  out.d_view2 = out.d_view1;
  out.d_w = Matrix(w.rows(), w.cols(), 0.0);
  out.d_projector = zeros_like(projector);

  // Classification on cosine logits.
  const auto c1 = cosine_logits(view1, w);
  const auto c2 = cosine_logits(view2, w);
  Matrix ds1(c1.s.rows(), c1.s.cols(), 0.0), ds2(ds1);
  auto& t = out.terms;
  t.sup_cls = 0.5 * sup_ce(c1.s, labels, cfg.tau_s, ds1, 0.5 * lam) +
              0.5 * sup_ce(c2.s, labels, cfg.tau_s, ds2, 0.5 * lam);
  const Matrix q1 = teachers ? teachers->view1 : softmax_rows(c1.s, cfg.tau_t);
  const Matrix q2 = teachers ? teachers->view2 : softmax_rows(c2.s, cfg.tau_t);
  if (cfg.symmetric_unsup) {
    t.unsup_cls = 0.5 * distill_ce(c1.s, q2, cfg.tau_s, ds1, 0.5 * (1.0 - lam)) +
                  0.5 * distill_ce(c2.s, q1, cfg.tau_s, ds2, 0.5 * (1.0 - lam));
  } else {
    t.unsup_cls = distill_ce(c1.s, q2, cfg.tau_s, ds1, 1.0 - lam);
  }
  if (cfg.eps_me > 0.0) {
    const Matrix p1 = softmax_of(c1.s, cfg.tau_s);
    const Matrix p2 = softmax_of(c2.s, cfg.tau_s);
    std::vector<Matrix> dp{Matrix(p1.rows(), p1.cols(), 0.0), Matrix(p2.rows(), p2.cols(), 0.0)};
    t.mean_entropy = mean_entropy_impl({&p1, &p2}, cfg.eps_me, dp);
    softmax_backward(p1, dp[0], cfg.tau_s, ds1);
    softmax_backward(p2, dp[1], cfg.tau_s, ds2);
  }
  cosine_backward(view1, w, c1, ds1, out.d_view1, out.d_w);
  cosine_backward(view2, w, c2, ds2, out.d_view2, out.d_w);

  // Contrastive representation learning on projections.
  MlpCache k1, k2;
  const Matrix z1 = mlp_forward(projector, view1, &k1);
  const Matrix z2 = mlp_forward(projector, view2, &k2);
  const Matrix z = vstack(z1, z2);
  const Matrix zh = normalized_rows(z);
  Matrix dzh_s(z.rows(), z.cols(), 0.0), dzh_u(dzh_s);
  std::vector<int> both(labels.begin(), labels.end());
  both.insert(both.end(), labels.begin(), labels.end());
  t.sup_rep = supcon_impl(zh, both, cfg.tau_c, dzh_s);
  t.unsup_rep = infonce_impl(zh, z1.rows(), cfg.tau_u, dzh_u);
  Matrix dzh(z.rows(), z.cols(), 0.0);
  add_scaled(dzh, dzh_s, lam);
  add_scaled(dzh, dzh_u, 1.0 - lam);
  const Matrix dz = normalize_rows_backward(z, dzh);
  add_scaled(out.d_view1, mlp_backward(projector, k1, rows_of(dz, 0, z1.rows()), out.d_projector));
  add_scaled(out.d_view2, mlp_backward(projector, k2, rows_of(dz, z1.rows(), z2.rows()), out.d_projector));

  t.total = lam * t.sup_cls + (1.0 - lam) * t.unsup_cls + t.mean_entropy + lam * t.sup_rep +
            (1.0 - lam) * t.unsup_rep;
  return out;
}

ObjectiveResult total_objective(const BatchViewPair& batch, const ModelParams& p, const LossConfig& cfg,
                                const FrozenTeachers* teachers) {
  validate(cfg);
  const auto& v1 = batch.views[0];
  const auto& v2 = batch.views[1];
  ObjectiveResult out;
  out.grad = zeros_like(p);

  const Matrix f1 = encode_cls(p, v1.cls);
  const Matrix f2 = encode_cls(p, v2.cls);
  auto g = base_objective(f1, f2, batch.labels, p.prototypes, p.projector, cfg,
                          teachers ? &teachers->global : nullptr);
  out.global = g.terms;
  out.total = g.terms.total;
  add_scaled(out.grad.prototypes, g.d_w);
  add_scaled(out.grad.projector.hidden.w, g.d_projector.hidden.w);
  add_scaled(out.grad.projector.hidden.b, g.d_projector.hidden.b);
  add_scaled(out.grad.projector.out.w, g.d_projector.out.w);
  add_scaled(out.grad.projector.out.b, g.d_projector.out.b);
  linear_backward(p.encoder, v1.cls, g.d_view1, out.grad.encoder);
  linear_backward(p.encoder, v2.cls, g.d_view2, out.grad.encoder);

  const double a = cfg.alpha;
  if (a == 0.0 || (!cfg.part_branch && !cfg.pdr)) return out;

  const auto parts1 = encode_view_parts(p, v1);
  const auto parts2 = encode_view_parts(p, v2);
  const std::size_t b = parts1.size();
  std::vector<Matrix> dparts1, dparts2;
  for (const auto& m : parts1) dparts1.emplace_back(m.rows(), m.cols(), 0.0);
  for (const auto& m : parts2) dparts2.emplace_back(m.rows(), m.cols(), 0.0);

  if (cfg.part_branch) {
    MlpCache a1, a2;
    const Matrix h1 = mlp_forward(p.adapter, flatten_parts(parts1), &a1);
    const Matrix h2 = mlp_forward(p.adapter, flatten_parts(parts2), &a2);
    const bool own = !p.part_projector.empty();
    const Mlp& proj = own ? p.part_projector : p.projector;
    auto pb = base_objective(h1, h2, batch.labels, p.prototypes, proj, cfg,
                             teachers ? &teachers->part : nullptr);
    out.part = pb.terms;
    out.total += a * pb.terms.total;
    add_scaled(out.grad.prototypes, pb.d_w, a);
    Mlp& gproj = own ? out.grad.part_projector : out.grad.projector;
    add_scaled(gproj.hidden.w, pb.d_projector.hidden.w, a);
    add_scaled(gproj.hidden.b, pb.d_projector.hidden.b, a);
    add_scaled(gproj.out.w, pb.d_projector.out.w, a);
    add_scaled(gproj.out.b, pb.d_projector.out.b, a);
    Matrix dh1 = std::move(pb.d_view1), dh2 = std::move(pb.d_view2);
    for (double& x : dh1.flat()) x *= a;
    for (double& x : dh2.flat()) x *= a;
    const Matrix dflat1 = mlp_backward(p.adapter, a1, dh1, out.grad.adapter);
    const Matrix dflat2 = mlp_backward(p.adapter, a2, dh2, out.grad.adapter);
    for (std::size_t i = 0; i < b; ++i) {
      std::copy(dflat1.row(i).begin(), dflat1.row(i).end(), dparts1[i].flat().begin());
      std::copy(dflat2.row(i).begin(), dflat2.row(i).end(), dparts2[i].flat().begin());
    }
  }
  if (cfg.pdr) {
    const auto r = pdr_loss(parts1, parts2, batch.shared, cfg.pdr_include_positive);
    out.pdr = r.value;
    out.total += a * r.value;
    for (std::size_t i = 0; i < b; ++i) {
      add_scaled(dparts1[i], r.grads[i], a);
      add_scaled(dparts2[i], r.grads[b + i], a);
    }
  }
  for (std::size_t i = 0; i < b; ++i) {
    encoder_backward_parts(v1, i, dparts1[i], out.grad.encoder);
    encoder_backward_parts(v2, i, dparts2[i], out.grad.encoder);
  }
  return out;
}

FrozenTeachers teacher_snapshot(const BatchViewPair& batch, const ModelParams& p, const LossConfig& cfg) {
  FrozenTeachers t;
  t.global.view1 = teacher_targets(encode_cls(p, batch.views[0].cls), p.prototypes, cfg.tau_t);
  t.global.view2 = teacher_targets(encode_cls(p, batch.views[1].cls), p.prototypes, cfg.tau_t);
  if (cfg.alpha != 0.0 && cfg.part_branch) {
    t.part.view1 = teacher_targets(part_enhanced(p, batch.views[0]), p.prototypes, cfg.tau_t);
    t.part.view2 = teacher_targets(part_enhanced(p, batch.views[1]), p.prototypes, cfg.tau_t);
  }
  return t;
}

}  // namespace partdisc
