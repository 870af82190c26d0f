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

// Training objectives with exact analytic gradients. Every loss is a pure
// function of its inputs; normalization of features and prototypes happens
// inside the differentiated function, so gradients are w.r.t. the raw inputs.
//
// Label convention: labels[i] >= 0 marks a labeled sample, -1 an unlabeled one.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "partdisc/matrix.hpp"
#include "partdisc/nn.hpp"
#include "partdisc/runtime.hpp"

namespace partdisc {

struct LossConfig {
  double tau_s = 0.1;    // student temperature
  double tau_t = 0.07;   // teacher temperature (the trainer schedules it)
  double tau_u = 0.07;   // unsupervised contrastive
  double tau_c = 1.0;    // supervised contrastive
  double lambda = 0.35;  // supervised / unsupervised balance
  double eps_me = 1.0;   // mean-entropy weight
  double alpha = 2.0;    // weight of the part branch
  bool symmetric_unsup = true;   // each view teaches the other once
  bool pdr_include_positive = false;  // standard InfoNCE denominator for PDR
  bool part_branch = true;  // L_base on part-enhanced features
  bool pdr = true;          // part discrepancy term
};

void validate(const LossConfig& cfg);

/// Loss value plus one gradient per differentiable input, in the order the
/// function documents.
struct LossResult {
  double value = 0.0;
  std::vector<Matrix> grads;
};

/// Mean cross-entropy of softmax(cos(f_i, w_c) / tau_s) against labels over
/// the labeled rows. Grads: {features, w}. No labeled rows -> 0, zero grads.
LossResult sup_cls_loss(const Matrix& features, std::span<const int> labels, const Matrix& w,
                        double tau_s);

/// Teacher targets softmax(cos(f_i, w_c) / tau_t); treated as constants.
Matrix teacher_targets(const Matrix& view, const Matrix& w, double tau_t);

/// Mean over rows of CE(targets_i, softmax(cos(f_i, w) / tau_s)) with fixed
/// targets. Grads: {student, w}.
LossResult distill_loss(const Matrix& student, const Matrix& targets, const Matrix& w, double tau_s);

/// Cross-entropy of the student view (tau_s) against the detached teacher
/// prediction of the other view (tau_t), averaged over rows; with `symmetric`
/// both orderings are averaged. Grads: {view1, view2, w}.
LossResult unsup_cls_loss(const Matrix& view1, const Matrix& view2, const Matrix& w, double tau_s,
                          double tau_t, bool symmetric = true);

/// zeta = -eps * H(mean of all prediction rows). Grads: one per input matrix.
LossResult mean_entropy_reg(const std::vector<Matrix>& predictions, double eps_me);

/// Supervised contrastive loss over one set of projections: for each anchor,
/// positives are the other same-label rows and the denominator runs over all
/// other rows. Only labeled rows take part; an anchor without positives
/// contributes 0 but still counts in the mean. Grads: {z}.
LossResult supcon_loss(const Matrix& z, std::span<const int> labels, double tau_c);

/// supcon_loss over both views stacked (labels repeated). Grads: {z1, z2}.
LossResult sup_rep_loss(const Matrix& z1, const Matrix& z2, std::span<const int> labels, double tau_c);

/// InfoNCE over the 2B stacked views: the positive of a row is its other view,
/// the denominator runs over every other row (positive included). Throws for
/// B < 2. Grads: {z1, z2}.
LossResult unsup_rep_loss(const Matrix& z1, const Matrix& z2, double tau_u);

/// Part discrepancy: parts[i] is sample i's K x d part features in each view.
/// For every shared part k of sample i (needs >= 2 shared parts) the term is
///   -log exp(s_kk) / sum_{k' != k} exp(s_kk'),  s_kk' = <v_i^k, v'_i^k'>
/// on l2-normalized part features, k' over the shared set; the mean is taken
/// over all terms. With include_positive the denominator also has k' = k.
/// No terms -> 0 and zero grads. Grads: {one per parts1 entry..., one per parts2 entry...}.
LossResult pdr_loss(const std::vector<Matrix>& parts1, const std::vector<Matrix>& parts2,
                    const std::vector<std::vector<int>>& shared, bool include_positive = false);

/// Trainable state of the toy model.
struct ModelParams {
  Linear encoder;     // d -> d, applied to fixed cls and patch inputs
  Matrix prototypes;  // C x d, unit rows after each step
  Mlp adapter;        // K*d -> d
  Mlp projector;      // d -> d_proj
  Mlp part_projector; // empty unless the part branch has its own projector

  std::size_t dim() const noexcept { return encoder.w.rows(); }
  std::size_t num_classes() const noexcept { return prototypes.rows(); }
  std::size_t parts() const noexcept { return adapter.hidden.in_dim() / dim(); }
};

struct ModelShape {
  std::size_t dim = 16;
  std::size_t classes = 20;
  std::size_t parts = 4;
  std::size_t proj_dim = 16;
  std::size_t adapter_width = 0;    // 0 -> 2 * dim
  std::size_t projector_width = 0;  // 0 -> 2 * dim
  bool separate_part_projector = false;
};

/// Encoder starts at the identity (the backbone's features as given),
/// prototypes at random unit rows, MLPs at the usual uniform init.
ModelParams init_model(const ModelShape& shape, Rng& rng);
ModelParams zeros_like(const ModelParams& p);

/// Visits (name, tensor) pairs in a fixed order; empty tensors are skipped.
template <class P, class Fn>
void for_each_tensor(P& p, Fn&& fn) {
  auto lin = [&](auto& l, const std::string& n) {
    if (l.w.empty()) return;
    fn(n + ".w", l.w);
    fn(n + ".b", l.b);
  };
  auto mlp = [&](auto& m, const std::string& n) {
    lin(m.hidden, n + ".hidden");
    lin(m.out, n + ".out");
  };
  lin(p.encoder, "encoder");
  fn(std::string("prototypes"), p.prototypes);
  mlp(p.adapter, "adapter");
  mlp(p.projector, "projector");
  mlp(p.part_projector, "part_projector");
}

/// One view of a batch, as inputs to the encoder. Part inputs are
/// pre-aggregated: with part map M (patches x K) and patch inputs X,
///   part_inputs[i] = M^T X (K x d), part_mass[i](k) = sum_j M(j, k),
/// so the encoded part features are part_inputs A^T + part_mass b.
struct ViewBatch {
  Matrix cls;                      // B x d
  std::vector<Matrix> part_inputs; // B entries, K x d (may be empty without parts)
  std::vector<std::vector<double>> part_mass;
};

struct BatchViewPair {
  ViewBatch views[2];
  std::vector<int> labels;                  // B, -1 = unlabeled
  std::vector<std::vector<int>> shared;     // B, parts present in both views
};

/// Encoded features of one view.
Matrix encode_cls(const ModelParams& p, const Matrix& cls);
/// K x d encoded part features of one sample.
Matrix encode_parts(const ModelParams& p, const Matrix& part_inputs, std::span<const double> mass);
/// B x d part-enhanced features (adapter over the concatenated part features).
Matrix part_enhanced(const ModelParams& p, const ViewBatch& view);

/// Per-term values of one branch of the base objective.
struct BaseTerms {
  double sup_cls = 0.0;
  double unsup_cls = 0.0;
  double mean_entropy = 0.0;
  double sup_rep = 0.0;
  double unsup_rep = 0.0;
  double total = 0.0;  // lambda-weighted sum
};

struct ObjectiveResult {
  double total = 0.0;
  BaseTerms global;
  BaseTerms part;   // zero when the part branch is off or alpha = 0
  double pdr = 0.0;
  ModelParams grad;
};

/// Teacher targets of both views of one branch.
struct TeacherPair {
  Matrix view1, view2;
};
struct FrozenTeachers {
  TeacherPair global, part;
};

/// Teacher targets at the current parameters. Passing them back into
/// total_objective holds the teacher fixed, which is what the analytic
/// gradient assumes; finite-difference checks need this.
FrozenTeachers teacher_snapshot(const BatchViewPair& batch, const ModelParams& p, const LossConfig& cfg);

/// L = L_base(f_cls) + alpha * (L_base(h_part) + L_pdr), prototypes shared by
/// both branches. With alpha = 0 the part branch is not evaluated at all, so
/// the result is bitwise the baseline objective.
ObjectiveResult total_objective(const BatchViewPair& batch, const ModelParams& p, const LossConfig& cfg,
                                const FrozenTeachers* teachers = nullptr);

/// Baseline objective of one feature branch with gradients w.r.t. the two
/// feature views, the prototypes and the given projector.
struct BaseResult {
  BaseTerms terms;
  Matrix d_view1, d_view2, d_w;
  Mlp d_projector;
};
BaseResult base_objective(const Matrix& view1, const Matrix& view2, std::span<const int> labels,
                          const Matrix& w, const Mlp& projector, const LossConfig& cfg,
                          const TeacherPair* teachers = nullptr);

}  // namespace partdisc
