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


#include "partdisc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "partdisc/linalg.hpp"
#include "partdisc/nn.hpp"
#include "partdisc/objectives.hpp"
#include "partdisc/runtime.hpp"

namespace partdisc {
namespace {

Matrix randn(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.flat()) v = n(rng);
  return m;
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Labels with repeats and some unlabeled rows.
std::vector<int> random_labels(std::size_t n, int classes, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = uniform_int(rng, -1, classes - 1);
  y[0] = 0;
  if (n > 1) y[1] = 0;
  return y;
}

std::vector<std::vector<int>> random_shared(std::size_t b, int k, Rng& rng) {
  std::vector<std::vector<int>> s(b);
  for (auto& v : s) {
    for (int p = 0; p < k; ++p)
      if (uniform_int(rng, 0, 3) > 0) v.push_back(p);
  }
  s[0].clear();
  for (int p = 0; p < k; ++p) s[0].push_back(p);
  return s;
}

BatchViewPair random_batch(std::size_t b, std::size_t d, std::size_t k, int classes, Rng& rng) {
  BatchViewPair batch;
  std::uniform_real_distribution<double> mass(0.2, 3.0);
  for (auto& v : batch.views) {
    v.cls = randn(b, d, rng);
    for (std::size_t i = 0; i < b; ++i) {
      v.part_inputs.push_back(randn(k, d, rng));
      std::vector<double> m(k);
      for (double& x : m) x = mass(rng);
      v.part_mass.push_back(m);
    }
  }
  batch.labels = random_labels(b, classes, rng);
  batch.shared = random_shared(b, static_cast<int>(k), rng);
  return batch;
}

struct Problem {
  std::function<double()> f;
  std::vector<Matrix*> inputs;
  std::vector<Matrix> analytic;
  double value = 0.0;
};

}  // namespace

double relative_error(const std::vector<Matrix>& analytic, const std::vector<Matrix>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t t = 0; t < analytic.size(); ++t) {
    for (std::size_t k = 0; k < analytic[t].size(); ++k) {
      const double a = analytic[t].flat()[k], n = numeric[t].flat()[k];
      diff += (a - n) * (a - n);
      na += a * a;
      nn += n * n;
    }
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

std::vector<Matrix> numeric_gradient(const std::function<double()>& f, const std::vector<Matrix*>& inputs,
                                     double h) {
  std::vector<Matrix> out;
  for (Matrix* m : inputs) {
    Matrix g(m->rows(), m->cols());
    for (std::size_t k = 0; k < m->size(); ++k) {
      double& x = m->flat()[k];
      const double orig = x;
      x = orig + h;
      const double up = f();
      x = orig - h;
      const double down = f();
      x = orig;
      g.flat()[k] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<GradcheckRow> run_gradcheck_suite(std::uint64_t seed, int instances, double h, double tol) {
  std::vector<GradcheckRow> rows;
  auto record = [&](const std::string& name, int inst, double value, double err) {
    rows.push_back({name, inst, value, err, std::isfinite(err) && err < tol});
  };
  auto check = [&](const std::string& name, int inst, Problem& p) {
    const auto num = numeric_gradient(p.f, p.inputs, h);
    record(name, inst, p.value, relative_error(p.analytic, num));
  };

  for (int inst = 0; inst < instances; ++inst) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(inst));
    const std::size_t b = static_cast<std::size_t>(uniform_int(rng, 3, 7));
    const std::size_t d = static_cast<std::size_t>(uniform_int(rng, 3, 6));
    const int c = uniform_int(rng, 3, 5);
    const std::size_t k = static_cast<std::size_t>(uniform_int(rng, 2, 4));
    const LossConfig lc;

    {  // supervised classification
      Matrix x = randn(b, d, rng), w = randn(static_cast<std::size_t>(c), d, rng);
      const auto y = random_labels(b, c, rng);
      const auto r = sup_cls_loss(x, y, w, lc.tau_s);
      Problem p{[&] { return sup_cls_loss(x, y, w, lc.tau_s).value; }, {&x, &w}, r.grads, r.value};
      check("sup_cls", inst, p);
    }
    for (bool sym : {true, false}) {  // self-distillation, teacher held fixed
      Matrix x1 = randn(b, d, rng), x2 = randn(b, d, rng), w = randn(static_cast<std::size_t>(c), d, rng);
      const Matrix t1 = teacher_targets(x1, w, lc.tau_t), t2 = teacher_targets(x2, w, lc.tau_t);
      const auto r = unsup_cls_loss(x1, x2, w, lc.tau_s, lc.tau_t, sym);
      Problem p{[&] {
                  if (!sym) return distill_loss(x1, t2, w, lc.tau_s).value;
                  return 0.5 * distill_loss(x1, t2, w, lc.tau_s).value +
                         0.5 * distill_loss(x2, t1, w, lc.tau_s).value;
                },
                {&x1, &x2, &w}, r.grads, r.value};
      check(sym ? "unsup_cls" : "unsup_cls_one_way", inst, p);
    }
    {  // mean entropy on simplex rows
      std::vector<Matrix> ps{softmax_rows(randn(b, static_cast<std::size_t>(c), rng)),
                             softmax_rows(randn(b, static_cast<std::size_t>(c), rng))};
      const auto r = mean_entropy_reg(ps, lc.eps_me);
      Problem p{[&] { return mean_entropy_reg(ps, lc.eps_me).value; }, {&ps[0], &ps[1]}, r.grads, r.value};
      check("mean_entropy", inst, p);
    }
    {
      Matrix z1 = randn(b, d, rng), z2 = randn(b, d, rng);
      const auto y = random_labels(b, c, rng);
      const auto r = sup_rep_loss(z1, z2, y, lc.tau_c);
      Problem p{[&] { return sup_rep_loss(z1, z2, y, lc.tau_c).value; }, {&z1, &z2}, r.grads, r.value};
      check("sup_rep", inst, p);
    }
    {
      Matrix z1 = randn(b, d, rng), z2 = randn(b, d, rng);
      const auto r = unsup_rep_loss(z1, z2, lc.tau_u);
      Problem p{[&] { return unsup_rep_loss(z1, z2, lc.tau_u).value; }, {&z1, &z2}, r.grads, r.value};
      check("unsup_rep", inst, p);
    }
    for (bool std_den : {false, true}) {
      std::vector<Matrix> v1, v2;
      for (std::size_t i = 0; i < b; ++i) {
        v1.push_back(randn(k, d, rng));
        v2.push_back(randn(k, d, rng));
      }
      const auto shared = random_shared(b, static_cast<int>(k), rng);
      const auto r = pdr_loss(v1, v2, shared, std_den);
      std::vector<Matrix*> in;
      for (auto& m : v1) in.push_back(&m);
      for (auto& m : v2) in.push_back(&m);
      Problem p{[&] { return pdr_loss(v1, v2, shared, std_den).value; }, in, r.grads, r.value};
      check(std_den ? "pdr_with_positive" : "pdr", inst, p);
    }
    {  // adapter-style MLP
      Mlp m = make_mlp(d, 2 * d, d, rng);
      const Matrix x0 = randn(b, d, rng), r0 = randn(b, d, rng);
      Matrix x = x0;
      auto value = [&] {
        const Matrix y = mlp_forward(m, x);
        double s = 0.0;
        for (std::size_t t = 0; t < y.size(); ++t) s += r0.flat()[t] * y.flat()[t];
        return s;
      };
      MlpCache cache;
      mlp_forward(m, x, &cache);
      Mlp g = zeros_like(m);
      const Matrix dx = mlp_backward(m, cache, r0, g);
      Problem p{value, {&x, &m.hidden.w, &m.hidden.b, &m.out.w, &m.out.b},
                {dx, g.hidden.w, g.hidden.b, g.out.w, g.out.b}, value()};
      check("mlp", inst, p);
    }
    for (bool separate : {false, true}) {  // whole objective, worst parameter group
      ModelShape shape{d, static_cast<std::size_t>(c), k, d, 0, 0, separate};
      ModelParams params = init_model(shape, rng);
      // Move away from the identity / zero-bias start so every path is exercised.
      for_each_tensor(params, [&](const std::string&, Matrix& m) {
        for (double& v : m.flat()) v += 0.3 * std::normal_distribution<double>(0.0, 1.0)(rng);
      });
      const auto batch = random_batch(b, d, k, c, rng);
      LossConfig cfg;
      cfg.alpha = 0.7;
      const auto frozen = teacher_snapshot(batch, params, cfg);
      const auto res = total_objective(batch, params, cfg, &frozen);
      std::vector<Matrix*> in;
      std::vector<Matrix> an;
      for_each_tensor(params, [&](const std::string&, Matrix& m) { in.push_back(&m); });
      ModelParams grad = res.grad;
      for_each_tensor(grad, [&](const std::string&, Matrix& m) { an.push_back(m); });
      auto f = [&] { return total_objective(batch, params, cfg, &frozen).total; };
      const auto num = numeric_gradient(f, in, h);
      double worst = 0.0;
      for (std::size_t t = 0; t < in.size(); ++t) worst = std::max(worst, relative_error({an[t]}, {num[t]}));
      record(separate ? "total_objective_separate_projector" : "total_objective", inst, res.total, worst);
    }
  }
  return rows;
}

}  // namespace partdisc
