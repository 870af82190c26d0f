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

#include "partdisc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "partdisc/error.hpp"

namespace partdisc {
namespace {

struct Potentials {
  std::vector<double> u, v;
  std::vector<int> row_to_col;
};

// Shortest augmenting path Hungarian algorithm, O(n^3).
Potentials solve(const Matrix& a) {
  const std::size_t n = a.rows();
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based internals; index 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Potentials out;
  out.u.assign(u.begin() + 1, u.end());
  out.v.assign(v.begin() + 1, v.end());
  out.row_to_col.assign(n, -1);
  for (std::size_t j = 1; j <= n; ++j) out.row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  return out;
}

}  // namespace

double assignment_cost(const Matrix& cost, std::span<const int> perm) {
  double total = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) total += cost(i, static_cast<std::size_t>(perm[i]));
  return total;
}

std::vector<int> hungarian_match(const Matrix& cost) {
  if (cost.rows() != cost.cols()) {
    fail(ErrorKind::kInvalidArgument, "hungarian_match: cost matrix is " +
                                          std::to_string(cost.rows()) + "x" +
                                          std::to_string(cost.cols()) + ", not square");
  }
  double scale = 1.0;
  for (double c : cost.flat()) {
    if (!std::isfinite(c)) fail(ErrorKind::kInvalidArgument, "hungarian_match: non-finite cost");
    scale = std::max(scale, std::abs(c));
  }
  const std::size_t n = cost.rows();
  if (n == 0) return {};

  const Potentials pot = solve(cost);

  // Every optimal assignment is a perfect matching on the tight edges of the
  // optimal dual. Walk rows in order and give each the smallest tight column
  // that still admits a perfect matching for the remaining rows.
  const double tight_tol = 1e-9 * scale * static_cast<double>(n);
  std::vector<std::vector<int>> tight(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (std::abs(cost(i, j) - pot.u[i] - pot.v[j]) <= tight_tol) tight[i].push_back(static_cast<int>(j));

  std::vector<int> row_to_col = pot.row_to_col;
  std::vector<int> col_to_row(n);
  for (std::size_t i = 0; i < n; ++i) col_to_row[static_cast<std::size_t>(row_to_col[i])] = static_cast<int>(i);
  std::vector<char> locked(n, 0);

  // Augmenting path search: can `start` row be rematched to reach `target`
  // column, avoiding locked rows and the forbidden column?
  std::vector<char> seen_row(n);
  auto reroute = [&](int start, int target, int forbidden) -> bool {
    std::fill(seen_row.begin(), seen_row.end(), 0);
    std::vector<int> stack{start};
    std::vector<int> from(n, -1); // row -> previous row on the path
    seen_row[static_cast<std::size_t>(start)] = 1;
    while (!stack.empty()) {
      const int r = stack.back();
      stack.pop_back();
      for (int col : tight[static_cast<std::size_t>(r)]) {
        if (col == forbidden) continue;
        if (col == target) {
          // Apply: walk back from r; each row hands its old column to the
          // row that reached it.
          int cur_row = r;
          int cur_col = col;
          while (cur_row != -1) {
            const int prev_col = row_to_col[static_cast<std::size_t>(cur_row)];
            row_to_col[static_cast<std::size_t>(cur_row)] = cur_col;
            col_to_row[static_cast<std::size_t>(cur_col)] = cur_row;
            cur_col = prev_col;
            cur_row = from[static_cast<std::size_t>(cur_row)];
          }
          return true;
        }
        const int owner = col_to_row[static_cast<std::size_t>(col)];
        if (locked[static_cast<std::size_t>(owner)] || seen_row[static_cast<std::size_t>(owner)]) continue;
        seen_row[static_cast<std::size_t>(owner)] = 1;
        from[static_cast<std::size_t>(owner)] = r;
        stack.push_back(owner);
      }
    }
    return false;
  };

  for (std::size_t i = 0; i < n; ++i) {
    for (int j : tight[i]) {
      if (j == row_to_col[i]) break;
      const int owner = col_to_row[static_cast<std::size_t>(j)];
      if (locked[static_cast<std::size_t>(owner)]) continue;
      const int freed = row_to_col[i];
      locked[i] = 1;  // i is not allowed on the path
      if (reroute(owner, freed, j)) {
        row_to_col[i] = j;
        col_to_row[static_cast<std::size_t>(j)] = static_cast<int>(i);
        break;
      }
      locked[i] = 0;
    }
    locked[i] = 1;
  }
  return row_to_col;
}

AccReport clustering_acc(std::span<const int> preds, std::span<const int> labels,
                         std::span<const int> old_classes, int num_classes) {
  if (preds.size() != labels.size()) {
    fail(ErrorKind::kValidation, "clustering_acc: " + std::to_string(preds.size()) +
                                     " predictions vs " + std::to_string(labels.size()) +
                                     " labels");
  }
  int c = num_classes;
  for (int p : preds) {
    if (p < 0) fail(ErrorKind::kValidation, "clustering_acc: negative prediction");
    if (num_classes <= 0) c = std::max(c, p + 1);
  }
  for (int l : labels) {
    if (l < 0) fail(ErrorKind::kValidation, "clustering_acc: negative label");
    if (num_classes <= 0) c = std::max(c, l + 1);
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= c || labels[i] >= c) {
      fail(ErrorKind::kValidation, "clustering_acc: value outside [0, " + std::to_string(c) + ")");
    }
  }
  AccReport rep;
  rep.n_all = preds.size();
  if (c == 0) return rep;

  const auto cs = static_cast<std::size_t>(c);
  Matrix counts(cs, cs, 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i)
    counts(static_cast<std::size_t>(preds[i]), static_cast<std::size_t>(labels[i])) += 1.0;
  Matrix cost(cs, cs);
  for (std::size_t k = 0; k < counts.size(); ++k) cost.flat()[k] = -counts.flat()[k];
  rep.permutation = hungarian_match(cost);

  std::vector<char> is_old(cs, 0);
  for (int o : old_classes)
    if (o >= 0 && o < c) is_old[static_cast<std::size_t>(o)] = 1;
  std::size_t hit_all = 0, hit_old = 0, hit_new = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool hit = rep.permutation[static_cast<std::size_t>(preds[i])] == labels[i];
    hit_all += hit;
    if (is_old[static_cast<std::size_t>(labels[i])]) {
      ++rep.n_old;
      hit_old += hit;
    } else {
      ++rep.n_new;
      hit_new += hit;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  rep.all = rep.n_all ? static_cast<double>(hit_all) / static_cast<double>(rep.n_all) : nan;
  rep.old_acc = rep.n_old ? static_cast<double>(hit_old) / static_cast<double>(rep.n_old) : nan;
  rep.new_acc = rep.n_new ? static_cast<double>(hit_new) / static_cast<double>(rep.n_new) : nan;
  return rep;
}

}  // namespace partdisc
