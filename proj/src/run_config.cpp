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


#include "partdisc/run_config.hpp"

#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "partdisc/error.hpp"

namespace partdisc {
namespace {

// One place lists every (section, key, field); parse and dump both walk it.
template <class Cfg, class V>
void visit_fields(Cfg& c, V&& v) {
  v("data", "path", c.data_path);

  auto& s = c.synth;
  v("synth", "num_classes", s.num_classes);
  v("synth", "old_class_count", s.old_class_count);
  v("synth", "parts", s.parts);
  v("synth", "dim", s.dim);
  v("synth", "num_patches", s.num_patches);
  v("synth", "foreground_patches", s.foreground_patches);
  v("synth", "class_separation", s.class_separation);
  v("synth", "part_separation", s.part_separation);
  v("synth", "noise_sigma", s.noise_sigma);
  v("synth", "cls_offset", s.cls_offset);
  v("synth", "background_sigma", s.background_sigma);
  v("synth", "part_concentration", s.part_concentration);
  v("synth", "samples_per_class", s.samples_per_class);
  v("synth", "seed", s.seed);

  auto& t = c.train;
  v("train", "mode", t.mode);
  v("train", "epochs", t.epochs);
  v("train", "warmup_epochs", t.warmup_epochs);
  v("train", "batch_size", t.batch_size);
  v("train", "learning_rate", t.learning_rate);
  v("train", "momentum", t.momentum);
  v("train", "tau_t_start", t.tau_t_start);
  v("train", "tau_t_end", t.tau_t_end);
  v("train", "tau_t_epochs", t.tau_t_epochs);
  v("train", "gamma", t.gamma);
  v("train", "parts", t.parts);
  v("train", "k_min", t.k_min);
  v("train", "k_max", t.k_max);
  v("train", "gmm_normalize", t.gmm_normalize);
  v("train", "proj_dim", t.proj_dim);
  v("train", "adapter_width", t.adapter_width);
  v("train", "separate_part_projector", t.separate_part_projector);
  v("train", "seed", t.seed);
  v("train", "threads", t.threads);

  auto& l = t.loss;
  v("loss", "tau_s", l.tau_s);
  v("loss", "tau_u", l.tau_u);
  v("loss", "tau_c", l.tau_c);
  v("loss", "lambda", l.lambda);
  v("loss", "eps_me", l.eps_me);
  v("loss", "alpha", l.alpha);
  v("loss", "symmetric_unsup", l.symmetric_unsup);
  v("loss", "pdr_include_positive", l.pdr_include_positive);

  auto& g = t.gmm;
  v("gmm", "max_em_iters", g.max_em_iters);
  v("gmm", "em_tol", g.em_tol);
  v("gmm", "var_floor", g.var_floor);
  v("gmm", "collapse_weight", g.collapse_weight);
  v("gmm", "kmeans_iters", g.kmeans_iters);
  v("gmm", "kmeans_restarts", g.kmeans_restarts);

  v("augment", "sigma", t.augment.sigma);
  v("augment", "drop_prob", t.augment.drop_prob);
}

[[noreturn]] void bad(const std::string& origin, const std::string& what) {
  fail(ErrorKind::kValidation, origin + ": " + what);
}

template <class T>
void read_value(const toml::node& node, T& out, const std::string& origin, const std::string& key) {
  if constexpr (std::is_same_v<T, bool>) {
    auto b = node.value_exact<bool>();
    if (!b) bad(origin, key + " must be a boolean");
    out = *b;
  } else if constexpr (std::is_same_v<T, double>) {
    auto d = node.value<double>();  // accepts integers too
    if (!d) bad(origin, key + " must be a number");
    out = *d;
  } else if constexpr (std::is_same_v<T, std::string>) {
    auto s = node.value_exact<std::string>();
    if (!s) bad(origin, key + " must be a string");
    out = *s;
  } else if constexpr (std::is_same_v<T, TrainMode>) {
    auto s = node.value_exact<std::string>();
    if (!s) bad(origin, key + " must be a string");
    out = parse_train_mode(*s);
  } else {
    static_assert(std::is_integral_v<T>);
    auto i = node.value_exact<std::int64_t>();
    if (!i) bad(origin, key + " must be an integer");
    if (*i < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
        (*i > 0 && static_cast<std::uint64_t>(*i) > static_cast<std::uint64_t>(std::numeric_limits<T>::max())))
      bad(origin, key + " is out of range");
    out = static_cast<T>(*i);
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& toml_text, const std::string& origin) {
  toml::table root;
  try {
    root = toml::parse(toml_text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "TOML parse error: " << e.description() << " at line " << e.source().begin.line;
    bad(origin, msg.str());
  }

  RunConfig cfg;
  std::map<std::string, std::set<std::string>> known;
  visit_fields(cfg, [&](const char* section, const char* key, auto& field) {
    known[section].insert(key);
    const auto* node = root.at_path(std::string(section) + "." + key).node();
    if (node) read_value(*node, field, origin, std::string(section) + "." + key);
  });
  for (const auto& [section, node] : root) {
    const std::string name(section.str());
    auto it = known.find(name);
    if (it == known.end()) bad(origin, "unknown section [" + name + "]");
    const auto* tbl = node.as_table();
    if (!tbl) bad(origin, "[" + name + "] must be a table");
    for (const auto& [key, unused] : *tbl) {
      (void)unused;
      if (!it->second.count(std::string(key.str()))) bad(origin, "unknown key " + name + "." + std::string(key.str()));
    }
  }
  if (cfg.data_path.empty()) validate(cfg.synth);
  validate(cfg.train);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path.string());
}

std::string dump_run_config(const RunConfig& cfg) {
  std::map<std::string, toml::table> sections;
  std::vector<std::string> order;
  visit_fields(cfg, [&](const char* section, const char* key, const auto& field) {
    using T = std::decay_t<decltype(field)>;
    if (!sections.count(section)) order.push_back(section);
    auto& tbl = sections[section];
    if constexpr (std::is_same_v<T, TrainMode>) {
      tbl.insert(key, std::string(to_string(field)));
    } else if constexpr (std::is_same_v<T, bool> || std::is_same_v<T, double> || std::is_same_v<T, std::string>) {
      tbl.insert(key, field);
    } else {
      tbl.insert(key, static_cast<std::int64_t>(field));
    }
  });
  std::ostringstream out;
  for (const auto& name : order) {
    if (name == "data" && cfg.data_path.empty()) continue;
    out << "[" << name << "]\n" << sections[name] << "\n\n";
  }
  return out.str();
}

}  // namespace partdisc
