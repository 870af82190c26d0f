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


// partdisc: command-line front end to the library.
//
// Exit codes: 0 success, 1 usage error, 2 data or validation error,
// 3 numerical failure (divergence, failed gradient check).

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "partdisc/candidate_selection.hpp"
#include "partdisc/error.hpp"
#include "partdisc/evaluation.hpp"
#include "partdisc/feature_store.hpp"
#include "partdisc/gradcheck.hpp"
#include "partdisc/linalg.hpp"
#include "partdisc/log.hpp"
#include "partdisc/part_gmm.hpp"
#include "partdisc/run_config.hpp"
#include "partdisc/runtime.hpp"
#include "partdisc/toy_trainer.hpp"
#include "partdisc/transport.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace partdisc {
namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct Globals {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool quiet = false;
  bool verbose = false;
};

// --- text files -------------------------------------------------------------

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
std::optional<T> parse_number(const std::string& text) {
  const std::string t = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) return std::nullopt;
  return v;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p);
  if (!in) fail(ErrorKind::kIo, "cannot open " + p.string());
  return in;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + p.string());
  return out;
}

/// Headerless numeric CSV; every row must have the same width.
Matrix read_csv_matrix(const fs::path& p) {
  auto in = open_in(p);
  std::vector<double> flat;
  std::size_t cols = 0, rows = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (rows == 0) cols = cells.size();
    if (cells.size() != cols)
      fail(ErrorKind::kValidation, p.string() + ":" + std::to_string(lineno) + ": expected " +
                                       std::to_string(cols) + " columns, got " + std::to_string(cells.size()));
    for (const auto& c : cells) {
      const auto v = parse_number<double>(c);
      if (!v) fail(ErrorKind::kValidation, p.string() + ":" + std::to_string(lineno) + ": not a number: '" + c + "'");
      flat.push_back(*v);
    }
    ++rows;
  }
  if (rows == 0) fail(ErrorKind::kValidation, p.string() + ": empty matrix");
  Matrix m(rows, cols);
  std::copy(flat.begin(), flat.end(), m.flat().begin());
  return m;
}

void write_csv_matrix(const fs::path& p, const Matrix& m) {
  auto out = open_out(p);
  char buf[32];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
}

/// One integer column of a CSV. With a header row the column is picked by
/// name (`column`), else the last column; without one, the last column.
std::vector<int> read_int_column(const fs::path& p, const std::string& column) {
  auto in = open_in(p);
  std::vector<int> out;
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::size_t> col;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (!col) {
      col = cells.size() - 1;
      if (!parse_number<int>(cells.back())) {  // header
        for (std::size_t j = 0; j < cells.size(); ++j)
          if (trim(cells[j]) == column) col = j;
        continue;
      }
    }
    if (*col >= cells.size()) fail(ErrorKind::kValidation, p.string() + ":" + std::to_string(lineno) + ": missing column");
    const auto v = parse_number<int>(cells[*col]);
    if (!v) fail(ErrorKind::kValidation, p.string() + ":" + std::to_string(lineno) + ": not an integer: '" + cells[*col] + "'");
    out.push_back(*v);
  }
  return out;
}

/// Integers separated by whitespace and/or commas.
std::vector<int> read_int_list(const fs::path& p) {
  auto in = open_in(p);
  std::stringstream text;
  text << in.rdbuf();
  std::string s = text.str();
  std::replace(s.begin(), s.end(), ',', ' ');
  std::stringstream ss(s);
  std::vector<int> out;
  std::string tok;
  while (ss >> tok) {
    const auto v = parse_number<int>(tok);
    if (!v) fail(ErrorKind::kValidation, p.string() + ": not an integer: '" + tok + "'");
    out.push_back(*v);
  }
  return out;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string acc_csv(const AccReport& r) {
  return "n_all,n_old,n_new,all,old,new\n" + std::to_string(r.n_all) + "," + std::to_string(r.n_old) + "," +
         std::to_string(r.n_new) + "," + fmt(r.all) + "," + fmt(r.old_acc) + "," + fmt(r.new_acc) + "\n";
}

std::vector<int> true_labels(const FeatureDataset& ds) {
  std::vector<int> t;
  for (const auto& s : ds.samples) t.push_back(s.label.value_or(-1));
  return t;
}

bool fully_labeled(const FeatureDataset& ds) {
  for (const auto& s : ds.samples)
    if (!s.label) return false;
  return true;
}

// --- candidates.json -----------------------------------------------------------

json candidates_json(const CandidateSet& cands, const FeatureDataset& ds) {
  json classes = json::object();
  for (std::size_t c = 0; c < cands.members.size(); ++c) {
    json ids = json::array();
    for (std::size_t i : cands.members[c]) ids.push_back(ds.samples[i].id);
    classes[std::to_string(c)] = std::move(ids);
  }
  json j{{"ns", cands.ns}, {"classes", std::move(classes)}};
  if (fully_labeled(ds)) {
    const auto pur = candidate_purity(cands, true_labels(ds), ds.meta);
    json per = json::object();
    for (std::size_t c = 0; c < pur.per_class.size(); ++c)
      per[std::to_string(c)] = std::isnan(pur.per_class[c]) ? json(nullptr) : json(pur.per_class[c]);
    j["purity"] = {{"per_class", std::move(per)}, {"mean_new", pur.mean_new}};
  }
  return j;
}

CandidateSet read_candidates(const fs::path& p, const FeatureDataset& ds) {
  json j;
  try {
    auto in = open_in(p);
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kValidation, p.string() + ": " + e.what());
  }
  std::map<std::uint64_t, std::size_t> pos;
  for (std::size_t i = 0; i < ds.size(); ++i) pos[ds.samples[i].id] = i;
  CandidateSet cands;
  cands.members.resize(static_cast<std::size_t>(ds.meta.num_classes));
  try {
    cands.ns = j.at("ns").get<int>();
    for (const auto& [key, ids] : j.at("classes").items()) {
      const auto c = parse_number<int>(key);
      if (!c || *c < 0 || *c >= ds.meta.num_classes) fail(ErrorKind::kValidation, p.string() + ": bad class id '" + key + "'");
      for (const auto& id : ids) {
        auto it = pos.find(id.get<std::uint64_t>());
        if (it == pos.end())
          fail(ErrorKind::kValidation, p.string() + ": sample id " + id.dump() + " is not in the feature file");
        cands.members[static_cast<std::size_t>(*c)].push_back(it->second);
      }
      std::sort(cands.members[static_cast<std::size_t>(*c)].begin(), cands.members[static_cast<std::size_t>(*c)].end());
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kValidation, p.string() + ": " + e.what());
  }
  return cands;
}

// --- metrics.csv ---------------------------------------------------------------

void metrics_header(std::ostream& out) {
  out << "epoch,lr,alpha,tau_t,loss";
  for (const char* b : {"global", "part"})
    for (const char* t : {"sup_cls", "unsup_cls", "mean_entropy", "sup_rep", "unsup_rep", "total"})
      out << ',' << b << '_' << t;
  out << ",pdr,acc_all,acc_old,acc_new,purity,purity_raw\n";
}

void metrics_row(std::ostream& out, const EpochMetrics& m) {
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.9g", v);
    out << buf;
  };
  out << m.epoch;
  for (double v : {m.lr, m.alpha, m.tau_t, m.loss}) put(v);
  for (const BaseTerms* b : {&m.global, &m.part})
    for (double v : {b->sup_cls, b->unsup_cls, b->mean_entropy, b->sup_rep, b->unsup_rep, b->total}) put(v);
  for (double v : {m.pdr, m.acc_all, m.acc_old, m.acc_new, m.purity, m.purity_raw}) put(v);
  out << '\n';
  out.flush();
}

void write_predictions(const fs::path& p, const FeatureDataset& ds, const std::vector<int>& preds, bool all) {
  auto out = open_out(p);
  out << "id,pred\n";
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (all || !ds.meta.is_labeled(ds.samples[i].id)) out << ds.samples[i].id << ',' << preds[i] << '\n';
}

void write_labels(const fs::path& p, const FeatureDataset& ds, bool all) {
  auto out = open_out(p);
  out << "id,label\n";
  for (const auto& s : ds.samples) {
    if (!all && ds.meta.is_labeled(s.id)) continue;
    if (!s.label) fail(ErrorKind::kValidation, "sample " + std::to_string(s.id) + " has no ground-truth label");
    out << s.id << ',' << *s.label << '\n';
  }
}

void write_old_classes(const fs::path& p, const FeatureDataset& ds) {
  auto out = open_out(p);
  for (int c : ds.meta.old_classes) out << c << '\n';
}

// --- subcommands -----------------------------------------------------------------

struct GenSynthArgs {
  fs::path out, config;
  std::optional<int> classes, old, per_class, parts;
  std::optional<std::size_t> dim, patches;
};

int cmd_gen_synth(const GenSynthArgs& a, const Globals& g) {
  SynthConfig sc = a.config.empty() ? SynthConfig{} : load_run_config(a.config).synth;
  if (a.classes) sc.num_classes = *a.classes;
  if (a.old) sc.old_class_count = *a.old;
  if (a.per_class) sc.samples_per_class = *a.per_class;
  if (a.parts) sc.parts = *a.parts;
  if (a.dim) sc.dim = *a.dim;
  if (a.patches) sc.num_patches = *a.patches;
  sc.seed = g.seed;
  const auto ds = generate_synthetic(sc);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  save_dataset(ds, a.out);
  log::info("wrote " + std::to_string(ds.size()) + " samples to " + a.out.string());
  return 0;
}

struct SinkhornArgs {
  fs::path in, out;
  int iters = 100;
  double tol = 1e-6;
};

int cmd_sinkhorn(const SinkhornArgs& a) {
  SinkhornOptions opts;
  opts.max_iters = a.iters;
  opts.tol = a.tol;
  const auto r = sinkhorn_adjust(read_csv_matrix(a.in), opts);
  write_csv_matrix(a.out, r.q);
  log::info("sinkhorn: " + std::to_string(r.iterations) + " iterations, violation " + fmt(r.violation) +
            (r.converged ? "" : " (not converged)") + (r.log_domain ? ", log domain" : ""));
  return 0;
}

struct SelectArgs {
  fs::path features, proto, state, out;
  double gamma = 1.0;
};

int cmd_select(const SelectArgs& a) {
  const auto ds = load_dataset(a.features);
  const auto proto = load_prototypes(a.proto);
  Matrix cls;
  if (a.state.empty()) {
    cls = normalized_rows(cls_matrix(ds));
  } else {
    cls = encoded_cls(load_state(a.state), ds);
  }
  if (proto.num_classes() != static_cast<std::size_t>(ds.meta.num_classes) || proto.dim() != cls.cols())
    fail(ErrorKind::kValidation, "prototypes are " + std::to_string(proto.num_classes()) + " x " +
                                     std::to_string(proto.dim()) + " but the data has " +
                                     std::to_string(ds.meta.num_classes) + " classes of dimension " +
                                     std::to_string(cls.cols()));
  std::size_t labeled = 0;
  for (const auto& s : ds.samples) labeled += ds.meta.is_labeled(s.id);
  const int ns = compute_ns(a.gamma, labeled, std::max<std::size_t>(1, ds.meta.old_classes.size()));
  const auto cands = select_candidates(proto, cls, ds, ns);
  const json j = candidates_json(cands, ds);
  open_out(a.out) << j.dump(2) << '\n';
  if (j.contains("purity")) log::info("mean new-class purity " + fmt(j["purity"]["mean_new"].get<double>()));
  return 0;
}

struct FitGmmArgs {
  fs::path features, candidates, out;
  std::string k = "auto";
  int k_min = 2, k_max = 8;
  bool normalize = false;
};

int cmd_fit_gmm(const FitGmmArgs& a, const Globals& g) {
  const auto ds = load_dataset(a.features);
  const auto cands = read_candidates(a.candidates, ds);
  int k = 0;
  if (a.k == "auto") {
    std::vector<Matrix> sets;
    for (const auto& members : cands.members) {
      std::vector<double> flat;
      std::size_t rows = 0;
      for (std::size_t i : members) {
        const Matrix pts = gmm_points(ds.samples[i], ds.meta.dim, a.normalize);
        flat.insert(flat.end(), pts.flat().begin(), pts.flat().end());
        rows += pts.rows();
      }
      if (rows == 0) continue;
      Matrix m(rows, ds.meta.dim);
      std::copy(flat.begin(), flat.end(), m.flat().begin());
      sets.push_back(std::move(m));
    }
    if (sets.empty()) fail(ErrorKind::kValidation, "fit-gmm: no class has candidate patches");
    const auto sel = select_k(sets, a.k_min, a.k_max, make_rng(g.seed, 1)(), g.threads);
    k = sel.k;
    log::info("selected K = " + std::to_string(k) + " by silhouette");
  } else {
    const auto v = parse_number<int>(a.k);
    if (!v || *v < 1) throw CLI::ValidationError("--k", "expected 'auto' or a positive integer, got '" + a.k + "'");
    k = *v;
  }
  const auto model = fit_class_gmms(ds, cands, static_cast<std::size_t>(k), GmmConfig{}, a.normalize,
                                    make_rng(g.seed, 2)(), g.threads);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  save_part_model(model, a.out);
  return 0;
}

struct TrainArgs {
  fs::path config, out, data;
  std::string mode;
  std::optional<int> epochs;
};

int cmd_train_toy(const TrainArgs& a, const Globals& g) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (!a.data.empty()) rc.data_path = a.data.string();
  if (!a.mode.empty()) rc.train.mode = parse_train_mode(a.mode);
  if (a.epochs) {
    rc.train.epochs = *a.epochs;
    rc.train.warmup_epochs = std::min(rc.train.warmup_epochs, *a.epochs);
  }
  rc.train.seed = g.seed;
  rc.synth.seed = g.seed;
  rc.train.threads = g.threads;
  validate(rc.train);

  const FeatureDataset ds = rc.data_path.empty() ? generate_synthetic(rc.synth) : load_dataset(rc.data_path);
  fs::create_directories(a.out);
  open_out(a.out / "config.toml") << "# partdisc " << PARTDISC_VERSION << "\n\n" << dump_run_config(rc);
  open_out(a.out / "version.txt") << PARTDISC_VERSION << '\n';

  auto metrics = open_out(a.out / "metrics.csv");
  metrics_header(metrics);
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = train(ds, rc.train, [&](const EpochMetrics& m) {
    metrics_row(metrics, m);
    log::info("epoch " + std::to_string(m.epoch) + " loss " + fmt(m.loss) + " all " + fmt(m.acc_all) + " old " +
              fmt(m.acc_old) + " new " + fmt(m.acc_new) + " purity " + fmt(m.purity));
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  TrainState st = res.state;
  save_state(st, a.out / "state.bin");
  save_prototypes(calibrated_prototypes(st, ds, rc.train.loss.tau_s), a.out / "prototypes.bin");
  const bool use_parts = rc.train.mode == TrainMode::kFull && rc.train.loss.alpha > 0.0;
  if (!st.part_model.classes.empty()) {
    save_part_model(st.part_model, a.out / "gmms.bin");
    // Predict from the stored model so `partdisc predict` reproduces preds.csv.
    st.part_model = load_part_model(a.out / "gmms.bin");
  }
  const auto preds = predict(st, ds, use_parts, g.threads);
  write_predictions(a.out / "preds.csv", ds, preds, false);
  write_old_classes(a.out / "old_classes.txt", ds);
  if (fully_labeled(ds)) {
    write_labels(a.out / "labels.csv", ds, false);
    std::vector<int> up, ut;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.meta.is_labeled(ds.samples[i].id)) continue;
      up.push_back(preds[i]);
      ut.push_back(*ds.samples[i].label);
    }
    const auto acc = clustering_acc(up, ut, ds.meta.old_classes, ds.meta.num_classes);
    open_out(a.out / "acc.csv") << acc_csv(acc);
    std::cout << acc_csv(acc);
  }
  log::info("trained " + std::to_string(rc.train.epochs) + " epochs in " + fmt(secs) + " s; outputs in " +
            a.out.string());
  return 0;
}

struct PredictArgs {
  fs::path features, state, gmms, out, labels_out, old_out;
  bool all = false;
};

int cmd_predict(const PredictArgs& a, const Globals& g) {
  const auto ds = load_dataset(a.features);
  TrainState st = load_state(a.state);
  if (st.params.num_classes() != static_cast<std::size_t>(ds.meta.num_classes) || st.params.dim() != ds.meta.dim)
    fail(ErrorKind::kValidation, "state is for " + std::to_string(st.params.num_classes()) + " classes of dimension " +
                                     std::to_string(st.params.dim()) + ", data has " +
                                     std::to_string(ds.meta.num_classes) + " of dimension " +
                                     std::to_string(ds.meta.dim));
  if (!a.gmms.empty()) st.part_model = load_part_model(a.gmms);
  const auto preds = predict(st, ds, !a.gmms.empty(), g.threads);
  write_predictions(a.out, ds, preds, a.all);
  if (!a.labels_out.empty()) write_labels(a.labels_out, ds, a.all);
  if (!a.old_out.empty()) write_old_classes(a.old_out, ds);
  return 0;
}

struct EvalArgs {
  fs::path pred, labels, old_classes, out;
  int num_classes = 0;
};

int cmd_eval(const EvalArgs& a) {
  const auto preds = read_int_column(a.pred, "pred");
  const auto labels = read_int_column(a.labels, "label");
  if (preds.size() != labels.size())
    fail(ErrorKind::kValidation, "eval: " + a.pred.string() + " has " + std::to_string(preds.size()) +
                                     " predictions but " + a.labels.string() + " has " +
                                     std::to_string(labels.size()) + " labels");
  if (preds.empty()) fail(ErrorKind::kValidation, "eval: no predictions");
  const auto old = a.old_classes.empty() ? std::vector<int>{} : read_int_list(a.old_classes);
  const auto acc = clustering_acc(preds, labels, old, a.num_classes);
  const std::string csv = acc_csv(acc);
  std::cout << csv;
  if (!a.out.empty()) open_out(a.out) << csv;
  return 0;
}

struct GradcheckArgs {
  int instances = 20;
  fs::path out;
};

int cmd_gradcheck(const GradcheckArgs& a, const Globals& g) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_gradcheck_suite(g.seed, a.instances);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream csv;
  csv << "check,instance,value,rel_error,pass\n";
  std::size_t failed = 0;
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.3e,%s", r.instance, r.value, r.rel_error, r.pass ? "PASS" : "FAIL");
    csv << r.check << ',' << buf << '\n';
    failed += !r.pass;
  }
  std::cout << csv.str();
  if (!a.out.empty()) open_out(a.out) << csv.str();
  std::cerr << "gradcheck: " << rows.size() - failed << "/" << rows.size() << " passed in " << fmt(secs) << " s\n";
  return failed ? kExitNumerical : 0;
}

int exit_code(const Error& e) { return e.kind() == ErrorKind::kNumerical ? kExitNumerical : kExitData; }

}  // namespace
}  // namespace partdisc

int main(int argc, char** argv) {
  using namespace partdisc;
  CLI::App app{"partdisc: part-aware category discovery pipeline on feature tensors"};
  app.set_version_flag("--version", std::string(PARTDISC_VERSION));
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  g.threads = default_threads();
  app.add_option("--seed", g.seed, "Seed for every random stream")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (default: PARTDISC_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", g.quiet, "Suppress warnings and progress");
  app.add_flag("-v,--verbose", g.verbose, "Progress messages");

  GenSynthArgs gs;
  auto* c_gen = app.add_subcommand("gen-synth", "Write a synthetic feature container");
  c_gen->add_option("--out", gs.out, "Output .pgcd path")->required();
  c_gen->add_option("--config", gs.config, "TOML file; its [synth] section is used")->check(CLI::ExistingFile);
  c_gen->add_option("--classes", gs.classes, "Number of classes");
  c_gen->add_option("--old", gs.old, "Number of old (partly labeled) classes");
  c_gen->add_option("--per-class", gs.per_class, "Samples per class");
  c_gen->add_option("--parts", gs.parts, "True number of parts");
  c_gen->add_option("--dim", gs.dim, "Feature dimension");
  c_gen->add_option("--patches", gs.patches, "Patches per sample");

  SinkhornArgs sk;
  auto* c_sk = app.add_subcommand("sinkhorn", "Balance a prediction matrix (CSV) with Sinkhorn-Knopp");
  c_sk->add_option("--in", sk.in, "Input n x C CSV, no header")->required()->check(CLI::ExistingFile);
  c_sk->add_option("--out", sk.out, "Output CSV")->required();
  c_sk->add_option("--iters", sk.iters, "Maximum iterations")->capture_default_str()->check(CLI::PositiveNumber);
  c_sk->add_option("--tol", sk.tol, "Convergence tolerance")->capture_default_str();

  SelectArgs sel;
  auto* c_sel = app.add_subcommand("select", "Select candidate samples per class");
  c_sel->add_option("--features", sel.features, "Feature container")->required()->check(CLI::ExistingFile);
  c_sel->add_option("--proto", sel.proto, "Calibrated prototypes (PPRO)")->required()->check(CLI::ExistingFile);
  c_sel->add_option("--state", sel.state, "Trained state; encodes CLS features first")->check(CLI::ExistingFile);
  c_sel->add_option("--gamma", sel.gamma, "Candidate count scale")->capture_default_str();
  c_sel->add_option("--out", sel.out, "candidates.json")->required();

  FitGmmArgs fg;
  auto* c_fg = app.add_subcommand("fit-gmm", "Fit per-class part GMMs on candidates' patches");
  c_fg->add_option("--features", fg.features, "Feature container")->required()->check(CLI::ExistingFile);
  c_fg->add_option("--candidates", fg.candidates, "candidates.json")->required()->check(CLI::ExistingFile);
  c_fg->add_option("--k", fg.k, "Components: 'auto' or an integer")->capture_default_str();
  c_fg->add_option("--k-min", fg.k_min, "Smallest K for auto")->capture_default_str();
  c_fg->add_option("--k-max", fg.k_max, "Largest K for auto")->capture_default_str();
  c_fg->add_flag("--normalize", fg.normalize, "l2-normalize patches before fitting");
  c_fg->add_option("--out", fg.out, "gmms.bin")->required();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train-toy", "Train the toy model; writes a run directory");
  c_tr->add_option("--config", tr.config, "TOML run config")->check(CLI::ExistingFile);
  c_tr->add_option("--out", tr.out, "Run directory")->required();
  c_tr->add_option("--data", tr.data, "Feature container (overrides [data].path)")->check(CLI::ExistingFile);
  c_tr->add_option("--mode", tr.mode, "Overrides [train].mode")
      ->check(CLI::IsMember({"baseline", "pdr_only", "full"}));
  c_tr->add_option("--epochs", tr.epochs, "Overrides [train].epochs")->check(CLI::PositiveNumber);

  PredictArgs pr;
  auto* c_pr = app.add_subcommand("predict", "Predict classes with a trained state");
  c_pr->add_option("--features", pr.features, "Feature container")->required()->check(CLI::ExistingFile);
  c_pr->add_option("--state", pr.state, "state.bin")->required()->check(CLI::ExistingFile);
  c_pr->add_option("--gmms", pr.gmms, "gmms.bin; enables the part branch")->check(CLI::ExistingFile);
  c_pr->add_option("--out", pr.out, "preds.csv (id,pred)")->required();
  c_pr->add_flag("--all", pr.all, "Include labeled samples");
  c_pr->add_option("--labels-out", pr.labels_out, "Also write ground truth (id,label) for the same rows");
  c_pr->add_option("--old-out", pr.old_out, "Also write the old class list");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Clustering accuracy of predictions");
  c_ev->add_option("--pred", ev.pred, "Predictions CSV")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--labels", ev.labels, "Labels CSV")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--old-classes", ev.old_classes, "Old class ids")->check(CLI::ExistingFile);
  c_ev->add_option("--num-classes", ev.num_classes, "Class count (default: inferred)");
  c_ev->add_option("--out", ev.out, "Also write the report here");

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss gradient");
  c_gc->add_option("--instances", gc.instances, "Random instances per check")->capture_default_str()->check(
      CLI::PositiveNumber);
  c_gc->add_option("--out", gc.out, "Also write the table here");

  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.empty() || arg[0] == '-') {
      if (arg == "--seed" || arg == "--threads") ++i;  // skip the value
      continue;
    }
    if (!app.get_subcommand_no_throw(arg)) {
      std::cerr << "error: unknown subcommand '" << arg << "'\n\n" << app.help();
      return kExitUsage;
    }
    break;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }
  log::set_level(g.quiet ? log::Level::kQuiet : g.verbose ? log::Level::kInfo : log::Level::kWarn);
  if (g.threads == 0) g.threads = 1;

  try {
    if (*c_gen) return cmd_gen_synth(gs, g);
    if (*c_sk) return cmd_sinkhorn(sk);
    if (*c_sel) return cmd_select(sel);
    if (*c_fg) return cmd_fit_gmm(fg, g);
    if (*c_tr) return cmd_train_toy(tr, g);
    if (*c_pr) return cmd_predict(pr, g);
    if (*c_ev) return cmd_eval(ev);
    if (*c_gc) return cmd_gradcheck(gc, g);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
