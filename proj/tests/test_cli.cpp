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


// Drives the partdisc binary as a subprocess.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include "partdisc/feature_store.hpp"
#include "partdisc/part_gmm.hpp"
#include "test_util.hpp"

namespace partdisc {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  Outcome run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " '" + std::string(PARTDISC_BIN) + "' " + args + " > '" + (dir_ / "stdout").string() +
                            "' 2> '" + (dir_ / "stderr").string() + "'";
    const int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(dir_ / "stdout");
    r.err = slurp(dir_ / "stderr");
    return r;
  }
  std::string p(const std::string& name) const { return "'" + (dir_ / name).string() + "'"; }
  fs::path path(const std::string& name) const { return dir_ / name; }

  testing::TempDir dir_;
};

TEST_F(Cli, GenSynthIsDeterministic) {
  ASSERT_EQ(run("gen-synth --seed 7 --classes 6 --old 3 --per-class 10 --out " + p("a.pgcd")).code, 0);
  ASSERT_EQ(run("--seed 7 gen-synth --classes 6 --old 3 --per-class 10 --out " + p("b.pgcd")).code, 0);
  EXPECT_EQ(slurp(path("a.pgcd")), slurp(path("b.pgcd")));
  EXPECT_EQ(slurp(path("a.pgcd.manifest.csv")), slurp(path("b.pgcd.manifest.csv")));
  ASSERT_EQ(run("gen-synth --seed 8 --classes 6 --old 3 --per-class 10 --out " + p("c.pgcd")).code, 0);
  EXPECT_NE(slurp(path("a.pgcd")), slurp(path("c.pgcd")));
  const auto ds = load_dataset(path("a.pgcd"));
  EXPECT_EQ(ds.meta.num_classes, 6);
  EXPECT_EQ(ds.size(), 60u);
}

TEST_F(Cli, UsageErrorsExitOne) {
  auto r = run("frobnicate");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("frobnicate"), std::string::npos);
  EXPECT_NE(r.err.find("gen-synth"), std::string::npos);  // usage text
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("gen-synth").code, 1);  // missing --out
  EXPECT_EQ(run("train-toy --out x --mode fancy").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, EvalLengthMismatchExitsTwoNamingBothLengths) {
  std::ofstream(path("pred.csv")) << "id,pred\n0,1\n1,0\n2,2\n";
  std::ofstream(path("lab.csv")) << "id,label\n0,1\n1,0\n";
  const auto r = run("eval --pred " + p("pred.csv") + " --labels " + p("lab.csv"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("3 predictions"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("2 labels"), std::string::npos) << r.err;
}

TEST_F(Cli, EvalReportsPermutationInvariantAccuracy) {
  std::ofstream(path("pred.csv")) << "2\n2\n0\n0\n1\n1\n";
  std::ofstream(path("lab.csv")) << "0\n0\n1\n1\n2\n2\n";
  std::ofstream(path("old.txt")) << "0, 1\n";
  const auto r = run("eval --pred " + p("pred.csv") + " --labels " + p("lab.csv") + " --old-classes " + p("old.txt") +
                     " --out " + p("acc.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "n_all,n_old,n_new,all,old,new\n6,4,2,1.000000,1.000000,1.000000\n");
  EXPECT_EQ(slurp(path("acc.csv")), r.out);
}

TEST_F(Cli, SinkhornBalancesACsvMatrix) {
  std::ofstream(path("p.csv")) << "0.9,0.1\n0.8,0.2\n0.7,0.3\n0.6,0.4\n";
  ASSERT_EQ(run("sinkhorn --in " + p("p.csv") + " --out " + p("q.csv")).code, 0);
  std::ifstream in(path("q.csv"));
  double col[2] = {0, 0};
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    const double a = std::stod(line.substr(0, comma)), b = std::stod(line.substr(comma + 1));
    EXPECT_NEAR(a + b, 1.0, 1e-6);
    col[0] += a;
    col[1] += b;
    ++rows;
  }
  EXPECT_EQ(rows, 4);
  EXPECT_NEAR(col[0], 2.0, 1e-4 * 2);
  EXPECT_NEAR(col[1], 2.0, 1e-4 * 2);
  std::ofstream(path("bad.csv")) << "0.5,x\n";
  EXPECT_EQ(run("sinkhorn --in " + p("bad.csv") + " --out " + p("q2.csv")).code, 2);
}

TEST_F(Cli, DataErrorsExitTwo) {
  std::ofstream(path("junk.pgcd")) << "not a container";
  const auto r = run("predict --features " + p("junk.pgcd") + " --state " + p("junk.pgcd") + " --out " + p("o.csv"));
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
  std::ofstream(path("bad.toml")) << "[train]\nepoch = 3\n";
  EXPECT_EQ(run("train-toy --config " + p("bad.toml") + " --out " + p("run")).code, 2);
}

TEST_F(Cli, PipelineGenTrainEval) {
  ASSERT_EQ(run("gen-synth --seed 2 --classes 6 --old 3 --per-class 16 --dim 8 --out " + p("d.pgcd")).code, 0);
  std::ofstream(path("toy.toml")) << "[train]\nepochs = 3\nwarmup_epochs = 1\nbatch_size = 32\nparts = 3\n";
  const auto t = run("--seed 2 train-toy --config " + p("toy.toml") + " --data " + p("d.pgcd") + " --out " + p("run"));
  ASSERT_EQ(t.code, 0) << t.err;
  for (const char* f : {"config.toml", "version.txt", "metrics.csv", "state.bin", "gmms.bin", "prototypes.bin",
                        "preds.csv", "labels.csv", "old_classes.txt", "acc.csv"})
    EXPECT_TRUE(fs::exists(path("run") / f)) << f;
  EXPECT_NE(slurp(path("run") / "config.toml").find(PARTDISC_VERSION), std::string::npos);

  // metrics.csv: header plus one row per epoch, all with the header's width.
  std::ifstream m(path("run") / "metrics.csv");
  std::string line;
  std::getline(m, line);
  const auto width = std::count(line.begin(), line.end(), ',');
  EXPECT_EQ(line.rfind("epoch,", 0), 0u);
  int rows = 0;
  while (std::getline(m, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), width);
    ++rows;
  }
  EXPECT_EQ(rows, 3);

  const auto e = run("eval --pred " + p("run/preds.csv") + " --labels " + p("run/labels.csv") + " --old-classes " +
                     p("run/old_classes.txt") + " --out " + p("acc.csv"));
  ASSERT_EQ(e.code, 0) << e.err;
  std::istringstream acc(slurp(path("acc.csv")));
  std::string header, values;
  std::getline(acc, header);
  std::getline(acc, values);
  EXPECT_EQ(header, "n_all,n_old,n_new,all,old,new");
  std::istringstream vs(values);
  std::string cell;
  std::vector<double> v;
  while (std::getline(vs, cell, ',')) v.push_back(std::stod(cell));
  ASSERT_EQ(v.size(), 6u);
  EXPECT_EQ(v[0], 72.0);  // 96 samples minus the 24 labeled ones
  EXPECT_GE(v[3], 0.0);
  EXPECT_LE(v[3], 1.0);
  EXPECT_EQ(slurp(path("acc.csv")), slurp(path("run") / "acc.csv"));

  // predict with the stored files reproduces the run's predictions.
  ASSERT_EQ(run("predict --features " + p("d.pgcd") + " --state " + p("run/state.bin") + " --gmms " +
                p("run/gmms.bin") + " --out " + p("preds.csv"))
                .code,
            0);
  EXPECT_EQ(slurp(path("preds.csv")), slurp(path("run") / "preds.csv"));

  // The resolved config plus the seed reproduces the run exactly, at any thread count.
  const auto again =
      run("--seed 2 train-toy --config " + p("run/config.toml") + " --out " + p("run2"), "PARTDISC_THREADS=3");
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(slurp(path("run2") / "metrics.csv"), slurp(path("run") / "metrics.csv"));
  EXPECT_EQ(slurp(path("run2") / "state.bin"), slurp(path("run") / "state.bin"));
}

TEST_F(Cli, SelectThenFitGmm) {
  ASSERT_EQ(run("gen-synth --seed 4 --classes 6 --old 3 --per-class 16 --dim 8 --out " + p("d.pgcd")).code, 0);
  std::ofstream(path("toy.toml")) << "[train]\nepochs = 2\nwarmup_epochs = 1\nparts = 3\n";
  ASSERT_EQ(run("train-toy --config " + p("toy.toml") + " --data " + p("d.pgcd") + " --out " + p("run")).code, 0);
  const auto s = run("select --features " + p("d.pgcd") + " --proto " + p("run/prototypes.bin") + " --state " +
                     p("run/state.bin") + " --gamma 1.0 --out " + p("cand.json"));
  ASSERT_EQ(s.code, 0) << s.err;
  const auto j = nlohmann::json::parse(slurp(path("cand.json")));
  EXPECT_EQ(j["ns"].get<int>(), 8);  // 24 labeled / 3 old classes
  EXPECT_EQ(j["classes"].size(), 6u);
  EXPECT_EQ(j["classes"]["0"].size(), 8u);  // old class: its labeled samples
  EXPECT_EQ(j["classes"]["5"].size(), 8u);
  EXPECT_TRUE(j.contains("purity"));
  const double mean_new = j["purity"]["mean_new"].get<double>();
  EXPECT_GE(mean_new, 0.0);
  EXPECT_LE(mean_new, 1.0);

  ASSERT_EQ(run("fit-gmm --features " + p("d.pgcd") + " --candidates " + p("cand.json") + " --k 3 --out " + p("g.bin"))
                .code,
            0);
  const auto model = load_part_model(path("g.bin"));
  ASSERT_EQ(model.classes.size(), 6u);
  for (const auto& g : model.classes) EXPECT_EQ(g.k(), 3u);
  EXPECT_EQ(run("fit-gmm --features " + p("d.pgcd") + " --candidates " + p("cand.json") + " --k 0 --out " + p("h.bin"))
                .code,
            1);
  std::ofstream(path("broken.json")) << "{\"ns\": 1, \"classes\": {\"0\": [999999]}}";
  EXPECT_EQ(run("fit-gmm --features " + p("d.pgcd") + " --candidates " + p("broken.json") + " --out " + p("h.bin"))
                .code,
            2);
}

TEST_F(Cli, GradcheckPassesQuickly) {
  const auto r = run("--seed 5 gradcheck --out " + p("gc.csv"));
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("check,instance,value,rel_error,pass\n", 0), 0u);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_EQ(slurp(path("gc.csv")), r.out);
}

}  // namespace
}  // namespace partdisc
