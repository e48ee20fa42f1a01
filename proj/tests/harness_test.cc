// Copyright 2026 The herd-mfg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "herd_mfg/harness.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "herd_mfg/environment.h"

#ifndef HERD_MFG_CLI
#error "HERD_MFG_CLI must name the command-line binary"
#endif

namespace herd_mfg {
namespace {

namespace fs = std::filesystem;

const char* kTwoStateSpec = R"({
  "env": {"family": "twostate", "n_states": 2, "n_actions": 2},
  "solver": "asac",
  "config": {"max_iters": 3000},
  "seeds": [3, 1, 2],
  "metric_every": 500
})";

fs::path FreshDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() /
                       ("herd_mfg_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

// --- spec parsing ---

TEST(SpecTest, ParsesWithDefaults) {
  const ExperimentSpec s = ParseExperimentSpec(kTwoStateSpec);
  EXPECT_EQ(s.env.family, "twostate");
  EXPECT_EQ(s.solver, SolverKind::kAsac);
  EXPECT_EQ(s.config.max_iters, 3000);
  EXPECT_EQ(s.config.b_v, 8.0);  // 4 |S|
  EXPECT_EQ(s.config.schedule, StepSchedule::Practical());
  EXPECT_EQ(s.seeds, (std::vector<std::uint64_t>{3, 1, 2}));
  EXPECT_EQ(s.metric_every, 500);
}

TEST(SpecTest, RoundTrip) {
  std::vector<std::string> texts = {kTwoStateSpec, R"({
    "env": {"family": "env3", "n_states": 6, "n_actions": 6, "seed": 18446744073709551615,
            "overrides": {"noise_scale": 0.02}},
    "solver": "asac",
    "config": {"b_v": 3.5, "c_j": 2, "max_iters": 10,
               "schedule": {"mode": "theory_safe",
                            "surrogates": {"delta": 0.3, "num_states": 6}}},
    "seeds": [0], "output": "out/x", "metric_every": 7})",
      R"({"env": {"family": "random_mdp", "n_states": 5, "n_actions": 3, "seed": 1},
          "solver": "mdp_ac", "seeds": [1, 2]})",
      R"({"env": {"family": "twostate", "n_states": 2, "n_actions": 2},
          "solver": "baseline",
          "config": {"tau": 10, "inner_iters": 50, "outer_iters": 4, "mu_step": 0.5},
          "seeds": [9]})"};
  for (const std::string& text : texts) {
    const ExperimentSpec a = ParseExperimentSpec(text);
    const std::string once = SerializeExperimentSpec(a);
    const ExperimentSpec b = ParseExperimentSpec(once);
    EXPECT_EQ(a, b) << text;
    EXPECT_EQ(SerializeExperimentSpec(b), once);
  }
}

void ExpectSpecError(const std::string& text, int line, const std::string& field) {
  try {
    ParseExperimentSpec(text);
    ADD_FAILURE() << "accepted: " << text;
  } catch (const SpecError& e) {
    EXPECT_EQ(e.line(), line) << e.what();
    EXPECT_EQ(e.field(), field) << e.what();
    EXPECT_NE(std::string(e.what()).find("spec:" + std::to_string(line)), std::string::npos);
  }
}

TEST(SpecTest, ErrorsNameLineAndField) {
  ExpectSpecError(R"({
  "env": {"family": "twostate", "n_states": 2, "n_actions": 2},
  "solver": "asac",
  "seeds": []
})", 4, "seeds");
  ExpectSpecError(R"({
  "env": {"family": "twostate", "n_states": 2, "n_actions": 2},
  "solver": "asac",
  "config": {"max_iters": -5},
  "seeds": [1]
})", 4, "config.max_iters");
  ExpectSpecError(R"({
  "env": {"family": "nope", "n_states": 2, "n_actions": 2},
  "solver": "asac",
  "seeds": [1]
})", 2, "env");
  ExpectSpecError(R"({
  "env": {"family": "twostate", "n_states": 2, "n_actions": 2},
  "solver": "asac",
  "seeds": [1],
  "bogus": 1
})", 5, "bogus");
  ExpectSpecError(R"({
  "env": {"family": "twostate", "n_states": 2, "n_actions": 2},
  "solver": "mdp_ac",
  "seeds": [1]
})", 3, "solver");
  ExpectSpecError(R"({
  "env": {"family": "twostate", "n_states": 2, "n_actions": 2},
  "solver": "asac",
  "seeds": [1, 1]
})", 4, "seeds");
}

TEST(SpecTest, RecipesParse) {
  int n = 0;
  for (const auto& entry : fs::directory_iterator(HERD_MFG_SPECS_DIR)) {
    if (entry.path().extension() != ".json") continue;
    const ExperimentSpec s = LoadExperimentSpec(entry.path());
    EXPECT_FALSE(s.output.empty()) << entry.path();
    ++n;
  }
  EXPECT_GE(n, 5);
}

TEST(SpecTest, MalformedJson) {
  EXPECT_THROW(ParseExperimentSpec("{\n  \"env\": \n"), SpecError);
  EXPECT_THROW(ParseExperimentSpec("[1, 2]"), SpecError);
}

// --- runs and CSV ---

TEST(RunTest, SeedsSortedAndJobsDoNotMatter) {
  const ExperimentSpec spec = ParseExperimentSpec(kTwoStateSpec);
  const std::vector<SeedRun> one = RunExperiment(spec, 1);
  const std::vector<SeedRun> three = RunExperiment(spec, 3);
  ASSERT_EQ(one.size(), 3u);
  EXPECT_EQ(one[0].seed, 1u);
  EXPECT_EQ(one[2].seed, 3u);
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(SeedCsv(one[i]), SeedCsv(three[i]));
    ASSERT_EQ(one[i].trace.size(), 6u);
    for (std::size_t r = 1; r < one[i].trace.size(); ++r) {
      EXPECT_GT(one[i].trace[r].k, one[i].trace[r - 1].k);
    }
    EXPECT_EQ(one[i].final_metrics, one[i].trace.back());
  }
  EXPECT_EQ(AggregateCsv(one), AggregateCsv(three));
}

TEST(RunTest, CsvSchema) {
  const ExperimentSpec spec = ParseExperimentSpec(kTwoStateSpec);
  const std::vector<SeedRun> runs = RunExperiment(spec, 1);
  const CsvTable t = ParseCsv(SeedCsv(runs[0]));
  EXPECT_EQ(t.header, (std::vector<std::string>{"k", "seed", "eps_pi", "eps_mu", "eps_v",
                                                "eps_j", "grad_proxy", "mu_residual_proxy",
                                                "j_hat"}));
  ASSERT_EQ(t.rows.size(), 6u);
  EXPECT_EQ(t.rows[0][t.Column("k")], 500.0);
  EXPECT_EQ(t.rows[0][t.Column("seed")], 1.0);
  // 17 significant digits survive the text round trip.
  EXPECT_EQ(t.rows[2][t.Column("eps_pi")], runs[0].trace[2].eps_pi);
  EXPECT_EQ(t.rows[5][t.Column("j_hat")], runs[0].trace[5].j_hat);
  EXPECT_THROW(t.Column("missing"), std::out_of_range);

  const CsvTable agg = ParseCsv(AggregateCsv(runs));
  ASSERT_EQ(agg.header.size(), 1 + 2 * MetricColumns().size());
  EXPECT_EQ(agg.header[0], "k");
  for (const std::string& m : MetricColumns()) {
    EXPECT_GE(agg.Column(m + "_mean"), 1);
    EXPECT_GE(agg.Column(m + "_std"), 1);
  }
}

TEST(RunTest, AggregateMatchesRecomputation) {
  const ExperimentSpec spec = ParseExperimentSpec(kTwoStateSpec);
  const fs::path dir = FreshDir("aggregate");
  WriteRunLog(dir, spec, RunExperiment(spec, 2));
  std::vector<CsvTable> seeds;
  for (const int s : {1, 2, 3}) seeds.push_back(ReadCsv(dir / ("seed_" + std::to_string(s) + ".csv")));
  const CsvTable agg = ReadCsv(dir / "aggregate.csv");
  ASSERT_EQ(agg.rows.size(), seeds[0].rows.size());
  for (std::size_t r = 0; r < agg.rows.size(); ++r) {
    EXPECT_EQ(agg.rows[r][0], seeds[0].rows[r][0]);
    for (const std::string& m : MetricColumns()) {
      double mean = 0.0;
      for (const CsvTable& t : seeds) mean += t.rows[r][t.Column(m)];
      mean /= 3.0;
      double var = 0.0;
      for (const CsvTable& t : seeds) {
        var += (t.rows[r][t.Column(m)] - mean) * (t.rows[r][t.Column(m)] - mean);
      }
      const double sd = std::sqrt(var / 3.0);
      EXPECT_NEAR(agg.rows[r][agg.Column(m + "_mean")], mean, 1e-12);
      EXPECT_NEAR(agg.rows[r][agg.Column(m + "_std")], sd, 1e-12);
    }
  }
  EXPECT_TRUE(fs::exists(dir / "run.json"));
  fs::remove_all(dir);
}

TEST(RunTest, AggregateRejectsMismatchedRuns) {
  SeedRun a{1, {MetricRecord{}}, {}};
  SeedRun b{2, {MetricRecord{}}, {}};
  b.trace[0].k = 7;
  EXPECT_THROW(AggregateCsv({a, b}), std::invalid_argument);
  EXPECT_THROW(AggregateCsv({}), std::invalid_argument);
}

TEST(RunTest, BaselineTraceOnMetricGrid) {
  const ExperimentSpec spec = ParseExperimentSpec(R"({
    "env": {"family": "twostate", "n_states": 2, "n_actions": 2},
    "solver": "baseline",
    "config": {"tau": 1, "inner_iters": 30, "outer_iters": 10},
    "seeds": [4], "metric_every": 60})");
  const std::vector<SeedRun> runs = RunExperiment(spec);
  ASSERT_EQ(runs[0].trace.size(), 5u);
  for (const MetricRecord& m : runs[0].trace) EXPECT_EQ(m.k % 60, 0);
  EXPECT_EQ(runs[0].final_metrics.k, 300);
}

TEST(RunTest, AbortNamesTheSeed) {
  const ExperimentSpec spec = ParseExperimentSpec(R"({
    "env": {"family": "twostate", "n_states": 2, "n_actions": 2},
    "solver": "baseline",
    "config": {"q_step": 50, "inner_iters": 100, "outer_iters": 3},
    "seeds": [12, 5]})");
  try {
    RunExperiment(spec, 2);
    ADD_FAILURE() << "no abort";
  } catch (const SeedAbort& e) {
    EXPECT_EQ(e.seed(), 5u);
  }
}

TEST(FormatTest, SeventeenDigits) {
  EXPECT_EQ(FormatDouble(0.1), "0.10000000000000001");
  EXPECT_EQ(FormatDouble(2.0), "2");
  EXPECT_EQ(std::stod(FormatDouble(1.0 / 3.0)), 1.0 / 3.0);
}

// --- equilibrium and verify ---

TEST(EquilibriumTest, TwoStateVerdicts) {
  auto env = MakeTwoStateEnv();
  const PolicyTable bar1 = PolicyFromJson("[[1, 0], [1, 0]]");
  EXPECT_EQ(CheckEquilibrium(*env, bar1, MeanFieldFromJson("[0.75, 0.25]"), 1e-6).status,
            "PASS");
  EXPECT_EQ(CheckEquilibrium(*env, PolicyFromJson(R"({"policy": [[0.5, 0.5], [0.5, 0.5]]})"),
                             MeanFieldFromJson(R"({"mu": [0.5, 0.5]})"), 1e-6)
                .status,
            "PASS");
  const EquilibriumVerdict v =
      CheckEquilibrium(*env, bar1, MeanFieldFromJson("[0.25, 0.75]"), 1e-6);
  EXPECT_EQ(v.status, "FAIL");
  EXPECT_NEAR(v.consistency, std::sqrt(0.5), 1e-9);
  EXPECT_NE(v.ToJson().find("\"status\""), std::string::npos);
}

TEST(EquilibriumTest, OracleFailureIsError) {
  // Always staying makes the two-state chain reducible.
  auto env = MakeTwoStateEnv(1.0);
  const EquilibriumVerdict v = CheckEquilibrium(
      *env, PolicyFromJson("[[1, 0], [0, 1]]"), MeanFieldFromJson("[0.5, 0.5]"), 1e-6);
  EXPECT_EQ(v.status, "ERROR");
  EXPECT_FALSE(v.detail.empty());
}

TEST(EquilibriumTest, RejectsBadFiles) {
  EXPECT_THROW(PolicyFromJson("[[0.5, 0.6]]"), std::invalid_argument);
  EXPECT_THROW(MeanFieldFromJson("[0.5]"), std::invalid_argument);
  EXPECT_THROW(MeanFieldFromJson("not json"), std::invalid_argument);
}

const CheckOutcome& Find(const VerifyReport& r, const std::string& name) {
  for (const CheckOutcome& c : r.checks) {
    if (c.name == name) return c;
  }
  throw std::out_of_range(name);
}

TEST(VerifyTest, Example1HerdingAndDelta) {
  VerifyOptions opt;
  opt.checks = {"herding", "delta"};
  opt.rho = 2.0;
  const VerifyReport r = RunVerify(EnvDescriptor{"example1", 10, 3, 1, {}}, opt);
  ASSERT_EQ(r.checks.size(), 2u);
  EXPECT_EQ(Find(r, "herding").status, "PASS");
  EXPECT_LE(Find(r, "herding").values.at("kappa_hat"), 1e-9);
  EXPECT_EQ(Find(r, "delta").values.at("delta_hat"), 0.0);
  EXPECT_NE(r.ToText().find("herding"), std::string::npos);
  EXPECT_NE(r.ToJson().find("kappa_hat"), std::string::npos);
}

TEST(VerifyTest, Env3ContractionPasses) {
  VerifyOptions opt;
  opt.checks = {"delta"};
  const VerifyReport r = RunVerify(EnvDescriptor{"env3", 10, 10, 7, {}}, opt);
  const CheckOutcome& d = Find(r, "delta");
  EXPECT_EQ(d.values.at("n_samples"), 500.0);
  EXPECT_LT(d.values.at("delta_hat"), 1.0);
  EXPECT_EQ(d.status, "PASS");
}

TEST(VerifyTest, AllChecksOnTwoState) {
  const VerifyReport r = RunVerify(EnvDescriptor{"twostate", 2, 2, 0, {}});
  ASSERT_EQ(r.checks.size(), VerifyCheckNames().size());
  for (const CheckOutcome& c : r.checks) EXPECT_EQ(c.status, "PASS") << c.name << c.detail;
}

TEST(VerifyTest, SelectionDoesNotChangeResults) {
  VerifyOptions all;
  VerifyOptions one;
  one.checks = {"mixing"};
  const EnvDescriptor d{"beach_bar", 5, 3, 0, {}};
  EXPECT_EQ(Find(RunVerify(d, all), "mixing").values, Find(RunVerify(d, one), "mixing").values);
}

TEST(VerifyTest, UnknownCheckThrows) {
  VerifyOptions opt;
  opt.checks = {"herding", "vibes"};
  EXPECT_THROW(RunVerify(EnvDescriptor{"twostate", 2, 2, 0, {}}, opt), std::invalid_argument);
}

// --- command line ---

int RunCli(const std::string& args) {
  const std::string cmd = std::string(HERD_MFG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(CliTest, RunWritesDeterministicFiles) {
  const fs::path dir = FreshDir("cli_run");
  WriteText(dir / "spec.json", kTwoStateSpec);
  const std::string spec = (dir / "spec.json").string();
  ASSERT_EQ(RunCli("run --spec " + spec + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(RunCli("run --spec " + spec + " --out " + (dir / "b").string() + " --jobs 3"), 0);
  for (const char* f : {"seed_1.csv", "seed_2.csv", "seed_3.csv", "aggregate.csv"}) {
    EXPECT_EQ(ReadFile(dir / "a" / f), ReadFile(dir / "b" / f)) << f;
  }
  ASSERT_EQ(RunCli("run --spec " + spec + " --out " + (dir / "c").string() +
                   " --seed-offset 10"),
            0);
  EXPECT_TRUE(fs::exists(dir / "c" / "seed_13.csv"));
  EXPECT_FALSE(fs::exists(dir / "c" / "seed_3.csv"));
  fs::remove_all(dir);
}

TEST(CliTest, ExitCodes) {
  const fs::path dir = FreshDir("cli_codes");
  WriteText(dir / "bad.json", "{\n  \"solver\": \"asac\"\n}\n");
  EXPECT_EQ(RunCli("run --spec " + (dir / "bad.json").string() + " --out " +
                   (dir / "x").string()),
            2);
  WriteText(dir / "abort.json", R"({
    "env": {"family": "twostate", "n_states": 2, "n_actions": 2},
    "solver": "baseline",
    "config": {"q_step": 50, "inner_iters": 100, "outer_iters": 3},
    "seeds": [7]})");
  EXPECT_EQ(RunCli("run --spec " + (dir / "abort.json").string() + " --out " +
                   (dir / "y").string()),
            3);

  WriteText(dir / "env.json", R"({"family": "twostate", "n_states": 2, "n_actions": 2})");
  WriteText(dir / "bar1.json", "[[1, 0], [1, 0]]");
  WriteText(dir / "mu_good.json", "[0.75, 0.25]");
  WriteText(dir / "mu_bad.json", "[0.25, 0.75]");
  const std::string env = " --env " + (dir / "env.json").string();
  const std::string pol = " --policy " + (dir / "bar1.json").string();
  EXPECT_EQ(RunCli("equilibrium" + env + pol + " --mu " + (dir / "mu_good.json").string()), 0);
  EXPECT_EQ(RunCli("equilibrium" + env + pol + " --mu " + (dir / "mu_bad.json").string()), 1);

  EXPECT_EQ(RunCli("verify" + env + " --checks herding,delta --out " + (dir / "v").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "v" / "report.json"));
  EXPECT_TRUE(fs::exists(dir / "v" / "report.txt"));
  EXPECT_EQ(RunCli("list-envs"), 0);
  EXPECT_NE(RunCli("no-such-command"), 0);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace herd_mfg
