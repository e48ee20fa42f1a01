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

// Experiment specs, multi-seed orchestration, CSV logs and the verify /
// equilibrium reports behind the command-line tool.

#ifndef HERD_MFG_HARNESS_H_
#define HERD_MFG_HARNESS_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "herd_mfg/core.h"
#include "herd_mfg/environment.h"
#include "herd_mfg/oracle.h"
#include "herd_mfg/solvers.h"

namespace herd_mfg {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kCsvSchemaVersion = 1;

enum class SolverKind { kAsac, kMdpAc, kBaseline };

std::string SolverName(SolverKind kind);  // "asac", "mdp_ac", "baseline"
std::string SolverLabel(SolverKind kind); // human-readable, for reports

struct ExperimentSpec {
  EnvDescriptor env;
  SolverKind solver = SolverKind::kAsac;
  SolverConfig config;      // asac and mdp_ac; its seed is set per run
  BaselineConfig baseline;  // baseline only
  std::vector<std::uint64_t> seeds;
  std::string output;
  std::int64_t metric_every = 100;

  bool operator==(const ExperimentSpec&) const = default;
};

// Invalid spec text. `line` is 1-based, 0 when unknown; `field` is a dotted
// path such as "config.max_iters".
class SpecError : public std::invalid_argument {
 public:
  SpecError(int line, std::string field, const std::string& message);

  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  int line_;
  std::string field_;
};

// Parses and validates a JSON experiment spec. Unknown keys are rejected, the
// environment must be reconstructible, seeds must be non-empty and distinct.
// Missing config.b_v defaults to 4 |S|.
ExperimentSpec ParseExperimentSpec(const std::string& text);
ExperimentSpec LoadExperimentSpec(const std::filesystem::path& path);

// Every field written out explicitly, so parse(serialize(x)) == x.
std::string SerializeExperimentSpec(const ExperimentSpec& spec);

// The metric columns in schema order (after k and seed).
const std::vector<std::string>& MetricColumns();
double MetricValue(const MetricRecord& record, const std::string& column);

struct SeedRun {
  std::uint64_t seed;
  std::vector<MetricRecord> trace;
  MetricRecord final_metrics;  // at the last iterate, logged or not
};

// One seed of an experiment. Throws SolverAbort.
SeedRun RunSeed(const ExperimentSpec& spec, const TabularMfg& env,
                std::uint64_t seed);

// A solver abort tagged with the seed it happened on.
class SeedAbort : public std::runtime_error {
 public:
  SeedAbort(std::uint64_t seed, const std::string& what);
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

// Runs every seed on up to `jobs` threads. Results come back sorted by seed
// whatever the completion order. On aborts, throws the SeedAbort of the
// smallest failing seed after all workers finish.
std::vector<SeedRun> RunExperiment(const ExperimentSpec& spec, int jobs = 1);

// "%.17g".
std::string FormatDouble(double x);

std::string SeedCsv(const SeedRun& run);
// Mean and population std over seeds at each logged k, seeds taken in the
// order given. Throws std::invalid_argument if the runs disagree on k.
std::string AggregateCsv(const std::vector<SeedRun>& runs);
// Header, schedule, per-seed running-minimum and final summaries.
std::string RunJson(const ExperimentSpec& spec,
                    const std::vector<SeedRun>& runs);

// Writes seed_<seed>.csv for each run, aggregate.csv and run.json into `dir`.
void WriteRunLog(const std::filesystem::path& dir, const ExperimentSpec& spec,
                 const std::vector<SeedRun>& runs);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int Column(const std::string& name) const;  // throws if absent
};
CsvTable ParseCsv(const std::string& text);
CsvTable ReadCsv(const std::filesystem::path& path);
std::string ReadFile(const std::filesystem::path& path);

// Assumption checks.
struct VerifyOptions {
  std::vector<std::string> checks = {"herding", "delta", "mixing", "fisher",
                                     "oracle"};
  double rho = 0.0;  // 0 selects p_exp + 1 on example1 and 2 elsewhere
  int herding_pairs = 1000;
  int delta_policies = 50;
  int delta_mu_pairs = 10;  // 500 (pi, mu, mu') samples by default
  double mixing_c = 0.25;
  int mixing_policies = 20;
  int fisher_policies = 20;
  int oracle_policies = 20;
  std::uint64_t seed = 0;
};

struct CheckOutcome {
  std::string name;
  std::string status;  // PASS, FAIL or ERROR
  std::map<std::string, double> values;
  std::string detail;
};

struct VerifyReport {
  EnvDescriptor env;
  std::vector<CheckOutcome> checks;

  std::string ToJson() const;
  std::string ToText() const;
};

// Throws std::invalid_argument for unknown check names. Checker failures are
// recorded in the report.
VerifyReport RunVerify(const EnvDescriptor& descriptor,
                       const VerifyOptions& options = {});

const std::vector<std::string>& VerifyCheckNames();

struct EquilibriumVerdict {
  std::string status;  // PASS, FAIL or ERROR
  double gap = 0.0;          // max_pi' J(pi', mu) - J(pi, mu)
  double consistency = 0.0;  // ||mu - mu*(pi)||
  std::string detail;

  std::string ToJson() const;
};

// PASS iff both the best-response gap and the consistency error are <= eps.
EquilibriumVerdict CheckEquilibrium(const TabularMfg& env,
                                    const PolicyTable& policy,
                                    const MeanField& mu, double eps);

// {"policy": [[...], ...]} or a bare nested array.
PolicyTable PolicyFromJson(const std::string& text);
// {"mu": [...]} or a bare array.
MeanField MeanFieldFromJson(const std::string& text);

}  // namespace herd_mfg

#endif  // HERD_MFG_HARNESS_H_
