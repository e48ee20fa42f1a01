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

// herd_mfg command-line tool.
//
// Exit codes: 0 success (or PASS), 1 equilibrium FAIL / internal error,
// 2 invalid spec or input, 3 solver abort, 4 equilibrium oracle error.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "herd_mfg/environment.h"
#include "herd_mfg/harness.h"

namespace {

using herd_mfg::EnvDescriptor;

constexpr int kExitOk = 0;
constexpr int kExitFail = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitAbort = 3;
constexpr int kExitOracle = 4;

void ConfigureLogging() {
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("HERD_MFG_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }
}

// Environment from either a descriptor file or the env block of a spec.
EnvDescriptor LoadDescriptor(const std::string& env_file,
                             const std::string& spec_file) {
  if (!env_file.empty()) {
    return herd_mfg::DescriptorFromJson(herd_mfg::ReadFile(env_file));
  }
  if (!spec_file.empty()) return herd_mfg::LoadExperimentSpec(spec_file).env;
  throw std::invalid_argument("one of --env or --spec is required");
}

int Run(const std::string& spec_file, std::string out, int jobs,
        std::uint64_t seed_offset) {
  herd_mfg::ExperimentSpec spec;
  try {
    spec = herd_mfg::LoadExperimentSpec(spec_file);
  } catch (const herd_mfg::SpecError& e) {
    std::cerr << spec_file << ": " << e.what() << "\n";
    return kExitInvalid;
  }
  for (auto& s : spec.seeds) s += seed_offset;
  if (out.empty()) out = spec.output;
  if (out.empty()) {
    std::cerr << "no output directory: set \"output\" in the spec or pass --out\n";
    return kExitInvalid;
  }
  try {
    const auto runs = herd_mfg::RunExperiment(spec, jobs);
    herd_mfg::WriteRunLog(out, spec, runs);
  } catch (const herd_mfg::SeedAbort& e) {
    std::cerr << "solver abort on seed " << e.seed() << ": " << e.what() << "\n";
    return kExitAbort;
  }
  std::cout << "wrote " << spec.seeds.size() << " run(s) to " << out << "\n";
  return kExitOk;
}

int Verify(const EnvDescriptor& env, herd_mfg::VerifyOptions options,
           const std::string& out) {
  const herd_mfg::VerifyReport report = herd_mfg::RunVerify(env, options);
  std::cout << report.ToText();
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream(std::filesystem::path(out) / "report.json") << report.ToJson();
    std::ofstream(std::filesystem::path(out) / "report.txt") << report.ToText();
  }
  for (const auto& c : report.checks) {
    if (c.status == "ERROR") return kExitFail;
  }
  return kExitOk;
}

int Equilibrium(const EnvDescriptor& descriptor, const std::string& policy_file,
                const std::string& mu_file, double eps) {
  const auto env = herd_mfg::MakeEnvironment(descriptor);
  const auto policy = herd_mfg::PolicyFromJson(herd_mfg::ReadFile(policy_file));
  const auto mu = herd_mfg::MeanFieldFromJson(herd_mfg::ReadFile(mu_file));
  const auto verdict = herd_mfg::CheckEquilibrium(*env, policy, mu, eps);
  std::cout << verdict.ToJson();
  if (verdict.status == "PASS") return kExitOk;
  return verdict.status == "FAIL" ? kExitFail : kExitOracle;
}

}  // namespace

int main(int argc, char** argv) {
  ConfigureLogging();
  CLI::App app{"herd_mfg: single-loop actor-critic for mean field games"};
  app.require_subcommand(1);

  std::string spec_file, out, env_file, policy_file, mu_file, checks;
  int jobs = 1;
  std::uint64_t seed_offset = 0;
  double eps = 1e-6;
  herd_mfg::VerifyOptions verify_options;

  auto* run = app.add_subcommand("run", "run an experiment spec");
  run->add_option("--spec", spec_file, "experiment spec (JSON)")->required();
  run->add_option("--out", out, "output directory (overrides the spec)");
  run->add_option("--jobs", jobs, "seeds run concurrently")->check(CLI::PositiveNumber);
  run->add_option("--seed-offset", seed_offset, "added to every seed");

  auto* verify = app.add_subcommand("verify", "check structural assumptions");
  verify->add_option("--env", env_file, "environment descriptor (JSON)");
  verify->add_option("--spec", spec_file, "take the environment from a spec");
  verify->add_option("--checks", checks,
                     "comma-separated subset of herding,delta,mixing,fisher,oracle");
  verify->add_option("--rho", verify_options.rho, "herding constant");
  verify->add_option("--pairs", verify_options.herding_pairs, "herding policy pairs");
  verify->add_option("--seed", verify_options.seed, "checker seed");
  verify->add_option("--out", out, "directory for report.json and report.txt");

  auto* eq = app.add_subcommand("equilibrium", "test an epsilon-equilibrium");
  eq->add_option("--env", env_file, "environment descriptor (JSON)");
  eq->add_option("--spec", spec_file, "take the environment from a spec");
  eq->add_option("--policy", policy_file, "policy table (JSON)")->required();
  eq->add_option("--mu", mu_file, "mean field (JSON)")->required();
  eq->add_option("--epsilon", eps, "tolerance");

  auto* list = app.add_subcommand("list-envs", "list environment families");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return Run(spec_file, out, jobs, seed_offset);
    if (*list) {
      for (const auto& f : herd_mfg::EnvironmentFamilies()) std::cout << f << "\n";
      return kExitOk;
    }
    const EnvDescriptor env = LoadDescriptor(env_file, spec_file);
    if (*verify) {
      if (!checks.empty()) {
        verify_options.checks.clear();
        std::stringstream list_in(checks);
        std::string c;
        while (std::getline(list_in, c, ',')) verify_options.checks.push_back(c);
      }
      return Verify(env, verify_options, out);
    }
    if (*eq) return Equilibrium(env, policy_file, mu_file, eps);
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFail;
  }
  return kExitFail;
}
