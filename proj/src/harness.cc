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

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <utility>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace herd_mfg {
namespace {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

int LineAt(const std::string& text, std::size_t pos) {
  pos = std::min(pos, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + pos, '\n'));
}

// Reads typed fields out of a parsed spec and reports problems against the
// line where the offending key first appears.
class SpecReader {
 public:
  explicit SpecReader(const std::string& text) : text_(text) {}

  [[noreturn]] void Fail(const std::string& path,
                         const std::string& message) const {
    const std::size_t dot = path.rfind('.');
    const std::string key = dot == std::string::npos ? path : path.substr(dot + 1);
    const std::size_t pos = text_.find("\"" + key + "\"");
    throw SpecError(pos == std::string::npos ? 0 : LineAt(text_, pos), path,
                    message);
  }

  void Require(bool ok, const std::string& path, const std::string& message) const {
    if (!ok) Fail(path, message);
  }

  void CheckKeys(const Json& obj, const std::string& prefix,
                 const std::set<std::string>& allowed) const {
    for (const auto& item : obj.items()) {
      if (!allowed.count(item.key())) {
        Fail(Join(prefix, item.key()), "unknown field");
      }
    }
  }

  const Json& Object(const Json& obj, const std::string& prefix,
                     const std::string& key) const {
    const std::string path = Join(prefix, key);
    if (!obj.contains(key)) Fail(path, "missing required field");
    if (!obj.at(key).is_object()) Fail(path, "expected an object");
    return obj.at(key);
  }

  double Number(const Json& obj, const std::string& prefix,
                const std::string& key, std::optional<double> fallback) const {
    const std::string path = Join(prefix, key);
    if (!obj.contains(key)) {
      if (!fallback) Fail(path, "missing required field");
      return *fallback;
    }
    const Json& v = obj.at(key);
    if (!v.is_number()) Fail(path, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) Fail(path, "expected a finite number");
    return x;
  }

  std::int64_t Integer(const Json& obj, const std::string& prefix,
                       const std::string& key,
                       std::optional<std::int64_t> fallback) const {
    const std::string path = Join(prefix, key);
    if (!obj.contains(key)) {
      if (!fallback) Fail(path, "missing required field");
      return *fallback;
    }
    const Json& v = obj.at(key);
    if (v.is_number_unsigned()) {
      if (v.get<std::uint64_t>() >
          static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
        Fail(path, "integer out of range");
      }
      return static_cast<std::int64_t>(v.get<std::uint64_t>());
    }
    if (!v.is_number_integer()) Fail(path, "expected an integer");
    return v.get<std::int64_t>();
  }

  std::uint64_t Unsigned(const Json& v, const std::string& path) const {
    if (!v.is_number_unsigned()) {
      Fail(path, "expected a non-negative 64-bit integer");
    }
    return v.get<std::uint64_t>();
  }

  std::string String(const Json& obj, const std::string& prefix,
                     const std::string& key,
                     std::optional<std::string> fallback) const {
    const std::string path = Join(prefix, key);
    if (!obj.contains(key)) {
      if (!fallback) Fail(path, "missing required field");
      return *fallback;
    }
    if (!obj.at(key).is_string()) Fail(path, "expected a string");
    return obj.at(key).get<std::string>();
  }

 private:
  static std::string Join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
  }

  const std::string& text_;
};

std::string ModeName(ScheduleMode mode) {
  return mode == ScheduleMode::kPractical ? "practical" : "theory_safe";
}

StepSchedule ParseSchedule(const SpecReader& in, const Json& obj) {
  const std::string p = "config.schedule";
  in.CheckKeys(obj, p,
               {"mode", "lambda0", "alpha0", "beta0", "xi0", "surrogates"});
  const std::string mode_name = in.String(obj, p, "mode", "practical");
  ScheduleMode mode;
  if (mode_name == "practical") {
    mode = ScheduleMode::kPractical;
  } else if (mode_name == "theory_safe") {
    mode = ScheduleMode::kTheorySafe;
  } else {
    in.Fail(p + ".mode", "expected \"practical\" or \"theory_safe\"");
  }
  if (obj.contains("surrogates")) {
    if (mode != ScheduleMode::kTheorySafe) {
      in.Fail(p + ".surrogates", "only valid with mode \"theory_safe\"");
    }
    if (obj.contains("lambda0") || obj.contains("alpha0") ||
        obj.contains("beta0") || obj.contains("xi0")) {
      in.Fail(p + ".surrogates", "give either surrogates or base constants");
    }
    const Json& s = in.Object(obj, p, "surrogates");
    const std::string sp = p + ".surrogates";
    in.CheckKeys(s, sp,
                 {"l", "l_f", "l_g", "l_h", "l_v", "delta", "gamma", "rho",
                  "num_states"});
    LipschitzSurrogates c;
    c.l = in.Number(s, sp, "l", c.l);
    c.l_f = in.Number(s, sp, "l_f", c.l_f);
    c.l_g = in.Number(s, sp, "l_g", c.l_g);
    c.l_h = in.Number(s, sp, "l_h", c.l_h);
    c.l_v = in.Number(s, sp, "l_v", c.l_v);
    c.delta = in.Number(s, sp, "delta", c.delta);
    c.gamma = in.Number(s, sp, "gamma", c.gamma);
    c.rho = in.Number(s, sp, "rho", c.rho);
    c.num_states = static_cast<int>(in.Integer(s, sp, "num_states", c.num_states));
    try {
      return MakeTheorySafeSchedule(c).schedule;
    } catch (const std::invalid_argument& e) {
      in.Fail(sp, e.what());
    }
  }
  const StepSchedule practical = StepSchedule::Practical();
  try {
    return StepSchedule(in.Number(obj, p, "lambda0", practical.lambda0()),
                        in.Number(obj, p, "alpha0", practical.alpha0()),
                        in.Number(obj, p, "beta0", practical.beta0()),
                        in.Number(obj, p, "xi0", practical.xi0()), mode);
  } catch (const std::invalid_argument& e) {
    in.Fail(p, e.what());
  }
}

EnvDescriptor ParseEnv(const SpecReader& in, const Json& obj) {
  const std::string p = "env";
  in.CheckKeys(obj, p, {"family", "n_states", "n_actions", "seed", "overrides"});
  EnvDescriptor d;
  d.family = in.String(obj, p, "family", std::nullopt);
  const std::int64_t n_s = in.Integer(obj, p, "n_states", std::nullopt);
  const std::int64_t n_a = in.Integer(obj, p, "n_actions", std::nullopt);
  if (n_s < 1 || n_s > 100000) in.Fail(p + ".n_states", "must be in [1, 100000]");
  if (n_a < 1 || n_a > 100000) in.Fail(p + ".n_actions", "must be in [1, 100000]");
  d.n_states = static_cast<int>(n_s);
  d.n_actions = static_cast<int>(n_a);
  d.seed = obj.contains("seed") ? in.Unsigned(obj.at("seed"), p + ".seed") : 0;
  if (obj.contains("overrides")) {
    const Json& o = in.Object(obj, p, "overrides");
    for (const auto& item : o.items()) {
      d.overrides[item.key()] = in.Number(o, p + ".overrides", item.key(), std::nullopt);
    }
  }
  return d;
}

std::vector<double> MetricRow(const MetricRecord& m) {
  return {m.eps_pi, m.eps_mu, m.eps_v, m.eps_j,
          m.grad_proxy, m.mu_residual_proxy, m.j_hat};
}

OrderedJson MetricJson(const MetricRecord& m) {
  OrderedJson j;
  j["k"] = m.k;
  const std::vector<double> row = MetricRow(m);
  for (std::size_t i = 0; i < row.size(); ++i) {
    j[MetricColumns()[i]] = row[i];
  }
  j["eps_sum"] = m.EpsSum();
  return j;
}

void WriteFile(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// Softmax policy with i.i.d. N(0, scale^2) logits.
SoftmaxPolicy RandomSoftmax(int n_s, int n_a, Rng& rng, double scale) {
  RowMatrix theta(n_s, n_a);
  for (int s = 0; s < n_s; ++s) {
    for (int a = 0; a < n_a; ++a) theta(s, a) = scale * rng.Normal();
  }
  return SoftmaxPolicy(std::move(theta));
}

Vector CentralDifferenceGradient(const TabularMfg& env,
                                 const SoftmaxPolicy& theta,
                                 const MeanField& mu, double h) {
  Vector grad(theta.theta().size());
  SoftmaxPolicy probe = theta;
  for (Eigen::Index i = 0; i < grad.size(); ++i) {
    const double base = probe.flat()(i);
    probe.mutable_flat()(i) = base + h;
    const double up = AverageReward(env, SoftmaxTable(probe), mu);
    probe.mutable_flat()(i) = base - h;
    const double down = AverageReward(env, SoftmaxTable(probe), mu);
    probe.mutable_flat()(i) = base;
    grad(i) = (up - down) / (2.0 * h);
  }
  return grad;
}

CheckOutcome HerdingOutcome(const TabularMfg& env, const VerifyOptions& opt,
                            Rng& rng) {
  CheckOutcome out{"herding", "PASS", {}, ""};
  double rho = opt.rho;
  if (!(rho > 0.0)) {
    const auto& d = env.descriptor();
    if (d.family == "example1") {
      const auto it = d.overrides.find("p_exp");
      rho = (it == d.overrides.end() ? 1.0 : it->second) + 1.0;
    } else {
      rho = 2.0;
    }
  }
  const HerdingReport r = HerdingCheck(env, rho, opt.herding_pairs, rng);
  out.values = {{"rho", rho},
                {"kappa_hat", r.kappa_hat},
                {"n_pairs", r.n_pairs},
                {"n_skipped", r.n_skipped}};
  if (r.kappa_hat > 1e-9) {
    out.status = "FAIL";
    out.detail = "positive herding defect; kappa_hat > 1e-9";
  }
  return out;
}

CheckOutcome DeltaOutcome(const TabularMfg& env, const VerifyOptions& opt,
                          Rng& rng) {
  CheckOutcome out{"delta", "PASS", {}, ""};
  const double delta =
      EstimateContractionDelta(env, opt.delta_policies, opt.delta_mu_pairs, rng);
  out.values = {{"delta_hat", delta},
                {"n_samples", static_cast<double>(opt.delta_policies) *
                                  opt.delta_mu_pairs}};
  if (!(delta < 1.0)) {
    out.status = "FAIL";
    out.detail = "mean-field map is not a contraction on the samples";
  }
  return out;
}

CheckOutcome MixingOutcome(const TabularMfg& env, const VerifyOptions& opt,
                           Rng& rng) {
  CheckOutcome out{"mixing", "PASS", {}, ""};
  int worst = 0;
  for (int i = 0; i <= opt.mixing_policies; ++i) {
    const PolicyTable pi =
        i == 0 ? PolicyTable::Uniform(env.num_states(), env.num_actions())
               : SoftmaxTable(RandomSoftmax(env.num_states(), env.num_actions(),
                                            rng, 2.0));
    const MeanField mu = InducedMeanField(env, pi);
    worst = std::max(worst, EstimateMixingTime(env, pi, mu, opt.mixing_c));
  }
  out.values = {{"c", opt.mixing_c},
                {"max_mixing_time", worst},
                {"n_policies", opt.mixing_policies + 1}};
  return out;
}

CheckOutcome FisherOutcome(const TabularMfg& env, const VerifyOptions& opt,
                           Rng& rng) {
  CheckOutcome out{"fisher", "PASS", {}, ""};
  double lo = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= opt.fisher_policies; ++i) {
    const SoftmaxPolicy theta =
        i == 0 ? SoftmaxPolicy::Zeros(env.num_states(), env.num_actions())
               : RandomSoftmax(env.num_states(), env.num_actions(), rng, 1.0);
    lo = std::min(lo, FisherMinEigenvalue(env, theta));
  }
  out.values = {{"min_eigenvalue", lo}, {"n_policies", opt.fisher_policies + 1}};
  if (env.num_actions() > 1 && !(lo > 1e-12)) {
    out.status = "FAIL";
    out.detail = "restricted Fisher matrix is singular";
  }
  return out;
}

CheckOutcome OracleOutcome(const TabularMfg& env, const VerifyOptions& opt,
                           Rng& rng) {
  CheckOutcome out{"oracle", "PASS", {}, ""};
  double stationary = 0.0;
  double bellman = 0.0;
  double gradient = 0.0;
  for (int i = 0; i < opt.oracle_policies; ++i) {
    const SoftmaxPolicy theta =
        RandomSoftmax(env.num_states(), env.num_actions(), rng, 1.0);
    const MeanField mu(rng.SimplexPoint(env.num_states()));
    const PolicyTable pi = SoftmaxTable(theta);
    stationary = std::max(
        stationary,
        StationaryDistribution(TransitionMatrix(env, pi, mu)).residual);
    bellman =
        std::max(bellman, SolveDifferentialValue(env, pi, mu).bellman_residual);
    const Vector exact = ExactPolicyGradient(env, theta, mu);
    const Vector fd = CentralDifferenceGradient(env, theta, mu, 1e-5);
    gradient = std::max(gradient,
                        (exact - fd).norm() / std::max(exact.norm(), 1e-6));
  }
  out.values = {{"max_stationary_residual", stationary},
                {"max_bellman_residual", bellman},
                {"max_gradient_rel_error", gradient}};
  if (stationary > 1e-10 || bellman > 1e-10 || gradient > 1e-4) {
    out.status = "FAIL";
    out.detail = "oracle residual above tolerance";
  }
  return out;
}

}  // namespace

std::string SolverName(SolverKind kind) {
  switch (kind) {
    case SolverKind::kAsac:
      return "asac";
    case SolverKind::kMdpAc:
      return "mdp_ac";
    case SolverKind::kBaseline:
      return "baseline";
  }
  return "?";
}

std::string SolverLabel(SolverKind kind) {
  switch (kind) {
    case SolverKind::kAsac:
      return "ASAC-MFG";
    case SolverKind::kMdpAc:
      return "average-reward actor-critic";
    case SolverKind::kBaseline:
      return "reconstructed baseline";
  }
  return "?";
}

SpecError::SpecError(int line, std::string field, const std::string& message)
    : std::invalid_argument("spec:" + std::to_string(line) + ": " +
                            (field.empty() ? std::string() : field + ": ") +
                            message),
      line_(line),
      field_(std::move(field)) {}

ExperimentSpec ParseExperimentSpec(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw SpecError(LineAt(text, e.byte == 0 ? 0 : e.byte - 1), "",
                    std::string("malformed JSON: ") + e.what());
  }
  const SpecReader in(text);
  if (!root.is_object()) in.Fail("", "top level must be an object");
  in.CheckKeys(root, "",
               {"env", "solver", "config", "seeds", "output", "metric_every"});

  ExperimentSpec spec;
  spec.env = ParseEnv(in, in.Object(root, "", "env"));
  std::unique_ptr<TabularMfg> env;
  try {
    env = MakeEnvironment(spec.env);
  } catch (const std::invalid_argument& e) {
    in.Fail("env", e.what());
  }

  const std::string solver = in.String(root, "", "solver", std::nullopt);
  if (solver == "asac") {
    spec.solver = SolverKind::kAsac;
  } else if (solver == "mdp_ac") {
    spec.solver = SolverKind::kMdpAc;
    if (!env->IsMdp()) in.Fail("solver", "mdp_ac needs a mean-field-free environment");
  } else if (solver == "baseline") {
    spec.solver = SolverKind::kBaseline;
  } else {
    in.Fail("solver", "expected one of asac, mdp_ac, baseline");
  }

  spec.metric_every = in.Integer(root, "", "metric_every", 100);
  if (spec.metric_every < 1) in.Fail("metric_every", "must be >= 1");
  spec.output = in.String(root, "", "output", "");

  const Json empty = Json::object();
  const Json& cfg = root.contains("config") ? in.Object(root, "", "config") : empty;
  if (spec.solver == SolverKind::kBaseline) {
    in.CheckKeys(cfg, "config",
                 {"tau", "tau_floor", "inner_iters", "outer_iters", "q_step",
                  "mu_step"});
    BaselineConfig& b = spec.baseline;
    b.tau = in.Number(cfg, "config", "tau", b.tau);
    b.tau_floor = in.Number(cfg, "config", "tau_floor", b.tau_floor);
    b.inner_iters = in.Integer(cfg, "config", "inner_iters", b.inner_iters);
    b.outer_iters = in.Integer(cfg, "config", "outer_iters", b.outer_iters);
    b.q_step = in.Number(cfg, "config", "q_step", b.q_step);
    b.mu_step = in.Number(cfg, "config", "mu_step", b.mu_step);
    in.Require(b.tau >= 0.0, "config.tau", "must be >= 0");
    in.Require(b.tau_floor > 0.0, "config.tau_floor", "must be > 0");
    in.Require(b.inner_iters >= 0, "config.inner_iters", "must be >= 0");
    in.Require(b.outer_iters >= 1, "config.outer_iters", "must be >= 1");
    in.Require(b.q_step > 0.0, "config.q_step", "must be > 0");
    in.Require(b.mu_step > 0.0 && b.mu_step <= 1.0, "config.mu_step",
               "must lie in (0, 1]");
    try {
      b.Validate();
    } catch (const std::invalid_argument& e) {
      in.Fail("config", e.what());
    }
  } else {
    in.CheckKeys(cfg, "config", {"b_v", "c_j", "max_iters", "schedule"});
    SolverConfig& c = spec.config;
    c = SolverConfig::ForStates(spec.env.n_states);
    c.b_v = in.Number(cfg, "config", "b_v", c.b_v);
    c.c_j = in.Number(cfg, "config", "c_j", c.c_j);
    c.max_iters = in.Integer(cfg, "config", "max_iters", c.max_iters);
    in.Require(c.b_v > 0.0, "config.b_v", "must be > 0");
    in.Require(c.c_j > 0.0, "config.c_j", "must be > 0");
    in.Require(c.max_iters >= 0, "config.max_iters", "must be >= 0");
    if (cfg.contains("schedule")) {
      c.schedule = ParseSchedule(in, in.Object(cfg, "config", "schedule"));
    }
    c.metric_every = spec.metric_every;
    try {
      c.Validate();
    } catch (const std::invalid_argument& e) {
      in.Fail("config", e.what());
    }
  }

  if (!root.contains("seeds")) in.Fail("seeds", "missing required field");
  const Json& seeds = root.at("seeds");
  if (!seeds.is_array() || seeds.empty()) {
    in.Fail("seeds", "expected a non-empty array");
  }
  std::set<std::uint64_t> seen;
  for (const Json& s : seeds) {
    const std::uint64_t seed = in.Unsigned(s, "seeds");
    if (!seen.insert(seed).second) {
      in.Fail("seeds", "duplicate seed " + std::to_string(seed));
    }
    spec.seeds.push_back(seed);
  }
  return spec;
}

ExperimentSpec LoadExperimentSpec(const std::filesystem::path& path) {
  std::string text;
  try {
    text = ReadFile(path);
  } catch (const std::runtime_error& e) {
    throw SpecError(0, "", e.what());
  }
  return ParseExperimentSpec(text);
}

std::string SerializeExperimentSpec(const ExperimentSpec& spec) {
  OrderedJson j;
  j["env"] = OrderedJson::parse(DescriptorToJson(spec.env));
  j["solver"] = SolverName(spec.solver);
  OrderedJson cfg;
  if (spec.solver == SolverKind::kBaseline) {
    const BaselineConfig& b = spec.baseline;
    cfg["tau"] = b.tau;
    cfg["tau_floor"] = b.tau_floor;
    cfg["inner_iters"] = b.inner_iters;
    cfg["outer_iters"] = b.outer_iters;
    cfg["q_step"] = b.q_step;
    cfg["mu_step"] = b.mu_step;
  } else {
    const SolverConfig& c = spec.config;
    cfg["b_v"] = c.b_v;
    cfg["c_j"] = c.c_j;
    cfg["max_iters"] = c.max_iters;
    OrderedJson sched;
    sched["mode"] = ModeName(c.schedule.mode());
    sched["lambda0"] = c.schedule.lambda0();
    sched["alpha0"] = c.schedule.alpha0();
    sched["beta0"] = c.schedule.beta0();
    sched["xi0"] = c.schedule.xi0();
    cfg["schedule"] = sched;
  }
  j["config"] = cfg;
  j["seeds"] = spec.seeds;
  j["output"] = spec.output;
  j["metric_every"] = spec.metric_every;
  return j.dump(2) + "\n";
}

const std::vector<std::string>& MetricColumns() {
  static const std::vector<std::string> kColumns = {
      "eps_pi", "eps_mu", "eps_v", "eps_j",
      "grad_proxy", "mu_residual_proxy", "j_hat"};
  return kColumns;
}

double MetricValue(const MetricRecord& record, const std::string& column) {
  const auto& cols = MetricColumns();
  const auto it = std::find(cols.begin(), cols.end(), column);
  if (it == cols.end()) throw std::invalid_argument("unknown metric " + column);
  return MetricRow(record)[it - cols.begin()];
}

SeedRun RunSeed(const ExperimentSpec& spec, const TabularMfg& env,
                std::uint64_t seed) {
  SeedRun run{seed, {}, {}};
  switch (spec.solver) {
    case SolverKind::kAsac:
    case SolverKind::kMdpAc: {
      SolverConfig c = spec.config;
      c.seed = seed;
      c.metric_every = spec.metric_every;
      const bool mdp = spec.solver == SolverKind::kMdpAc;
      RunResult r = mdp ? MdpAcRun(env, c) : AsacRun(env, c);
      run.trace = std::move(r.trace);
      if (!run.trace.empty() && run.trace.back().k == r.final_state.k) {
        run.final_metrics = run.trace.back();
      } else {
        run.final_metrics = mdp ? MdpMetrics(env, r.final_state)
                                : AsacMetrics(env, r.final_state);
      }
      break;
    }
    case SolverKind::kBaseline: {
      BaselineConfig b = spec.baseline;
      b.seed = seed;
      BaselineResult r = BaselineRun(env, b);
      // One record per outer iteration; keep the ones on the metric grid
      // with a fresh sample count.
      for (const MetricRecord& m : r.trace) {
        if (m.k % spec.metric_every != 0) continue;
        if (!run.trace.empty() && m.k <= run.trace.back().k) continue;
        run.trace.push_back(m);
      }
      run.final_metrics = r.trace.back();
      break;
    }
  }
  return run;
}

SeedAbort::SeedAbort(std::uint64_t seed, const std::string& what)
    : std::runtime_error("seed " + std::to_string(seed) + ": " + what),
      seed_(seed) {}

std::vector<SeedRun> RunExperiment(const ExperimentSpec& spec, int jobs) {
  const std::unique_ptr<TabularMfg> env = MakeEnvironment(spec.env);
  std::vector<std::uint64_t> seeds = spec.seeds;
  std::sort(seeds.begin(), seeds.end());
  const int n = static_cast<int>(seeds.size());
  std::vector<std::optional<SeedRun>> results(n);
  std::vector<std::string> errors(n);
  std::atomic<int> next{0};

  const auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        results[i] = RunSeed(spec, *env, seeds[i]);
        spdlog::debug("seed {} done ({} rows)", seeds[i], results[i]->trace.size());
      } catch (const std::exception& e) {
        errors[i] = e.what();
        spdlog::error("seed {} aborted: {}", seeds[i], e.what());
      }
    }
  };
  const int n_threads = std::clamp(jobs, 1, std::max(n, 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (int i = 0; i < n; ++i) {
    if (!results[i]) throw SeedAbort(seeds[i], errors[i]);
  }
  std::vector<SeedRun> out;
  out.reserve(n);
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

std::string FormatDouble(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string SeedCsv(const SeedRun& run) {
  std::string out = "k,seed";
  for (const auto& c : MetricColumns()) out += "," + c;
  out += "\n";
  for (const MetricRecord& m : run.trace) {
    out += std::to_string(m.k) + "," + std::to_string(run.seed);
    for (double v : MetricRow(m)) out += "," + FormatDouble(v);
    out += "\n";
  }
  return out;
}

std::string AggregateCsv(const std::vector<SeedRun>& runs) {
  if (runs.empty()) throw std::invalid_argument("AggregateCsv: no runs");
  const std::size_t rows = runs.front().trace.size();
  for (const SeedRun& r : runs) {
    if (r.trace.size() != rows) {
      throw std::invalid_argument("AggregateCsv: runs have different lengths");
    }
  }
  std::string out = "k";
  for (const auto& c : MetricColumns()) out += "," + c + "_mean," + c + "_std";
  out += "\n";
  const double n = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < rows; ++i) {
    const std::int64_t k = runs.front().trace[i].k;
    out += std::to_string(k);
    for (std::size_t c = 0; c < MetricColumns().size(); ++c) {
      double sum = 0.0;
      for (const SeedRun& r : runs) {
        if (r.trace[i].k != k) {
          throw std::invalid_argument("AggregateCsv: runs disagree on k");
        }
        sum += MetricRow(r.trace[i])[c];
      }
      const double mean = sum / n;
      double ss = 0.0;
      for (const SeedRun& r : runs) {
        const double d = MetricRow(r.trace[i])[c] - mean;
        ss += d * d;
      }
      out += "," + FormatDouble(mean) + "," + FormatDouble(std::sqrt(ss / n));
    }
    out += "\n";
  }
  return out;
}

std::string RunJson(const ExperimentSpec& spec,
                    const std::vector<SeedRun>& runs) {
  OrderedJson j;
  j["csv_schema_version"] = kCsvSchemaVersion;
  j["version"] = kVersion;
  j["solver"] = SolverName(spec.solver);
  j["solver_label"] = SolverLabel(spec.solver);
  j["spec"] = OrderedJson::parse(SerializeExperimentSpec(spec));
  if (spec.solver != SolverKind::kBaseline) {
    const StepSchedule& s = spec.config.schedule;
    j["schedule"] = {{"mode", ModeName(s.mode())},
                     {"lambda0", s.lambda0()},
                     {"alpha0", s.alpha0()},
                     {"beta0", s.beta0()},
                     {"xi0", s.xi0()}};
  }
  std::vector<std::string> columns = {"k", "seed"};
  for (const auto& c : MetricColumns()) columns.push_back(c);
  j["columns"] = columns;
  OrderedJson summary = OrderedJson::array();
  for (const SeedRun& r : runs) {
    OrderedJson s;
    s["seed"] = r.seed;
    s["rows"] = r.trace.size();
    if (!r.trace.empty()) {
      const auto best = std::min_element(
          r.trace.begin(), r.trace.end(),
          [](const MetricRecord& a, const MetricRecord& b) {
            return a.EpsSum() < b.EpsSum();
          });
      s["best"] = MetricJson(*best);
    }
    s["final"] = MetricJson(r.final_metrics);
    summary.push_back(s);
  }
  j["summary"] = summary;
  return j.dump(2) + "\n";
}

void WriteRunLog(const std::filesystem::path& dir, const ExperimentSpec& spec,
                 const std::vector<SeedRun>& runs) {
  std::filesystem::create_directories(dir);
  for (const SeedRun& r : runs) {
    WriteFile(dir / ("seed_" + std::to_string(r.seed) + ".csv"), SeedCsv(r));
  }
  WriteFile(dir / "aggregate.csv", AggregateCsv(runs));
  WriteFile(dir / "run.json", RunJson(spec, runs));
}

int CsvTable::Column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::out_of_range("no CSV column " + name);
  return static_cast<int>(it - header.begin());
}

CsvTable ParseCsv(const std::string& text) {
  CsvTable table;
  std::istringstream lines(text);
  std::string line;
  bool first = true;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream cols(line);
    std::string cell;
    while (std::getline(cols, cell, ',')) cells.push_back(cell);
    if (first) {
      table.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != table.header.size()) {
      throw std::invalid_argument("CSV row has " + std::to_string(cells.size()) +
                                  " cells, header has " +
                                  std::to_string(table.header.size()));
    }
    std::vector<double> row;
    for (const std::string& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (end == c.c_str() || *end != '\0') {
        throw std::invalid_argument("CSV cell is not a number: " + c);
      }
      row.push_back(v);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

CsvTable ReadCsv(const std::filesystem::path& path) {
  return ParseCsv(ReadFile(path));
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const std::vector<std::string>& VerifyCheckNames() {
  static const std::vector<std::string> kNames = {"herding", "delta", "mixing",
                                                  "fisher", "oracle"};
  return kNames;
}

VerifyReport RunVerify(const EnvDescriptor& descriptor,
                       const VerifyOptions& options) {
  for (const std::string& c : options.checks) {
    const auto& names = VerifyCheckNames();
    if (std::find(names.begin(), names.end(), c) == names.end()) {
      throw std::invalid_argument("unknown check '" + c + "'");
    }
  }
  const std::unique_ptr<TabularMfg> env = MakeEnvironment(descriptor);
  VerifyReport report{descriptor, {}};
  for (const std::string& name : options.checks) {
    // Each check gets its own stream so reports do not depend on which
    // other checks were selected.
    Rng rng(options.seed,
            kCheckerStream + 1 +
                (std::find(VerifyCheckNames().begin(), VerifyCheckNames().end(),
                           name) -
                 VerifyCheckNames().begin()));
    CheckOutcome outcome;
    try {
      if (name == "herding") outcome = HerdingOutcome(*env, options, rng);
      if (name == "delta") outcome = DeltaOutcome(*env, options, rng);
      if (name == "mixing") outcome = MixingOutcome(*env, options, rng);
      if (name == "fisher") outcome = FisherOutcome(*env, options, rng);
      if (name == "oracle") outcome = OracleOutcome(*env, options, rng);
    } catch (const OracleError& e) {
      outcome = {name, "FAIL", {}, e.what()};
    } catch (const std::exception& e) {
      outcome = {name, "ERROR", {}, e.what()};
    }
    report.checks.push_back(std::move(outcome));
  }
  return report;
}

std::string VerifyReport::ToJson() const {
  OrderedJson j;
  j["version"] = kVersion;
  j["env"] = OrderedJson::parse(DescriptorToJson(env));
  j["checks"] = OrderedJson::array();
  for (const CheckOutcome& c : checks) {
    OrderedJson o;
    o["name"] = c.name;
    o["status"] = c.status;
    o["values"] = OrderedJson::object();
    for (const auto& [k, v] : c.values) o["values"][k] = v;
    o["detail"] = c.detail;
    j["checks"].push_back(o);
  }
  return j.dump(2) + "\n";
}

std::string VerifyReport::ToText() const {
  std::ostringstream out;
  out << "environment " << env.family << " (" << env.n_states << " states, "
      << env.n_actions << " actions, seed " << env.seed << ")\n";
  for (const CheckOutcome& c : checks) {
    out << c.name << ": " << c.status;
    for (const auto& [k, v] : c.values) out << "  " << k << "=" << FormatDouble(v);
    if (!c.detail.empty()) out << "  (" << c.detail << ")";
    out << "\n";
  }
  return out.str();
}

std::string EquilibriumVerdict::ToJson() const {
  OrderedJson j;
  j["status"] = status;
  j["gap"] = gap;
  j["consistency"] = consistency;
  j["detail"] = detail;
  return j.dump(2) + "\n";
}

EquilibriumVerdict CheckEquilibrium(const TabularMfg& env,
                                    const PolicyTable& policy,
                                    const MeanField& mu, double eps) {
  EquilibriumVerdict v;
  if (policy.num_states() != env.num_states() ||
      policy.num_actions() != env.num_actions() ||
      mu.size() != env.num_states()) {
    throw std::invalid_argument("policy or mean field has the wrong shape");
  }
  try {
    v.consistency = (mu.probs() - InducedMeanField(env, policy).probs()).norm();
    v.gap = BestResponseValue(env, mu).value - AverageReward(env, policy, mu);
  } catch (const OracleError& e) {
    v.status = "ERROR";
    v.detail = e.what();
    return v;
  }
  const bool optimal = v.gap <= eps;
  const bool consistent = v.consistency <= eps;
  v.status = optimal && consistent ? "PASS" : "FAIL";
  if (!optimal) v.detail = "best-response gap above epsilon";
  if (!consistent) {
    v.detail += std::string(v.detail.empty() ? "" : "; ") +
                "mean field is not induced by the policy";
  }
  return v;
}

PolicyTable PolicyFromJson(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument(std::string("policy: ") + e.what());
  }
  if (j.is_object()) {
    if (!j.contains("policy")) throw std::invalid_argument("policy: missing key");
    j = j.at("policy");
  }
  if (!j.is_array() || j.empty() || !j.front().is_array() || j.front().empty()) {
    throw std::invalid_argument("policy: expected a non-empty array of rows");
  }
  RowMatrix p(j.size(), j.front().size());
  for (std::size_t s = 0; s < j.size(); ++s) {
    if (!j[s].is_array() || j[s].size() != j.front().size()) {
      throw std::invalid_argument("policy: ragged rows");
    }
    for (std::size_t a = 0; a < j[s].size(); ++a) {
      if (!j[s][a].is_number()) throw std::invalid_argument("policy: non-number");
      p(s, a) = j[s][a].get<double>();
    }
  }
  return PolicyTable(std::move(p));
}

MeanField MeanFieldFromJson(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument(std::string("mean field: ") + e.what());
  }
  if (j.is_object()) {
    if (!j.contains("mu")) throw std::invalid_argument("mean field: missing key");
    j = j.at("mu");
  }
  if (!j.is_array() || j.empty()) {
    throw std::invalid_argument("mean field: expected a non-empty array");
  }
  Vector mu(j.size());
  for (std::size_t s = 0; s < j.size(); ++s) {
    if (!j[s].is_number()) throw std::invalid_argument("mean field: non-number");
    mu(s) = j[s].get<double>();
  }
  return MeanField(std::move(mu));
}

}  // namespace herd_mfg
