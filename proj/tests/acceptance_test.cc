/*
 * Copyright 2026 The Fedsim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsim/algorithms.h"
#include "fedsim/cli.h"
#include "fedsim/engine.h"
#include "fedsim/experiment.h"
#include "fedsim/latency.h"
#include "fedsim/metrics.h"
#include "fedsim/rng.h"
#include "fedsim/verify.h"
#include "gradient_check.h"
#include "json.hpp"
#include "test_support.h"

namespace fedsim {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char* format, double a, double b = 0.0, double c = 0.0,
                double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), format, a, b, c, d);
  return buf;
}

double Seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// ---------------------------------------------------------------------------

Outcome GradientCriterion() {
  const auto start = Clock::now();
  const testing::GradientCheckResult r = testing::RunGradientCheck(2026, 100);
  const double secs = Seconds(start);
  return {r.configs == 100 && r.max_rel_error <= 1e-6 && secs < 10.0,
          Fmt("100 configs, %.0f coordinates, max rel error %.3g, %.2f s",
              static_cast<double>(r.coordinates), r.max_rel_error, secs)};
}

Outcome Lemma1Criterion(const verify::QuadClientSet& set) {
  const auto start = Clock::now();
  const verify::FeastRunConfig run;  // B=2, B+=4, eta_a = eta_g, 50 rounds
  bool ok = run.fast == 2 && run.plus == 4 && run.eta_a == run.eta_g && run.rounds == 50;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const verify::FeastTrace tr = verify::RunFeastOnQuad(set, run, seed, true);
    const verify::CheckReport r =
        verify::CheckLemma1Recursion(tr.rounds, run.eta_g, run.beta, 1e-9);
    ok = ok && tr.rounds.size() == 50 && r.status == verify::Status::kPass;
    worst = std::max(worst, r.measured);
  }
  const double secs = Seconds(start);
  return {ok && secs < 30.0,
          Fmt("5 seeds x 50 rounds, worst rel mismatch %.3g (tol 1e-9), %.2f s", worst, secs)};
}

Outcome ZeroMeanCriterion(const verify::QuadClientSet& set) {
  const auto start = Clock::now();
  const verify::CheckReport r =
      verify::CheckZeroMeanGap(set, verify::FeastRunConfig{}, 200, 1000);
  const double secs = Seconds(start);
  return {r.status == verify::Status::kPass && r.measured >= r.bound && r.bound >= 0.99 &&
              secs < 120.0,
          Fmt("200 seeds, %.4f of coordinates within 3 SE (need %.2f), %.2f s", r.measured,
              r.bound, secs)};
}

Outcome Lemma3Criterion(const verify::QuadClientSet& set) {
  const auto start = Clock::now();
  const verify::CheckReport r =
      verify::CheckLemma3GapBound(set, verify::FeastRunConfig{}, 100, 2000);
  const double secs = Seconds(start);
  return {r.status == verify::Status::kPass && secs < 120.0,
          Fmt("100 seeds, worst E||a-w||^2 + 3SE %.4g vs bound %.4g, %.2f s",
              r.measured, r.bound, secs)};
}

Outcome Lemma2Criterion(const verify::QuadClientSet& set) {
  const auto start = Clock::now();
  const verify::CheckReport r = verify::CheckLemma2Variance(set, 100000, 3000);
  const double secs = Seconds(start);
  return {r.status == verify::Status::kPass && r.measured <= r.bound + 3.0 * r.se &&
              secs < 10.0,
          Fmt("1e5 draws, E||g||^2 %.4f vs sigma^2+G^2 %.4f (SE %.2g), %.2f s", r.measured,
              r.bound, r.se, secs)};
}

Outcome TheoremCriterion(const verify::QuadClientSet& set) {
  const auto start = Clock::now();
  const verify::CheckReport r = verify::CheckTheorem1(set, 2, 4, 5, {64, 256, 1024}, 4, 4000);
  const double secs = Seconds(start);
  double ratio = NAN;
  for (const auto& [k, v] : r.values) {
    if (k == "ratio_1024_over_64") ratio = v;
  }
  return {r.status == verify::Status::kPass && ratio <= 0.5,
          Fmt("T=1024 / T=64 squared-gradient ratio %.4f (need <= 0.5), worst value %.4g vs "
              "bound %.4g, %.2f s",
              ratio, r.measured, r.bound, secs)};
}

// ---------------------------------------------------------------------------

// Per-example latency only: straggler data, but no straggler latency profile.
ExperimentConfig NoStragglerConfig(const std::string& algorithm) {
  nlohmann::json j = {
      {"dataset",
       {{"m_clients", 80}, {"n_straggler_clients", 10}, {"eval_size", 200}, {"d_in", 8},
        {"seed", 5}}},
      {"latency", {{"mode", "pe"}}},
      {"budget", 500},
      {"eval_every", 1000},
      {"seed", 17},
      {"algo", {{"algorithm", algorithm}, {"cohort", 5}, {"over_selection_cohort", 7}}}};
  return ParseExperimentConfig(j.dump());
}

Outcome ReductionCriterion() {
  // FARe-DUST without distillation against FedAvg with over-selection.
  ExperimentConfig avg = NoStragglerConfig("fedavg");
  ExperimentConfig dust = NoStragglerConfig("fare_dust");
  dust.algo.rho = 0.0;
  dust.algo.eta_g = avg.algo.eta_g;
  dust.algo.eta_l = avg.algo.eta_l;
  dust.algo.server = avg.algo.server;
  const FederatedDataset dataset = BuildExperimentDataset(avg);
  RunOptions opts;
  opts.record_trajectory = true;
  const RunResult ra = RunExperiment(avg, dataset, avg.seed, opts);
  const RunResult rd = RunExperiment(dust, dataset, dust.seed, opts);
  bool ok = ra.trajectory.size() == 100 && rd.trajectory.size() == 100;
  double dust_gap = 0.0;
  for (std::size_t t = 0; ok && t < ra.trajectory.size(); ++t) {
    dust_gap = std::max(dust_gap, MaxAbsDiff(ra.trajectory[t], rd.trajectory[t]));
  }
  ok = ok && ra.total_time_s == rd.total_time_s && dust_gap <= 1e-12;

  // FeAST with B+ = B and eta_a = eta_g: the auxiliary model tracks the global one.
  ExperimentConfig feast = NoStragglerConfig("feast");
  feast.algo.over_selection_cohort = feast.algo.cohort;
  feast.algo.eta_a = feast.algo.eta_g;
  ShardPopulation population(dataset, MakeTrainSpec(feast));
  SimOptions sim_options;
  sim_options.seed = feast.seed;
  sim_options.budget = feast.budget;
  Simulation sim(population, feast.latency, sim_options);
  Stream init = Stream::Derive(feast.seed, Purpose::kInit);
  auto strategy =
      MakeStrategy(feast.algo, InitParams(ModelLayout(feast), feast.model.init_scale, init));
  double feast_gap = 0.0;
  std::size_t rounds = 0;
  dynamic_cast<FeastStrategy&>(*strategy).set_round_observer(
      [&](const FeastRoundLog& log) {
        feast_gap = std::max(feast_gap, MaxAbsDiff(log.a_next, log.w_next));
        ++rounds;
      });
  RunEventLoop(sim, *strategy);
  ok = ok && rounds == 100 && feast_gap <= 1e-12;
  return {ok, Fmt("FARe-DUST vs FedAvg+OS max gap %.3g over %.0f rounds; FeAST a vs w max gap "
                  "%.3g over %.0f rounds (tol 1e-12)",
                  dust_gap, static_cast<double>(ra.trajectory.size()), feast_gap,
                  static_cast<double>(rounds))};
}

// ---------------------------------------------------------------------------

double ConstantTotal(const LatencyScenario& s, bool straggler, std::size_t n) {
  const LatencyProfile& p = s.ProfileFor(straggler);
  return ComposeLatency(std::exp(p.comm.mu), std::exp(p.per_example.mu),
                        std::exp(p.overhead.mu), n)
      .total_s;
}

// Synchronous rounds on a sigma = 0 scenario: each round must end exactly at
// the fast-cohort-th smallest of the brute-force client totals.
bool DurationOracle(std::size_t fast, std::size_t sampled, std::size_t* checked) {
  const std::size_t n = 50;
  std::vector<std::size_t> examples(n);
  std::vector<bool> straggler(n);
  for (std::size_t i = 0; i < n; ++i) {
    examples[i] = 4 + (i * 13) % 29;
    straggler[i] = i % 5 == 0;
  }
  testing::FakePopulation pop(examples, straggler);
  LatencyScenario s = LatencyScenario::PerDomainPerExample();
  for (LatencyProfile* p : {&s.standard, &s.straggler}) {
    p->comm.sigma = p->per_example.sigma = p->overhead.sigma = 0.0;
  }
  SimOptions opt;
  opt.seed = 9;
  opt.budget = 20 * fast;
  Simulation sim(pop, s, opt);
  AlgoConfig cfg = AlgoConfig::Defaults(Algorithm::kFedAvg);
  cfg.cohort = fast;
  cfg.over_selection_cohort = sampled;
  auto base = MakeStrategy(cfg, testing::FlatVector({0.0, 0.0}));
  auto& sync = dynamic_cast<SyncStrategy&>(*base);
  const double end = RunEventLoop(sim, sync);
  bool ok = sync.rounds().size() == 20;
  double sum = 0.0;
  for (const auto& round : sync.rounds()) {
    std::vector<double> totals;
    for (ClientId id : round.cohort) {
      totals.push_back(ConstantTotal(s, straggler[id], examples[id]));
    }
    std::sort(totals.begin(), totals.end());
    ok = ok && round.cohort.size() == sampled &&
         round.aggregated_at == round.started_at + totals[fast - 1];
    sum += totals[fast - 1];
    ++*checked;
  }
  return ok && std::abs(end - sum) <= 1e-9 * sum;
}

Outcome LatencyCriterion() {
  std::size_t rounds = 0;
  bool ok = DurationOracle(6, 6, &rounds) && DurationOracle(5, 8, &rounds);

  struct Factor {
    const char* name;
    LognormalParams params;
  };
  const LatencyScenario pe = LatencyScenario::PerExample();
  const LatencyScenario pdpe = LatencyScenario::PerDomainPerExample();
  const std::vector<Factor> factors = {
      {"pe comm", pe.standard.comm},
      {"pe per_example", pe.standard.per_example},
      {"pe overhead", pe.standard.overhead},
      {"pdpe standard comm", pdpe.standard.comm},
      {"pdpe standard per_example", pdpe.standard.per_example},
      {"pdpe standard overhead", pdpe.standard.overhead},
      {"pdpe straggler comm", pdpe.straggler.comm},
      {"pdpe straggler per_example", pdpe.straggler.per_example},
      {"pdpe straggler overhead", pdpe.straggler.overhead},
  };
  double worst = 0.0;
  std::vector<double> draws(1000000);
  for (std::size_t k = 0; k < factors.size(); ++k) {
    Stream rng = Stream::Derive(77, Purpose::kLatencyReport, k);
    for (double& d : draws) d = SampleLognormal(factors[k].params, rng);
    auto mid = draws.begin() + static_cast<std::ptrdiff_t>(draws.size() / 2);
    std::nth_element(draws.begin(), mid, draws.end());
    const double target = std::exp(factors[k].params.mu);
    const double rel = std::abs(*mid - target) / target;
    if (rel > 0.01) {
      std::cout << "  " << factors[k].name << " median " << *mid << " vs " << target << "\n";
      ok = false;
    }
    worst = std::max(worst, rel);
  }
  return {ok, Fmt("%.0f sigma=0 rounds match the order-statistic oracle; worst median "
                  "deviation %.4f over 9 factors x 1e6 draws (tol 0.01)",
                  static_cast<double>(rounds), worst)};
}

// ---------------------------------------------------------------------------

struct ArmResult {
  std::string label;
  TrialSummary summary;
};

ArmResult RunArm(const fs::path& path) {
  ExperimentConfig config = LoadExperimentConfig(path.string());
  const FederatedDataset dataset = BuildExperimentDataset(config);
  std::vector<std::vector<MetricsRecord>> runs;
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    runs.push_back(RunExperiment(config, dataset, seed).records);
  }
  ArmResult r{config.label, SummarizeTrials(runs)};
  const TrialSummary& s = r.summary;
  std::printf("  %-10s straggler %.3f [%.3f, %.3f]  total %.3f  time %.0f s\n",
              r.label.c_str(), s.straggler_acc.median, s.straggler_acc.lo,
              s.straggler_acc.hi, s.total_acc.median, s.total_time_s_median);
  std::fflush(stdout);
  return r;
}

Outcome ReplicationCriterion(const fs::path& dir) {
  const auto start = Clock::now();
  const ArmResult avg = RunArm(dir / "fedavg.json");
  const ArmResult os = RunArm(dir / "fedavg_os.json");
  const ArmResult dust = RunArm(dir / "fare_dust.json");
  const ArmResult feast = RunArm(dir / "feast.json");
  const double secs = Seconds(start);

  const double drop = avg.summary.straggler_acc.median - os.summary.straggler_acc.median;
  const bool a = drop >= 0.05;
  auto beats_os = [&](const ArmResult& x) {
    return x.summary.straggler_acc.median - os.summary.straggler_acc.median >= 0.10 &&
           x.summary.straggler_acc.lo > os.summary.straggler_acc.hi;
  };
  const bool b = beats_os(dust) && beats_os(feast);
  const double limit = 0.5 * avg.summary.total_time_s_median;
  const bool c = dust.summary.total_time_s_median <= limit &&
                 feast.summary.total_time_s_median <= limit;
  std::ostringstream os_detail;
  os_detail << "(a) " << (a ? "ok" : "no") << " OS drop " << Fmt("%.1f", 100 * drop)
            << " pts; (b) " << (b ? "ok" : "no") << " gains FARe-DUST "
            << Fmt("%.1f", 100 * (dust.summary.straggler_acc.median -
                                  os.summary.straggler_acc.median))
            << ", FeAST "
            << Fmt("%.1f", 100 * (feast.summary.straggler_acc.median -
                                  os.summary.straggler_acc.median))
            << " pts; (c) " << (c ? "ok" : "no") << " time ratios "
            << Fmt("%.3f / %.3f",
                   dust.summary.total_time_s_median / avg.summary.total_time_s_median,
                   feast.summary.total_time_s_median / avg.summary.total_time_s_median)
            << "; " << Fmt("%.0f s", secs);
  return {a && b && c, os_detail.str()};
}

// ---------------------------------------------------------------------------

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome DeterminismCriterion(const fs::path& dir) {
  const fs::path scratch = fs::temp_directory_path() / "fedsim_acceptance_determinism";
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  // The FeAST arm exercises over-selection, deadlines and the auxiliary model.
  std::ifstream in(dir / "feast.json");
  nlohmann::json cfg = nlohmann::json::parse(in);
  cfg["budget"] = 600;
  cfg.erase("out");
  std::ofstream(scratch / "cfg.json") << cfg.dump(2);

  auto simulate = [&](const std::string& stem, const std::string& jobs) {
    const std::string cfg_path = (scratch / "cfg.json").string();
    const std::string out_path = (scratch / (stem + ".jsonl")).string();
    const char* argv[] = {"fedsim", "simulate", "--config", cfg_path.c_str(), "--trials", "3",
                          "--jobs", jobs.c_str(), "--out", out_path.c_str()};
    std::ostringstream out, err;
    return RunCli(static_cast<int>(std::size(argv)), argv, out, err) == 0;
  };
  bool ok = simulate("a", "1") && simulate("b", "1") && simulate("c", "4");
  std::size_t compared = 0;
  for (int seed = 100; ok && seed < 103; ++seed) {
    const std::string tail = "_seed" + std::to_string(seed) + ".jsonl";
    const std::string a = Slurp(scratch / ("a" + tail));
    ok = !a.empty() && a == Slurp(scratch / ("b" + tail)) && a == Slurp(scratch / ("c" + tail));
    ++compared;
  }
  ok = ok && Slurp(scratch / "a.manifest.json").size() > 0;
  fs::remove_all(scratch);
  return {ok, Fmt("%.0f trial files identical across a rerun and --jobs 1 vs 4",
                  static_cast<double>(compared))};
}

}  // namespace
}  // namespace fedsim

int main(int argc, char** argv) {
  using namespace fedsim;
  CLI::App app{"Acceptance criteria"};
  std::string configs = "configs/acceptance";
  std::vector<int> only;
  app.add_option("--configs", configs, "Directory with the replication configs");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const verify::QuadClientSet quad(verify::QuadConfig{});
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", [] { return GradientCriterion(); }},
      {"lemma1 recursion", [&] { return Lemma1Criterion(quad); }},
      {"zero-mean gap", [&] { return ZeroMeanCriterion(quad); }},
      {"lemma3 gap bound", [&] { return Lemma3Criterion(quad); }},
      {"lemma2 variance bound", [&] { return Lemma2Criterion(quad); }},
      {"theorem1 trend", [&] { return TheoremCriterion(quad); }},
      {"reduction equivalences", [] { return ReductionCriterion(); }},
      {"latency fidelity", [] { return LatencyCriterion(); }},
      {"directional replication", [&] { return ReplicationCriterion(configs); }},
      {"determinism", [&] { return DeterminismCriterion(configs); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%s: %d failed\n", failed == 0 ? "ALL PASS" : "FAILURES", failed);
  return failed == 0 ? 0 : 1;
}
