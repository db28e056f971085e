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

#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include "doctest.h"
#include "fedsim/algorithms.h"
#include "fedsim/error.h"
#include "test_support.h"

namespace fedsim {
namespace {

using testing::FakePopulation;
using testing::FixedScenario;
using testing::FlatVector;

struct Outcome {
  std::unique_ptr<StrategyBase> strategy;
  std::uint64_t server_steps = 0;
  std::uint64_t aggregated = 0;
  double end = 0.0;
};

Outcome Run(const ClientPopulation& pop, const LatencyScenario& scenario,
            const AlgoConfig& cfg, std::uint64_t budget, std::uint64_t seed = 5,
            std::function<void(StrategyBase&)> setup = {}) {
  SimOptions opt;
  opt.seed = seed;
  opt.budget = budget;
  Simulation sim(pop, scenario, opt);
  Outcome out;
  out.strategy = MakeStrategy(cfg, FlatVector({0.5, -0.25, 1.0}));
  out.strategy->set_record_trajectory(true);
  if (setup) setup(*out.strategy);
  out.end = RunEventLoop(sim, *out.strategy);
  out.server_steps = sim.server_steps();
  out.aggregated = sim.aggregated_updates();
  return out;
}

double TrajectoryGap(const std::vector<ParamVector>& a, const std::vector<ParamVector>& b) {
  REQUIRE(a.size() == b.size());
  double gap = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) gap = std::max(gap, MaxAbsDiff(a[i], b[i]));
  return gap;
}

std::vector<std::size_t> Varied(std::size_t n) {
  std::vector<std::size_t> ex(n);
  for (std::size_t i = 0; i < n; ++i) ex[i] = 3 + (i * 11) % 17;
  return ex;
}

TEST_CASE("algorithm names round trip") {
  for (Algorithm a : {Algorithm::kFedAvg, Algorithm::kFedAdam, Algorithm::kFedBuff,
                      Algorithm::kFareDust, Algorithm::kFeast}) {
    CHECK(ParseAlgorithm(AlgorithmName(a)) == a);
  }
  CHECK_THROWS_AS(ParseAlgorithm("fedsgd"), ConfigError);
}

TEST_CASE("default tuning values") {
  const AlgoConfig avg = AlgoConfig::Defaults(Algorithm::kFedAvg);
  CHECK(avg.eta_l == 0.1);
  CHECK(avg.eta_g == 1.0);
  CHECK(avg.cohort == 50);
  CHECK(avg.server.kind == ServerOptimizerKind::kSgd);

  const AlgoConfig adam = AlgoConfig::Defaults(Algorithm::kFedAdam);
  CHECK(adam.eta_l == 0.03);
  CHECK(adam.eta_g == 0.003);
  CHECK(adam.server.kind == ServerOptimizerKind::kAdam);
  CHECK(adam.server.beta1 == 0.9);
  CHECK(adam.server.beta2 == 0.99);
  CHECK(adam.server.epsilon == 1e-4);

  const AlgoConfig buff = AlgoConfig::Defaults(Algorithm::kFedBuff);
  CHECK(buff.eta_l == 0.01);
  CHECK(buff.eta_g == 1.0);
  CHECK(buff.buffer == 20);
  CHECK(buff.concurrency == 200);
  CHECK(buff.UpdatesPerStep() == 20);

  const AlgoConfig dust = AlgoConfig::Defaults(Algorithm::kFareDust);
  CHECK(dust.teachers == 50);
  CHECK(dust.beta == 0.99);
  CHECK(dust.rho == 0.1);
  CHECK(dust.ema);
  CHECK(dust.over_selection_cohort == 60);

  const AlgoConfig feast = AlgoConfig::Defaults(Algorithm::kFeast);
  CHECK(feast.eta_g == 0.006);
  CHECK(feast.beta == 0.99);
  CHECK(feast.eta_a == doctest::Approx(0.9 * 0.006));
  CHECK(feast.tau_max == 100000.0);
  CHECK(feast.over_selection_cohort == 60);
  CHECK(feast.UpdatesPerStep() == 50);
}

TEST_CASE("config validation") {
  AlgoConfig c = AlgoConfig::Defaults(Algorithm::kFedAvg);
  c.eta_g = 0.0;
  CHECK_THROWS_AS(c.Validate(), InvalidParameter);
  c = AlgoConfig::Defaults(Algorithm::kFedAvg);
  c.over_selection_cohort = 10;
  CHECK_THROWS_AS(c.Validate(), InvalidParameter);
  c = AlgoConfig::Defaults(Algorithm::kFedBuff);
  c.concurrency = 5;
  CHECK_THROWS_AS(c.Validate(), InvalidParameter);
  c = AlgoConfig::Defaults(Algorithm::kFareDust);
  c.teachers = 0;
  CHECK_THROWS_AS(c.Validate(), InvalidParameter);
  c = AlgoConfig::Defaults(Algorithm::kFeast);
  c.eta_a = 2.0 * c.eta_g;
  CHECK_THROWS_AS(c.Validate(), InvalidParameter);
  c = AlgoConfig::Defaults(Algorithm::kFeast);
  c.beta = 1.0;
  CHECK_THROWS_AS(c.Validate(), InvalidParameter);
  c = AlgoConfig::Defaults(Algorithm::kFeast);
  c.ema = true;
  CHECK_THROWS_AS(MakeStrategy(c, FlatVector({0.0})), InvalidParameter);
}

TEST_CASE("SGD server step is a centralized step") {
  ServerState s(FlatVector({1.0, 2.0}));
  const ParamVector g = FlatVector({0.3, -0.4});
  ParamVector delta = g;
  for (double& v : delta.values) v *= 0.1;  // one local step with eta_l = 0.1
  ServerApply(s, delta, 1, 1.0, ServerOptimizer{});
  CHECK(s.w[0] == 1.0 - 0.1 * 0.3);
  CHECK(s.w[1] == 2.0 + 0.1 * 0.4);
  CHECK(s.t == 1);

  const ParamVector before = s.w;
  ServerApply(s, FlatVector({0.0, 0.0}), 3, 1.0, ServerOptimizer{});
  CHECK(s.w == before);
  ServerOptimizer adam;
  adam.kind = ServerOptimizerKind::kAdam;
  ServerApply(s, FlatVector({0.0, 0.0}), 3, 0.5, adam);
  CHECK(s.w == before);

  CHECK_THROWS_AS(ServerApply(s, FlatVector({1.0, 1.0}), 0, 1.0, ServerOptimizer{}),
                  InvalidParameter);
  CHECK_THROWS_AS(ServerApply(s, FlatVector({1.0}), 1, 1.0, ServerOptimizer{}),
                  InvalidParameter);
}

TEST_CASE("Adam server matches a scalar oracle") {
  ServerOptimizer adam{ServerOptimizerKind::kAdam, 0.9, 0.99, 1e-4};
  ServerState s(FlatVector({0.1, -0.2, 0.3}));
  const double deltas[5][3] = {{0.5, -1.0, 0.2},
                               {0.4, 0.3, -0.1},
                               {-0.2, 0.1, 0.0},
                               {1.5, -0.7, 0.9},
                               {0.05, 0.05, -2.0}};
  double w[3] = {0.1, -0.2, 0.3};
  double m[3] = {0, 0, 0};
  double v[3] = {0, 0, 0};
  for (const auto& d : deltas) {
    ServerApply(s, FlatVector({d[0], d[1], d[2]}), 2, 0.01, adam);
    for (int i = 0; i < 3; ++i) {
      const double g = d[i] / 2.0;
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.99 * v[i] + 0.01 * g * g;
      w[i] -= 0.01 * m[i] / (std::sqrt(v[i]) + 1e-4);
    }
  }
  for (int i = 0; i < 3; ++i) CHECK(std::abs(s.w[i] - w[i]) <= 1e-12);
  CHECK(s.t == 5);
}

TEST_CASE("EMA recurrence") {
  std::optional<ParamVector> ema;
  EmaUpdate(ema, FlatVector({4.0}), 0.5);
  EmaUpdate(ema, FlatVector({8.0}), 0.5);
  EmaUpdate(ema, FlatVector({16.0}), 0.5);
  CHECK(ema->values[0] == 0.25 * 4.0 + 0.25 * 8.0 + 0.5 * 16.0);

  std::optional<ParamVector> zero_decay;
  EmaUpdate(zero_decay, FlatVector({1.0}), 0.0);
  EmaUpdate(zero_decay, FlatVector({3.0}), 0.0);
  CHECK(zero_decay->values[0] == 3.0);

  std::optional<ParamVector> constant;
  for (int i = 0; i < 20; ++i) EmaUpdate(constant, FlatVector({0.7, -1.3}), 0.9);
  CHECK(constant->values == std::vector<double>{0.7, -1.3});
}

TEST_CASE("one FedAvg round when the budget equals the cohort") {
  FakePopulation pop(20);
  AlgoConfig cfg = AlgoConfig::Defaults(Algorithm::kFedAvg);
  cfg.cohort = cfg.over_selection_cohort = 5;
  const Outcome o = Run(pop, FixedScenario(), cfg, 5);
  CHECK(o.server_steps == 1);
  CHECK(o.aggregated == 5);
}

TEST_CASE("FedBuff with one slot is FedAvg with one client") {
  FakePopulation pop(Varied(15), std::vector<bool>(15, false));
  AlgoConfig avg = AlgoConfig::Defaults(Algorithm::kFedAvg);
  avg.cohort = avg.over_selection_cohort = 1;
  AlgoConfig buff = AlgoConfig::Defaults(Algorithm::kFedBuff);
  buff.buffer = buff.concurrency = 1;
  buff.eta_g = avg.eta_g;
  const Outcome a = Run(pop, LatencyScenario::PerExample(), avg, 40);
  const Outcome b = Run(pop, LatencyScenario::PerExample(), buff, 40);
  CHECK(a.strategy->trajectory().size() == 40);
  CHECK(TrajectoryGap(a.strategy->trajectory(), b.strategy->trajectory()) <= 1e-12);
  CHECK(a.end == b.end);
}

TEST_CASE("FedBuff in lockstep reproduces synchronous rounds") {
  FakePopulation pop(12);  // equal sizes, deterministic latency
  AlgoConfig avg = AlgoConfig::Defaults(Algorithm::kFedAvg);
  avg.cohort = avg.over_selection_cohort = 4;
  AlgoConfig buff = AlgoConfig::Defaults(Algorithm::kFedBuff);
  buff.buffer = buff.concurrency = 4;
  buff.eta_g = 1.0;
  const Outcome a = Run(pop, FixedScenario(), avg, 80);
  const Outcome b = Run(pop, FixedScenario(), buff, 80);
  CHECK(a.strategy->trajectory() == b.strategy->trajectory());
  CHECK(dynamic_cast<FedBuffStrategy&>(*b.strategy).max_staleness() == 0);
}

TEST_CASE("FedBuff staleness stays causal") {
  FakePopulation pop(Varied(40), std::vector<bool>(40, false));
  AlgoConfig buff = AlgoConfig::Defaults(Algorithm::kFedBuff);
  buff.buffer = 3;
  buff.concurrency = 10;
  const Outcome o = Run(pop, LatencyScenario::PerExample(), buff, 60);
  CHECK(o.aggregated == 60);
  CHECK(o.server_steps == 20);
  CHECK(dynamic_cast<FedBuffStrategy&>(*o.strategy).max_staleness() > 0);
}

TEST_CASE("EMA output for synchronous training") {
  FakePopulation pop(10);
  AlgoConfig cfg = AlgoConfig::Defaults(Algorithm::kFedAvg);
  cfg.cohort = cfg.over_selection_cohort = 2;
  cfg.ema = true;
  cfg.beta = 0.5;
  const Outcome o = Run(pop, FixedScenario(), cfg, 10);
  CHECK(o.strategy->OutputKind() == ModelKind::kEma);
  std::optional<ParamVector> oracle;
  for (const ParamVector& w : o.strategy->trajectory()) EmaUpdate(oracle, w, 0.5);
  CHECK(o.strategy->OutputModel() == *oracle);
}

TEST_CASE("FARe-DUST without distillation follows FedAvg with over-selection") {
  FakePopulation pop(Varied(30), std::vector<bool>(30, false));
  AlgoConfig avg = AlgoConfig::Defaults(Algorithm::kFedAvg);
  avg.cohort = 3;
  avg.over_selection_cohort = 5;
  AlgoConfig dust = AlgoConfig::Defaults(Algorithm::kFareDust);
  dust.cohort = 3;
  dust.over_selection_cohort = 5;
  dust.rho = 0.0;
  dust.eta_g = avg.eta_g;
  dust.server = avg.server;
  const Outcome a = Run(pop, LatencyScenario::PerExample(), avg, 300);
  const Outcome b = Run(pop, LatencyScenario::PerExample(), dust, 300);
  CHECK(a.strategy->trajectory().size() == 100);
  CHECK(TrajectoryGap(a.strategy->trajectory(), b.strategy->trajectory()) <= 1e-12);
  CHECK(b.strategy->OutputKind() == ModelKind::kEma);
}

TEST_CASE("teacher construction") {
  const ParamVector w = FlatVector({1.0, -2.0, 0.5});
  DeltaHistoryEntry zero{0, FlatVector({0.0, 0.0, 0.0}), 3};
  CHECK(FareDustStrategy::BuildTeacher(w, zero, 0.7) == w);
  DeltaHistoryEntry e{0, FlatVector({0.4, 1.0, -3.0}), 2};
  CHECK(FareDustStrategy::BuildTeacher(w, e, 1.0).values ==
        std::vector<double>{0.8, -2.5, 2.0});
}

class ExposedFareDust : public FareDustStrategy {
 public:
  using FareDustStrategy::FareDustStrategy;
  using FareDustStrategy::MakeOrders;
};

TEST_CASE("empty history teacher policy") {
  FakePopulation pop(4);
  Simulation sim(pop, FixedScenario(), SimOptions{});
  auto start = std::make_shared<const ParamVector>(FlatVector({1.0}));
  AlgoConfig cfg = AlgoConfig::Defaults(Algorithm::kFareDust);
  cfg.cohort = 2;
  cfg.over_selection_cohort = 3;

  ExposedFareDust current(cfg, FlatVector({1.0}));
  for (const DispatchOrder& o : current.MakeOrders(sim, 0, {0, 1, 2}, start)) {
    CHECK(o.request.teacher == start);
    CHECK(o.request.rho == cfg.rho);
    CHECK_FALSE(o.extra_download);  // the teacher is the start model itself
  }
  cfg.empty_history = EmptyHistoryTeacher::kNoDistill;
  ExposedFareDust none(cfg, FlatVector({1.0}));
  for (const DispatchOrder& o : none.MakeOrders(sim, 0, {0, 1, 2}, start)) {
    CHECK(o.request.teacher == nullptr);
    CHECK(o.request.rho == 0.0);
    CHECK_FALSE(o.extra_download);
  }
}

TEST_CASE("history keeps the newest k rounds and folds late deltas") {
  FakePopulation pop(Varied(30), std::vector<bool>(30, false));
  AlgoConfig dust = AlgoConfig::Defaults(Algorithm::kFareDust);
  dust.cohort = 2;
  dust.over_selection_cohort = 4;
  dust.teachers = 3;
  const Outcome o = Run(pop, LatencyScenario::PerExample(), dust, 40);
  const auto& hist = dynamic_cast<FareDustStrategy&>(*o.strategy).history();
  REQUIRE(hist.size() == 3);
  CHECK(hist[0].origin_round == 17);
  CHECK(hist[2].origin_round == 19);
  bool folded = false;
  for (const auto& e : hist) {
    CHECK(e.contributor_count >= 2);
    CHECK(e.contributor_count <= 4);
    folded = folded || e.contributor_count > 2;
  }
  CHECK(folded);
}

TEST_CASE("FeAST with no stragglers keeps the auxiliary model on the global one") {
  FakePopulation pop(Varied(30), std::vector<bool>(30, false));
  AlgoConfig cfg = AlgoConfig::Defaults(Algorithm::kFeast);
  cfg.cohort = cfg.over_selection_cohort = 3;
  cfg.eta_g = 1.0;
  cfg.eta_a = 1.0;
  cfg.beta = 0.9;
  double worst = 0.0;
  std::size_t rounds = 0;
  const Outcome o = Run(pop, LatencyScenario::PerExample(), cfg, 300, 5,
                        [&](StrategyBase& s) {
                          dynamic_cast<FeastStrategy&>(s).set_round_observer(
                              [&](const FeastRoundLog& log) {
                                worst = std::max(worst, MaxAbsDiff(log.a_next, log.w_next));
                                ++rounds;
                              });
                        });
  CHECK(rounds == 100);
  CHECK(worst <= 1e-12);
  CHECK(o.strategy->OutputKind() == ModelKind::kAux);
}

TEST_CASE("FeAST with zero auxiliary rate is an EMA of the global models") {
  FakePopulation pop(Varied(20), std::vector<bool>(20, false));
  AlgoConfig cfg = AlgoConfig::Defaults(Algorithm::kFeast);
  cfg.cohort = cfg.over_selection_cohort = 2;
  cfg.eta_g = 0.8;
  cfg.eta_a = 0.0;
  cfg.beta = 0.7;
  const Outcome o = Run(pop, LatencyScenario::PerExample(), cfg, 40);
  ParamVector a = FlatVector({0.5, -0.25, 1.0});
  for (const ParamVector& w : o.strategy->trajectory()) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.7 * a[i] + 0.3 * w[i];
  }
  CHECK(MaxAbsDiff(a, o.strategy->OutputModel()) <= 1e-14);
}

TEST_CASE("FeAST auxiliary update on a hand-worked two-round example") {
  // Client 0 is always fast, client 1 always late.
  FakePopulation pop({10, 20}, {false, true});
  AlgoConfig cfg = AlgoConfig::Defaults(Algorithm::kFeast);
  cfg.cohort = 1;
  cfg.over_selection_cohort = 2;
  cfg.eta_g = 1.0;
  cfg.eta_a = 1.0;
  cfg.beta = 0.5;
  cfg.tau_max = std::numeric_limits<double>::infinity();
  cfg.strict_sequential = true;
  const std::uint64_t seed = 9;
  const Outcome o = Run(pop, FixedScenario(), cfg, 2, seed);

  // Client delta for (client, round), rebuilt from the fake's definition.
  auto delta = [&](std::size_t id, std::uint64_t round) {
    Stream rng = Stream::Derive(seed, Purpose::kTraining, id, round);
    std::vector<double> d(3);
    for (std::size_t j = 0; j < 3; ++j) {
      d[j] = 1e-3 * static_cast<double>((id + 1) * (j + 1)) + 1e-3 * rng.Uniform();
    }
    return d;
  };
  const std::vector<double> w0{0.5, -0.25, 1.0};
  std::vector<double> w1(3), a1(3), a2(3);
  const auto f0 = delta(0, 0), s0 = delta(1, 0), f1 = delta(0, 1), s1 = delta(1, 1);
  for (int j = 0; j < 3; ++j) {
    w1[j] = w0[j] - f0[j];
    const double plus0 = f0[j] + s0[j];
    a1[j] = 0.5 * (w0[j] - plus0 / 2) + 0.5 * (w0[j] - plus0 / 2);
    const double plus1 = f1[j] + s1[j];
    a2[j] = 0.5 * (a1[j] - plus1 / 2) + 0.5 * (w1[j] - plus1 / 2);
  }
  const ParamVector& aux = o.strategy->OutputModel();
  for (int j = 0; j < 3; ++j) CHECK(std::abs(aux[j] - a2[j]) <= 1e-14);
  const ParamVector& w = o.strategy->state().w;
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(w[j] - (w1[j] - f1[j])) <= 1e-14);
  }
}

TEST_CASE("FeAST deadline drops late deltas") {
  FakePopulation pop(Varied(20), std::vector<bool>(20, false));
  AlgoConfig cfg = AlgoConfig::Defaults(Algorithm::kFeast);
  cfg.cohort = 1;
  cfg.over_selection_cohort = 3;
  cfg.tau_max = 0.0;
  std::size_t extra = 0;
  const Outcome o = Run(pop, LatencyScenario::PerExample(), cfg, 20, 5,
                        [&](StrategyBase& s) {
                          dynamic_cast<FeastStrategy&>(s).set_round_observer(
                              [&](const FeastRoundLog& log) {
                                extra += log.plus_count - log.fast_count;
                              });
                        });
  CHECK(extra == 0);
  CHECK(o.strategy->DiscardedUpdates() > 0);
  auto& feast = dynamic_cast<FeastStrategy&>(*o.strategy);
  CHECK(feast.pending_rounds() == 0);
  CHECK(feast.next_aux_round() == 20);
}

TEST_CASE("FeAST refuses out-of-order auxiliary updates") {
  FeastStrategy s(AlgoConfig::Defaults(Algorithm::kFeast), FlatVector({0.0}));
  CHECK_THROWS_AS(s.ApplyAux(3), SimulationError);
  CHECK_THROWS_AS(s.ApplyAux(0), SimulationError);  // nothing pending yet
}

TEST_CASE("strategy runs are reproducible") {
  FakePopulation pop(Varied(25), std::vector<bool>(25, false));
  for (Algorithm alg : {Algorithm::kFedAvg, Algorithm::kFedAdam, Algorithm::kFedBuff,
                        Algorithm::kFareDust, Algorithm::kFeast}) {
    AlgoConfig cfg = AlgoConfig::Defaults(alg);
    cfg.cohort = 3;
    cfg.over_selection_cohort = 4;
    cfg.buffer = 3;
    cfg.concurrency = 6;
    cfg.teachers = 2;
    cfg.rho = 0.2;
    CAPTURE(AlgorithmName(alg));
    const Outcome a = Run(pop, LatencyScenario::PerDomainPerExample(), cfg, 30);
    const Outcome b = Run(pop, LatencyScenario::PerDomainPerExample(), cfg, 30);
    CHECK(a.strategy->OutputModel() == b.strategy->OutputModel());
    CHECK(a.end == b.end);
    CHECK(a.aggregated == 30);
  }
}

}  // namespace
}  // namespace fedsim
