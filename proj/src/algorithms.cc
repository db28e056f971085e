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

#include "fedsim/algorithms.h"

#include <cmath>
#include <string>
#include <utility>

#include "fedsim/error.h"
#include "fedsim/rng.h"

namespace fedsim {

const char* AlgorithmName(Algorithm a) {
  switch (a) {
    case Algorithm::kFedAvg:
      return "fedavg";
    case Algorithm::kFedAdam:
      return "fedadam";
    case Algorithm::kFedBuff:
      return "fedbuff";
    case Algorithm::kFareDust:
      return "fare_dust";
    case Algorithm::kFeast:
      return "feast";
  }
  return "unknown";
}

Algorithm ParseAlgorithm(const std::string& name) {
  for (Algorithm a : {Algorithm::kFedAvg, Algorithm::kFedAdam, Algorithm::kFedBuff,
                      Algorithm::kFareDust, Algorithm::kFeast}) {
    if (name == AlgorithmName(a)) return a;
  }
  throw ConfigError("unknown algorithm '" + name +
                    "' (expected fedavg, fedadam, fedbuff, fare_dust or feast)");
}

AlgoConfig AlgoConfig::Defaults(Algorithm algorithm) {
  AlgoConfig c;
  c.algorithm = algorithm;
  switch (algorithm) {
    case Algorithm::kFedAvg:
      break;
    case Algorithm::kFedAdam:
      c.eta_l = 0.03;
      c.eta_g = 0.003;
      c.server.kind = ServerOptimizerKind::kAdam;
      break;
    case Algorithm::kFedBuff:
      c.eta_l = 0.01;
      c.eta_g = 1.0;
      c.buffer = 20;
      c.concurrency = 200;
      c.beta = 0.99;
      break;
    case Algorithm::kFareDust:
      c.over_selection_cohort = 60;
      c.teachers = 50;
      c.beta = 0.99;
      c.rho = 0.1;
      c.ema = true;
      // Adam server with the FedAdam defaults.
      c.eta_l = 0.03;
      c.eta_g = 0.003;
      c.server.kind = ServerOptimizerKind::kAdam;
      break;
    case Algorithm::kFeast:
      c.over_selection_cohort = 60;
      c.eta_g = 0.006;
      c.eta_a = 0.9 * 0.006;
      c.beta = 0.99;
      c.tau_max = 100000.0;
      break;
  }
  return c;
}

void AlgoConfig::Validate() const {
  auto fail = [](const std::string& msg) { throw InvalidParameter(msg); };
  if (!(eta_g > 0.0) || !std::isfinite(eta_g)) fail("eta_g must be positive");
  if (!(eta_l >= 0.0) || !std::isfinite(eta_l)) fail("eta_l must be non-negative");
  if (!(rho >= 0.0) || !std::isfinite(rho)) fail("rho must be non-negative");
  if (!(nu >= 0.0) || !std::isfinite(nu)) fail("nu must be non-negative");
  if (!(beta >= 0.0 && beta < 1.0)) fail("beta must lie in [0, 1)");
  if (server.kind == ServerOptimizerKind::kAdam) {
    if (!(server.beta1 >= 0.0 && server.beta1 < 1.0)) fail("adam beta1 must lie in [0, 1)");
    if (!(server.beta2 >= 0.0 && server.beta2 < 1.0)) fail("adam beta2 must lie in [0, 1)");
    if (!(server.epsilon > 0.0)) fail("adam epsilon must be positive");
  }
  if (algorithm == Algorithm::kFedBuff) {
    if (buffer < 1) fail("buffer must be at least 1");
    if (concurrency < buffer) fail("concurrency must be at least the buffer size");
  } else {
    if (cohort < 1) fail("cohort must be at least 1");
    if (over_selection_cohort < cohort) {
      fail("over_selection_cohort (" + std::to_string(over_selection_cohort) +
           ") is smaller than cohort (" + std::to_string(cohort) + ")");
    }
  }
  if (algorithm == Algorithm::kFareDust && teachers < 1) fail("teachers must be at least 1");
  if (algorithm == Algorithm::kFeast) {
    if (!(tau_max >= 0.0)) fail("tau_max must be non-negative");
    if (!(eta_a >= 0.0 && eta_a <= eta_g)) fail("eta_a must lie in [0, eta_g]");
  }
}

std::size_t AlgoConfig::UpdatesPerStep() const {
  return algorithm == Algorithm::kFedBuff ? buffer : cohort;
}

ServerState::ServerState(ParamVector w0) : w(std::move(w0)) {}

void ServerApply(ServerState& state, const ParamVector& summed_delta, std::size_t count,
                 double eta_g, const ServerOptimizer& opt) {
  if (count == 0) throw InvalidParameter("server update with zero contributors");
  if (summed_delta.size() != state.w.size()) {
    throw InvalidParameter("delta has " + std::to_string(summed_delta.size()) +
                           " entries, model has " + std::to_string(state.w.size()));
  }
  const double inv = 1.0 / static_cast<double>(count);
  if (opt.kind == ServerOptimizerKind::kSgd) {
    const double scale = eta_g * inv;
    for (std::size_t i = 0; i < state.w.size(); ++i) state.w[i] -= scale * summed_delta[i];
  } else {
    if (state.m.empty()) {
      state.m.assign(state.w.size(), 0.0);
      state.v.assign(state.w.size(), 0.0);
    }
    for (std::size_t i = 0; i < state.w.size(); ++i) {
      const double g = summed_delta[i] * inv;
      state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
      state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
      state.w[i] -= eta_g * state.m[i] / (std::sqrt(state.v[i]) + opt.epsilon);
    }
  }
  ++state.t;
  state.w.CheckFinite("global model");
}

void EmaUpdate(std::optional<ParamVector>& ema, const ParamVector& w, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw InvalidParameter("EMA beta must lie in [0, 1)");
  if (!ema) {
    ema = w;
    return;
  }
  if (ema->size() != w.size()) throw InvalidParameter("EMA size mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) {
    (*ema)[i] = beta * (*ema)[i] + (1.0 - beta) * w[i];
  }
}

// ---------------------------------------------------------------------------

StrategyBase::StrategyBase(const AlgoConfig& config, ParamVector w0)
    : config_(config), state_(std::move(w0)) {
  config_.Validate();
  state_.w.CheckFinite("initial model");
}

const ParamVector& StrategyBase::OutputModel() const {
  return (config_.ema && ema_) ? *ema_ : state_.w;
}

ModelKind StrategyBase::OutputKind() const {
  return config_.ema ? ModelKind::kEma : ModelKind::kGlobal;
}

void StrategyBase::ApplyToGlobal(Simulation& sim, const ParamVector& summed,
                                 std::size_t count) {
  ServerApply(state_, summed, count, config_.eta_g, config_.server);
  if (config_.ema) EmaUpdate(ema_, state_.w, config_.beta);
  if (record_trajectory_) trajectory_.push_back(state_.w);
  sim.RecordServerUpdate(count);
}

TrainRequest StrategyBase::BaseRequest(
    const std::shared_ptr<const ParamVector>& start) const {
  TrainRequest r;
  r.start = start;
  r.rho = config_.rho;
  r.nu = config_.nu;
  // Plain distillation add-on: the teacher is the model the client started from.
  if (r.rho > 0.0) r.teacher = start;
  return r;
}

// ---------------------------------------------------------------------------

SyncStrategy::SyncStrategy(const AlgoConfig& config, ParamVector w0)
    : StrategyBase(config, std::move(w0)) {
  if (config_.algorithm == Algorithm::kFedBuff) {
    throw InvalidParameter("SyncStrategy cannot run fedbuff");
  }
}

bool SyncStrategy::CanStartRound(const Simulation&) const { return true; }

std::vector<DispatchOrder> SyncStrategy::MakeOrders(
    const Simulation&, std::uint64_t round, const std::vector<ClientId>& cohort,
    const std::shared_ptr<const ParamVector>& start) {
  std::vector<DispatchOrder> orders;
  orders.reserve(cohort.size());
  const TrainRequest req = BaseRequest(start);
  for (ClientId c : cohort) {
    DispatchOrder o;
    o.client = c;
    o.round_id = round;
    o.serial = round;
    o.model_version = state_.t;
    o.request = req;
    orders.push_back(std::move(o));
  }
  return orders;
}

void SyncStrategy::OnQuiescent(Simulation& sim) {
  if (collecting_ || sim.BudgetReached() || !CanStartRound(sim)) return;
  const std::uint64_t round = next_round_;
  std::vector<ClientId> cohort = sim.SampleClients(round, config_.over_selection_cohort);
  if (cohort.size() < config_.cohort) {
    throw SimulationError("round " + std::to_string(round) + ": only " +
                          std::to_string(cohort.size()) +
                          " idle clients available, cohort needs " +
                          std::to_string(config_.cohort));
  }
  ++next_round_;
  auto start = std::make_shared<const ParamVector>(state_.w);
  std::vector<DispatchOrder> orders = MakeOrders(sim, round, cohort, start);
  OnRoundStarted(sim, round, start, cohort.size());
  sim.Dispatch(std::move(orders));
  collecting_ = true;
  fast_sum_ = ParamVector(state_.w.layout);
  fast_count_ = 0;
  rounds_.push_back({round, sim.now(), 0.0, std::move(cohort)});
}

void SyncStrategy::OnClientCompleted(Simulation& sim, ClientUpdate update) {
  const bool current = collecting_ && update.round_id + 1 == next_round_;
  if (!current) {
    OnLateUpdate(sim, std::move(update));
    return;
  }
  Axpy(1.0, update.delta, fast_sum_);
  if (++fast_count_ < config_.cohort) return;
  collecting_ = false;
  rounds_.back().aggregated_at = sim.now();
  ApplyToGlobal(sim, fast_sum_, fast_count_);
  OnFastAggregated(sim, update.round_id, std::move(fast_sum_), fast_count_);
  fast_sum_ = ParamVector();
}

bool SyncStrategy::Finished(const Simulation& sim) const {
  return sim.BudgetReached() && !collecting_;
}

// ---------------------------------------------------------------------------

FareDustStrategy::FareDustStrategy(const AlgoConfig& config, ParamVector w0)
    : SyncStrategy(config, std::move(w0)) {
  config_.ema = true;
}

ParamVector FareDustStrategy::BuildTeacher(const ParamVector& w,
                                           const DeltaHistoryEntry& entry, double eta_g) {
  if (entry.contributor_count == 0) {
    throw SimulationError("history entry without contributors");
  }
  ParamVector teacher = w;
  Axpy(-eta_g / static_cast<double>(entry.contributor_count), entry.summed_delta, teacher);
  return teacher;
}

std::vector<DispatchOrder> FareDustStrategy::MakeOrders(
    const Simulation& sim, std::uint64_t round, const std::vector<ClientId>& cohort,
    const std::shared_ptr<const ParamVector>& start) {
  std::vector<DispatchOrder> orders =
      SyncStrategy::MakeOrders(sim, round, cohort, start);
  if (history_.empty()) {
    for (DispatchOrder& o : orders) {
      if (config_.empty_history == EmptyHistoryTeacher::kCurrentModel) {
        o.request.teacher = start;
      } else {
        o.request.teacher = nullptr;
        o.request.rho = 0.0;
      }
    }
    return orders;
  }
  // One teacher per history entry, built lazily against the current model.
  std::vector<std::shared_ptr<const ParamVector>> teachers(history_.size());
  for (DispatchOrder& o : orders) {
    Stream rng = Stream::Derive(sim.options().seed, Purpose::kTeacher, o.client, round);
    const std::size_t pick = rng.Below(history_.size());
    if (!teachers[pick]) {
      teachers[pick] = std::make_shared<const ParamVector>(
          BuildTeacher(*start, history_[pick], config_.eta_g));
    }
    o.request.teacher = o.request.rho > 0.0 ? teachers[pick] : nullptr;
    o.extra_download = o.request.teacher != nullptr;
  }
  return orders;
}

void FareDustStrategy::OnFastAggregated(Simulation&, std::uint64_t round,
                                        ParamVector&& sum, std::size_t count) {
  history_.push_back({round, std::move(sum), count});
  while (history_.size() > config_.teachers) history_.pop_front();
}

void FareDustStrategy::OnLateUpdate(Simulation&, ClientUpdate&& update) {
  for (DeltaHistoryEntry& e : history_) {
    if (e.origin_round == update.round_id) {
      Axpy(1.0, update.delta, e.summed_delta);
      ++e.contributor_count;
      return;
    }
  }
  ++discarded_;
}

// ---------------------------------------------------------------------------

FeastStrategy::FeastStrategy(const AlgoConfig& config, ParamVector w0)
    : SyncStrategy(config, std::move(w0)), aux_(state_.w) {
  if (config_.ema) throw InvalidParameter("feast keeps its own auxiliary average");
}

bool FeastStrategy::CanStartRound(const Simulation&) const {
  return !config_.strict_sequential || pending_.empty();
}

void FeastStrategy::OnRoundStarted(Simulation& sim, std::uint64_t round,
                                   const std::shared_ptr<const ParamVector>& start,
                                   std::size_t cohort_size) {
  Pending p;
  p.w_round = start;
  p.delta_slow = ParamVector(start->layout);
  p.cohort_size = cohort_size;
  pending_.emplace(round, std::move(p));
  if (std::isfinite(config_.tau_max)) {
    sim.ScheduleAuxDeadline(sim.now() + config_.tau_max, round);
  }
}

void FeastStrategy::OnFastAggregated(Simulation&, std::uint64_t round, ParamVector&& sum,
                                     std::size_t count) {
  Pending& p = pending_.at(round);
  p.delta_plus = sum;
  Axpy(1.0, p.delta_slow, p.delta_plus);
  p.delta_fast = std::move(sum);
  p.w_next = state_.w;
  p.fast_count = count;
  p.plus_count += count;
  p.reported += count;
  p.fast_done = true;
  Drain();
}

void FeastStrategy::OnLateUpdate(Simulation&, ClientUpdate&& update) {
  auto it = pending_.find(update.round_id);
  if (it == pending_.end() || it->second.deadline_passed || !it->second.fast_done) {
    ++discarded_;
    return;
  }
  Pending& p = it->second;
  Axpy(1.0, update.delta, p.delta_slow);
  Axpy(1.0, update.delta, p.delta_plus);
  ++p.plus_count;
  ++p.reported;
  Drain();
}

void FeastStrategy::OnAuxDeadline(Simulation&, std::uint64_t round_id) {
  auto it = pending_.find(round_id);
  if (it == pending_.end()) return;  // already finalized: everyone reported
  it->second.deadline_passed = true;
  Drain();
}

bool FeastStrategy::Ready(const Pending& p) const {
  return p.fast_done && (p.deadline_passed || p.reported >= p.cohort_size);
}

void FeastStrategy::Drain() {
  while (!pending_.empty() && pending_.begin()->first == next_aux_ &&
         Ready(pending_.begin()->second)) {
    ApplyAux(next_aux_);
  }
}

void FeastStrategy::ApplyAux(std::uint64_t round) {
  if (round != next_aux_) {
    throw SimulationError("aux update for round " + std::to_string(round) +
                          " attempted before round " + std::to_string(next_aux_));
  }
  auto it = pending_.find(round);
  if (it == pending_.end() || !Ready(it->second)) {
    throw SimulationError("aux update for round " + std::to_string(round) +
                          " attempted before the round closed");
  }
  Pending& p = it->second;
  const double inv = 1.0 / static_cast<double>(p.plus_count);
  const double beta = config_.beta;
  const ParamVector& w = *p.w_round;
  ParamVector a_next(aux_.layout);
  for (std::size_t i = 0; i < aux_.size(); ++i) {
    const double w_plus = w[i] - config_.eta_g * inv * p.delta_plus[i];
    a_next[i] = beta * (aux_[i] - config_.eta_a * inv * p.delta_plus[i]) +
                (1.0 - beta) * w_plus;
  }
  a_next.CheckFinite("auxiliary model");
  if (observer_) {
    FeastRoundLog log;
    log.round = round;
    log.fast_count = p.fast_count;
    log.plus_count = p.plus_count;
    log.delta_fast = p.delta_fast;
    log.delta_slow = p.delta_slow;
    log.w_round = w;
    log.w_next = p.w_next;
    log.a_round = aux_;
    log.a_next = a_next;
    observer_(log);
  }
  aux_ = std::move(a_next);
  pending_.erase(it);
  ++next_aux_;
}

bool FeastStrategy::Finished(const Simulation& sim) const {
  return SyncStrategy::Finished(sim) && pending_.empty();
}

// ---------------------------------------------------------------------------

FedBuffStrategy::FedBuffStrategy(const AlgoConfig& config, ParamVector w0)
    : StrategyBase(config, std::move(w0)), buffer_sum_(state_.w.layout) {
  if (config_.algorithm != Algorithm::kFedBuff) {
    throw InvalidParameter("FedBuffStrategy needs algorithm fedbuff");
  }
}

void FedBuffStrategy::OnQuiescent(Simulation& sim) {
  if (sim.BudgetReached() || in_flight_ >= config_.concurrency) return;
  const std::uint64_t serial = next_refill_++;
  const std::vector<ClientId> picked =
      sim.SampleClients(serial, config_.concurrency - in_flight_);
  if (picked.empty()) return;
  auto start = std::make_shared<const ParamVector>(state_.w);
  const TrainRequest req = BaseRequest(start);
  std::vector<DispatchOrder> orders;
  orders.reserve(picked.size());
  for (ClientId c : picked) {
    DispatchOrder o;
    o.client = c;
    o.round_id = serial;
    o.serial = serial;
    o.model_version = state_.t;
    o.request = req;
    orders.push_back(std::move(o));
  }
  in_flight_ += orders.size();
  sim.Dispatch(std::move(orders));
}

void FedBuffStrategy::OnClientCompleted(Simulation& sim, ClientUpdate update) {
  --in_flight_;
  if (update.model_version > state_.t) {
    throw SimulationError("update computed on a model newer than the server's");
  }
  if (sim.BudgetReached()) {
    ++discarded_;
    return;
  }
  max_staleness_ = std::max(max_staleness_, state_.t - update.model_version);
  Axpy(1.0, update.delta, buffer_sum_);
  if (++buffered_ < config_.buffer) return;
  ApplyToGlobal(sim, buffer_sum_, buffered_);
  buffer_sum_ = ParamVector(state_.w.layout);
  buffered_ = 0;
}

bool FedBuffStrategy::Finished(const Simulation& sim) const { return sim.BudgetReached(); }

// ---------------------------------------------------------------------------

std::unique_ptr<StrategyBase> MakeStrategy(const AlgoConfig& config, ParamVector w0) {
  switch (config.algorithm) {
    case Algorithm::kFedAvg:
    case Algorithm::kFedAdam:
      return std::make_unique<SyncStrategy>(config, std::move(w0));
    case Algorithm::kFedBuff:
      return std::make_unique<FedBuffStrategy>(config, std::move(w0));
    case Algorithm::kFareDust:
      return std::make_unique<FareDustStrategy>(config, std::move(w0));
    case Algorithm::kFeast:
      return std::make_unique<FeastStrategy>(config, std::move(w0));
  }
  throw InvalidParameter("unknown algorithm");
}

}  // namespace fedsim
