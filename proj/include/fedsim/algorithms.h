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

#ifndef FEDSIM_ALGORITHMS_H_
#define FEDSIM_ALGORITHMS_H_

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/engine.h"
#include "fedsim/model.h"

namespace fedsim {

enum class Algorithm { kFedAvg, kFedAdam, kFedBuff, kFareDust, kFeast };

const char* AlgorithmName(Algorithm a);
Algorithm ParseAlgorithm(const std::string& name);

enum class ServerOptimizerKind { kSgd, kAdam };

struct ServerOptimizer {
  ServerOptimizerKind kind = ServerOptimizerKind::kSgd;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-4;
};

// What FARe-DUST does when no historical delta exists yet.
enum class EmptyHistoryTeacher {
  kCurrentModel,  // distill from w_t itself
  kNoDistill,     // rho forced to 0 for that client
};

struct AlgoConfig {
  Algorithm algorithm = Algorithm::kFedAvg;
  double eta_g = 1.0;
  double eta_l = 0.1;
  double eta_a = 0.0;  // FeAST auxiliary learning rate
  std::size_t cohort = 50;                 // B: updates per global step
  std::size_t over_selection_cohort = 50;  // B_t: clients sampled per round
  std::size_t buffer = 20;                 // FedBuff
  std::size_t concurrency = 100;           // FedBuff chi
  std::size_t teachers = 50;               // FARe-DUST k
  double rho = 0.0;
  double nu = 0.0;
  double beta = 0.0;  // EMA decay (FeAST: auxiliary decay)
  bool ema = false;   // evaluate an EMA of the global model (sync, FedBuff)
  double tau_max = std::numeric_limits<double>::infinity();
  bool strict_sequential = false;  // FeAST: wait out tau_max before next round
  EmptyHistoryTeacher empty_history = EmptyHistoryTeacher::kCurrentModel;
  ServerOptimizer server;

  // Defaults per algorithm, taken from the EMNIST column of the tuning tables.
  static AlgoConfig Defaults(Algorithm algorithm);
  void Validate() const;
  // Updates aggregated per global step: B, or the buffer size for FedBuff.
  std::size_t UpdatesPerStep() const;
};

// Global model plus server optimizer state.
struct ServerState {
  ParamVector w;
  std::uint64_t t = 0;
  std::vector<double> m;  // Adam first moment
  std::vector<double> v;  // Adam second moment

  explicit ServerState(ParamVector w0);
};

/// Applies a summed client delta (w_start - w_final convention) as a
/// pseudo-gradient. SGD: w -= (eta_g / count) * delta. Adam: g = delta / count,
/// m = b1 m + (1 - b1) g, v = b2 v + (1 - b2) g^2, w -= eta_g m / (sqrt(v) + eps)
/// with no bias correction.
void ServerApply(ServerState& state, const ParamVector& summed_delta,
                 std::size_t count, double eta_g, const ServerOptimizer& opt);

// ema <- beta * ema + (1 - beta) * w; an empty accumulator takes w as is.
void EmaUpdate(std::optional<ParamVector>& ema, const ParamVector& w, double beta);

struct DeltaHistoryEntry {
  std::uint64_t origin_round = 0;
  ParamVector summed_delta;
  std::size_t contributor_count = 0;
};

// One finalized FeAST round, for verification.
struct FeastRoundLog {
  std::uint64_t round = 0;
  std::size_t fast_count = 0;  // B
  std::size_t plus_count = 0;  // B+_t
  ParamVector delta_fast;
  ParamVector delta_slow;
  ParamVector w_round;  // w_t
  ParamVector w_next;   // w_{t+1}
  ParamVector a_round;  // a_t
  ParamVector a_next;   // a_{t+1}
};

// Common bookkeeping: output model, optional trajectory capture.
class StrategyBase : public Strategy {
 public:
  StrategyBase(const AlgoConfig& config, ParamVector w0);

  const ServerState& state() const { return state_; }
  const AlgoConfig& config() const { return config_; }
  const ParamVector& OutputModel() const override;
  ModelKind OutputKind() const override;
  std::uint64_t DiscardedUpdates() const override { return discarded_; }

  // Records w after every global update when enabled.
  void set_record_trajectory(bool on) { record_trajectory_ = on; }
  const std::vector<ParamVector>& trajectory() const { return trajectory_; }

 protected:
  // Server update shared by all algorithms; also feeds EMA and trajectory.
  void ApplyToGlobal(Simulation& sim, const ParamVector& summed, std::size_t count);
  TrainRequest BaseRequest(const std::shared_ptr<const ParamVector>& start) const;

  AlgoConfig config_;
  ServerState state_;
  std::optional<ParamVector> ema_;
  std::uint64_t discarded_ = 0;
  bool record_trajectory_ = false;
  std::vector<ParamVector> trajectory_;
};

/// Synchronous rounds: sample B_t clients, aggregate the first B completions
/// (ties by client id via dispatch order), start the next round once the
/// round's B-th update is applied. Late completions go to OnLateUpdate.
class SyncStrategy : public StrategyBase {
 public:
  SyncStrategy(const AlgoConfig& config, ParamVector w0);

  void OnClientCompleted(Simulation& sim, ClientUpdate update) override;
  void OnQuiescent(Simulation& sim) override;
  bool Finished(const Simulation& sim) const override;

  struct RoundInfo {
    std::uint64_t round = 0;
    double started_at = 0.0;
    double aggregated_at = 0.0;
    std::vector<ClientId> cohort;
  };
  const std::vector<RoundInfo>& rounds() const { return rounds_; }

 protected:
  virtual bool CanStartRound(const Simulation& sim) const;
  virtual std::vector<DispatchOrder> MakeOrders(
      const Simulation& sim, std::uint64_t round,
      const std::vector<ClientId>& cohort,
      const std::shared_ptr<const ParamVector>& start);
  virtual void OnRoundStarted(Simulation&, std::uint64_t,
                              const std::shared_ptr<const ParamVector>&,
                              std::size_t) {}
  // Called after the global update for `round` with its fast sum.
  virtual void OnFastAggregated(Simulation&, std::uint64_t, ParamVector&&,
                                std::size_t) {}
  virtual void OnLateUpdate(Simulation&, ClientUpdate&&) { ++discarded_; }

  std::uint64_t next_round_ = 0;
  bool collecting_ = false;
  ParamVector fast_sum_;
  std::size_t fast_count_ = 0;
  std::vector<RoundInfo> rounds_;
};

/// FARe-DUST: synchronous over-selection with stale-teacher distillation.
/// Each client's teacher is w_t - (eta_g / b) * Delta for a uniformly chosen
/// history entry; late arrivals fold into their round's entry while it is
/// among the newest k. Output is the EMA of w_1..w_T.
class FareDustStrategy : public SyncStrategy {
 public:
  FareDustStrategy(const AlgoConfig& config, ParamVector w0);

  const std::deque<DeltaHistoryEntry>& history() const { return history_; }
  // Teacher construction for one history entry against model w.
  static ParamVector BuildTeacher(const ParamVector& w, const DeltaHistoryEntry& entry,
                                  double eta_g);

 protected:
  std::vector<DispatchOrder> MakeOrders(
      const Simulation& sim, std::uint64_t round,
      const std::vector<ClientId>& cohort,
      const std::shared_ptr<const ParamVector>& start) override;
  void OnFastAggregated(Simulation& sim, std::uint64_t round, ParamVector&& sum,
                        std::size_t count) override;
  void OnLateUpdate(Simulation& sim, ClientUpdate&& update) override;

 private:
  std::deque<DeltaHistoryEntry> history_;
};

/// FeAST-on-MSG: the global model advances on the B fastest updates; every
/// round keeps collecting straggler deltas until tau_max after its start (or
/// until the whole cohort reported), then updates the auxiliary model
///   a_{t+1} = beta (a_t - eta_a/B+ Delta+) + (1 - beta)(w_t - eta_g/B+ Delta+)
/// strictly in round order. Output is a_T.
class FeastStrategy : public SyncStrategy {
 public:
  FeastStrategy(const AlgoConfig& config, ParamVector w0);

  void OnAuxDeadline(Simulation& sim, std::uint64_t round_id) override;
  bool Finished(const Simulation& sim) const override;
  const ParamVector& OutputModel() const override { return aux_; }
  ModelKind OutputKind() const override { return ModelKind::kAux; }
  const ParamVector& aux() const { return aux_; }
  std::uint64_t next_aux_round() const { return next_aux_; }
  std::size_t pending_rounds() const { return pending_.size(); }

  void set_round_observer(std::function<void(const FeastRoundLog&)> fn) {
    observer_ = std::move(fn);
  }

  // Applies the aux update for `round`; throws SimulationError when called
  // out of order.
  void ApplyAux(std::uint64_t round);

 protected:
  bool CanStartRound(const Simulation& sim) const override;
  void OnRoundStarted(Simulation& sim, std::uint64_t round,
                      const std::shared_ptr<const ParamVector>& start,
                      std::size_t cohort_size) override;
  void OnFastAggregated(Simulation& sim, std::uint64_t round, ParamVector&& sum,
                        std::size_t count) override;
  void OnLateUpdate(Simulation& sim, ClientUpdate&& update) override;

 private:
  struct Pending {
    std::shared_ptr<const ParamVector> w_round;
    ParamVector w_next;
    ParamVector delta_fast;
    ParamVector delta_plus;
    ParamVector delta_slow;
    std::size_t fast_count = 0;
    std::size_t plus_count = 0;
    std::size_t cohort_size = 0;
    std::size_t reported = 0;
    bool fast_done = false;
    bool deadline_passed = false;
  };
  bool Ready(const Pending& p) const;
  void Drain();

  ParamVector aux_;
  std::map<std::uint64_t, Pending> pending_;
  std::uint64_t next_aux_ = 0;
  std::function<void(const FeastRoundLog&)> observer_;
};

/// FedBuff: up to chi clients train concurrently on the model current at
/// their dispatch; every `buffer` completions are summed and applied without
/// staleness weighting. Free slots are refilled once simultaneous arrivals
/// are processed.
class FedBuffStrategy : public StrategyBase {
 public:
  FedBuffStrategy(const AlgoConfig& config, ParamVector w0);

  void OnClientCompleted(Simulation& sim, ClientUpdate update) override;
  void OnQuiescent(Simulation& sim) override;
  bool Finished(const Simulation& sim) const override;
  std::uint64_t max_staleness() const { return max_staleness_; }

 private:
  ParamVector buffer_sum_;
  std::size_t buffered_ = 0;
  std::size_t in_flight_ = 0;
  std::uint64_t next_refill_ = 0;
  std::uint64_t max_staleness_ = 0;
};

std::unique_ptr<StrategyBase> MakeStrategy(const AlgoConfig& config, ParamVector w0);

}  // namespace fedsim

#endif  // FEDSIM_ALGORITHMS_H_
