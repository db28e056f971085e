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

#ifndef FEDSIM_ENGINE_H_
#define FEDSIM_ENGINE_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <queue>
#include <span>
#include <variant>
#include <vector>

#include "fedsim/latency.h"
#include "fedsim/model.h"

namespace fedsim {

using ClientId = std::size_t;

// Result of one client's local computation, delivered at completed_at.
struct ClientUpdate {
  std::uint64_t round_id = 0;
  ClientId client_id = 0;
  ParamVector delta;  // w_start - w_final
  double dispatched_at = 0.0;
  double completed_at = 0.0;
  std::size_t examples_processed = 0;
  std::size_t steps = 0;
  std::uint64_t model_version = 0;
  LatencySample latency;
};

struct AuxDeadline {
  std::uint64_t round_id = 0;
};

struct EvalTick {};

enum class EventKind { kClientCompleted, kAuxDeadline, kEvalTick };

struct Event {
  double fire_at = 0.0;
  std::uint64_t seq = 0;
  std::variant<ClientUpdate, AuxDeadline, EvalTick> payload;

  EventKind kind() const { return static_cast<EventKind>(payload.index()); }
};

// Min-heap on (fire_at, seq) with a monotone virtual clock.
class EventQueue {
 public:
  // Throws SimulationError if fire_at is earlier than now().
  std::uint64_t Schedule(double fire_at,
                         std::variant<ClientUpdate, AuxDeadline, EvalTick> payload);
  // Pops the earliest event and advances the clock to its fire_at.
  std::optional<Event> Next();
  std::optional<double> PeekTime() const;
  double now() const { return now_; }
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.fire_at != b.fire_at) return a.fire_at > b.fire_at;
      return a.seq > b.seq;
    }
  };
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  std::uint64_t next_seq_ = 0;
  double now_ = 0.0;
};

// What a client is asked to compute.
struct TrainRequest {
  std::shared_ptr<const ParamVector> start;
  std::shared_ptr<const ParamVector> teacher;  // null: no distillation
  double rho = 0.0;
  double nu = 0.0;  // proximal anchor is `start`
  std::optional<std::size_t> max_steps;  // time-limited mode
};

struct ClientWork {
  ParamVector w_final;
  std::size_t steps = 0;
  std::size_t examples_processed = 0;
};

// The client side of a simulation: data, local solver, and group membership.
class ClientPopulation {
 public:
  virtual ~ClientPopulation() = default;
  virtual std::size_t size() const = 0;
  virtual bool IsStraggler(ClientId id) const = 0;
  // Examples in one full pass over the client's data.
  virtual std::size_t NumExamples(ClientId id) const = 0;
  // Examples consumed by one local step.
  virtual std::size_t ExamplesPerStep(ClientId id) const = 0;
  virtual ClientWork Train(ClientId id, const TrainRequest& request,
                           Stream& rng) const = 0;
};

struct SimOptions {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  // A client already computing cannot be sampled again.
  bool exclusive = true;
  // Time-limited local computation: steps are chosen so that
  // overhead + steps * per_example * examples_per_step fits in the limit.
  std::optional<double> time_limit_s;
  std::uint64_t budget = 0;  // aggregated client updates
};

struct DispatchOrder {
  ClientId client = 0;
  std::uint64_t round_id = 0;
  // Keys the client's latency and training streams.
  std::uint64_t serial = 0;
  std::uint64_t model_version = 0;
  TrainRequest request;
  // The client downloads a teacher distinct from its start model.
  bool extra_download = false;
};

struct JobRecord {
  ClientId client = 0;
  std::uint64_t round_id = 0;
  std::uint64_t serial = 0;
  double dispatched_at = 0.0;
  double completed_at = 0.0;
  LatencySample latency;
};

/// Event loop state shared by every strategy: virtual clock, pending events,
/// the set of busy clients, and the aggregated-update budget.
class Simulation {
 public:
  Simulation(const ClientPopulation& population, LatencyScenario scenario,
             SimOptions options);

  double now() const { return queue_.now(); }
  const SimOptions& options() const { return options_; }
  const ClientPopulation& population() const { return population_; }
  const LatencyScenario& scenario() const { return scenario_; }

  // Uniform sample without replacement of up to `want` eligible clients,
  // keyed by `serial`, returned in ascending id order.
  std::vector<ClientId> SampleClients(std::uint64_t serial, std::size_t want) const;

  // Runs each order's local computation (in parallel when jobs > 1) and
  // schedules its completion. Event sequence numbers follow `orders` order.
  void Dispatch(std::vector<DispatchOrder> orders);

  void ScheduleAuxDeadline(double at, std::uint64_t round_id);
  void ScheduleEvalTick(double at);

  bool IsActive(ClientId id) const { return active_[id]; }
  std::size_t ActiveCount() const { return active_count_; }

  // Called by strategies after every global model update.
  void RecordServerUpdate(std::size_t aggregated);
  std::uint64_t server_steps() const { return server_steps_; }
  std::uint64_t aggregated_updates() const { return aggregated_; }
  bool BudgetReached() const { return aggregated_ >= options_.budget; }
  void SetServerUpdateHook(std::function<void()> hook) { hook_ = std::move(hook); }

  std::optional<Event> NextEvent();
  std::optional<double> PeekTime() const { return queue_.PeekTime(); }

  void set_record_jobs(bool on) { record_jobs_ = on; }
  const std::vector<JobRecord>& jobs() const { return jobs_; }

 private:
  ClientUpdate RunOrder(const DispatchOrder& order, double now) const;

  const ClientPopulation& population_;
  LatencyScenario scenario_;
  SimOptions options_;
  EventQueue queue_;
  std::vector<bool> active_;
  std::size_t active_count_ = 0;
  std::uint64_t server_steps_ = 0;
  std::uint64_t aggregated_ = 0;
  std::function<void()> hook_;
  bool record_jobs_ = false;
  std::vector<JobRecord> jobs_;
};

enum class ModelKind { kGlobal, kEma, kAux };

const char* ModelKindName(ModelKind kind);

// A server-side aggregation algorithm driven by the event loop.
class Strategy {
 public:
  virtual ~Strategy() = default;

  virtual void OnClientCompleted(Simulation& sim, ClientUpdate update) = 0;
  virtual void OnAuxDeadline(Simulation& sim, std::uint64_t round_id);
  // Called once before the first event and then whenever every event at the
  // current virtual time has been delivered.
  virtual void OnQuiescent(Simulation& sim) = 0;
  virtual bool Finished(const Simulation& sim) const = 0;

  // The model this algorithm reports as its output.
  virtual const ParamVector& OutputModel() const = 0;
  virtual ModelKind OutputKind() const = 0;
  virtual std::uint64_t DiscardedUpdates() const { return 0; }
};

// Drives `strategy` until it reports Finished. Returns the virtual end time.
// `on_tick` receives EvalTick events.
double RunEventLoop(Simulation& sim, Strategy& strategy,
                    const std::function<void()>& on_tick = {});

}  // namespace fedsim

#endif  // FEDSIM_ENGINE_H_
