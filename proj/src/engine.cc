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

#include "fedsim/engine.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "fedsim/error.h"

namespace fedsim {

std::uint64_t EventQueue::Schedule(
    double fire_at, std::variant<ClientUpdate, AuxDeadline, EvalTick> payload) {
  if (!(fire_at >= now_)) {
    throw SimulationError("cannot schedule an event at " + std::to_string(fire_at) +
                          " before the current time " + std::to_string(now_));
  }
  const std::uint64_t seq = next_seq_++;
  heap_.push(Event{fire_at, seq, std::move(payload)});
  return seq;
}

std::optional<Event> EventQueue::Next() {
  if (heap_.empty()) return std::nullopt;
  // priority_queue::top is const; the payload is moved out before pop.
  Event ev = std::move(const_cast<Event&>(heap_.top()));
  heap_.pop();
  now_ = ev.fire_at;
  return ev;
}

std::optional<double> EventQueue::PeekTime() const {
  if (heap_.empty()) return std::nullopt;
  return heap_.top().fire_at;
}

const char* ModelKindName(ModelKind kind) {
  switch (kind) {
    case ModelKind::kGlobal:
      return "global";
    case ModelKind::kEma:
      return "ema";
    case ModelKind::kAux:
      return "aux";
  }
  return "unknown";
}

void Strategy::OnAuxDeadline(Simulation&, std::uint64_t) {
  throw SimulationError("strategy does not use aux deadlines");
}

Simulation::Simulation(const ClientPopulation& population, LatencyScenario scenario,
                       SimOptions options)
    : population_(population),
      scenario_(std::move(scenario)),
      options_(options),
      active_(population.size(), false) {
  scenario_.Validate();
  if (population_.size() == 0) throw InvalidParameter("empty client population");
  if (options_.jobs == 0) options_.jobs = 1;
  if (options_.time_limit_s && !(*options_.time_limit_s > 0.0)) {
    throw InvalidParameter("time limit must be positive");
  }
}

std::vector<ClientId> Simulation::SampleClients(std::uint64_t serial,
                                                std::size_t want) const {
  std::vector<ClientId> eligible;
  eligible.reserve(population_.size());
  for (ClientId id = 0; id < population_.size(); ++id) {
    if (!options_.exclusive || !active_[id]) eligible.push_back(id);
  }
  const std::size_t k = std::min(want, eligible.size());
  Stream rng = Stream::Derive(options_.seed, Purpose::kCohort, serial);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.Below(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(k);
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

ClientUpdate Simulation::RunOrder(const DispatchOrder& order, double now) const {
  const LatencyProfile& profile =
      scenario_.ProfileFor(population_.IsStraggler(order.client));
  Stream lat = Stream::Derive(options_.seed, Purpose::kLatency, order.client,
                              order.serial);
  double comm = SampleLognormal(profile.comm, lat);
  const double per_example = SampleLognormal(profile.per_example, lat);
  const double overhead = SampleLognormal(profile.overhead, lat);
  if (order.extra_download) comm *= scenario_.teacher_download_factor;

  TrainRequest request = order.request;
  if (options_.time_limit_s) {
    const double step_cost =
        per_example * static_cast<double>(population_.ExamplesPerStep(order.client));
    const double fit = std::floor((*options_.time_limit_s - overhead) / step_cost);
    request.max_steps = static_cast<std::size_t>(std::clamp(fit, 1.0, 1.0e6));
  }

  Stream train = Stream::Derive(options_.seed, Purpose::kTraining, order.client,
                                order.serial);
  ClientWork work = population_.Train(order.client, request, train);

  ClientUpdate u;
  u.round_id = order.round_id;
  u.client_id = order.client;
  u.delta = Subtract(*request.start, work.w_final);
  u.delta.CheckFinite("client delta");
  u.latency = ComposeLatency(comm, per_example, overhead, work.examples_processed);
  u.dispatched_at = now;
  u.completed_at = now + u.latency.total_s;
  u.examples_processed = work.examples_processed;
  u.steps = work.steps;
  u.model_version = order.model_version;
  return u;
}

void Simulation::Dispatch(std::vector<DispatchOrder> orders) {
  for (const DispatchOrder& o : orders) {
    if (o.client >= population_.size()) {
      throw SimulationError("dispatch to unknown client " + std::to_string(o.client));
    }
    if (options_.exclusive && active_[o.client]) {
      throw SimulationError("client " + std::to_string(o.client) +
                            " dispatched while still active");
    }
    if (!o.request.start) throw SimulationError("dispatch without a start model");
  }

  const double t = now();
  std::vector<std::optional<ClientUpdate>> results(orders.size());
  const std::size_t workers = std::min(options_.jobs, orders.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < orders.size(); ++i) results[i] = RunOrder(orders[i], t);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < orders.size(); i = next++) {
          try {
            results[i] = RunOrder(orders[i], t);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  for (std::size_t i = 0; i < orders.size(); ++i) {
    ClientUpdate& u = *results[i];
    if (!active_[u.client_id]) ++active_count_;
    active_[u.client_id] = true;
    if (record_jobs_) {
      jobs_.push_back({u.client_id, u.round_id, orders[i].serial, u.dispatched_at,
                       u.completed_at, u.latency});
    }
    const double at = u.completed_at;
    queue_.Schedule(at, std::move(u));
  }
}

void Simulation::ScheduleAuxDeadline(double at, std::uint64_t round_id) {
  queue_.Schedule(at, AuxDeadline{round_id});
}

void Simulation::ScheduleEvalTick(double at) { queue_.Schedule(at, EvalTick{}); }

void Simulation::RecordServerUpdate(std::size_t aggregated) {
  ++server_steps_;
  aggregated_ += aggregated;
  if (hook_) hook_();
}

std::optional<Event> Simulation::NextEvent() {
  std::optional<Event> ev = queue_.Next();
  if (ev && ev->kind() == EventKind::kClientCompleted) {
    const ClientId id = std::get<ClientUpdate>(ev->payload).client_id;
    if (active_[id]) {
      active_[id] = false;
      --active_count_;
    }
  }
  return ev;
}

double RunEventLoop(Simulation& sim, Strategy& strategy,
                    const std::function<void()>& on_tick) {
  strategy.OnQuiescent(sim);
  while (!strategy.Finished(sim)) {
    std::optional<Event> ev = sim.NextEvent();
    if (!ev) {
      throw SimulationError(
          "event queue drained before the strategy finished (aggregated " +
          std::to_string(sim.aggregated_updates()) + " of budget " +
          std::to_string(sim.options().budget) + ")");
    }
    switch (ev->kind()) {
      case EventKind::kClientCompleted:
        strategy.OnClientCompleted(sim, std::move(std::get<ClientUpdate>(ev->payload)));
        break;
      case EventKind::kAuxDeadline:
        strategy.OnAuxDeadline(sim, std::get<AuxDeadline>(ev->payload).round_id);
        break;
      case EventKind::kEvalTick:
        if (on_tick) on_tick();
        break;
    }
    const std::optional<double> next = sim.PeekTime();
    if (!next || *next > sim.now()) strategy.OnQuiescent(sim);
  }
  return sim.now();
}

}  // namespace fedsim
