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

#ifndef FEDSIM_EXPERIMENT_H_
#define FEDSIM_EXPERIMENT_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedsim/algorithms.h"
#include "fedsim/data.h"
#include "fedsim/engine.h"
#include "fedsim/latency.h"
#include "fedsim/metrics.h"
#include "fedsim/model.h"

namespace fedsim {

struct ModelConfig {
  std::size_t hidden = 0;  // 0: multinomial logistic regression
  double init_scale = 0.05;
  DistillLoss distill = DistillLoss::kSoftCrossEntropy;
  double temperature = 1.0;
};

// Local computation shared by every client.
struct ClientConfig {
  std::size_t batch_size = 20;
  std::size_t epochs = 1;
  std::optional<std::size_t> local_steps;
  // Time-limited computation: explicit limit, or derived from the population
  // 75th-percentile one-epoch computation time when only the flag is set.
  bool time_limit = false;
  std::optional<double> time_limit_s;
};

struct ExperimentConfig {
  std::string label;  // defaults to the algorithm name
  SyntheticConfig dataset;
  std::set<ClassId> straggler_classes{0, 1, 2, 3, 4};
  std::size_t n_straggler_clients = 94;
  LatencyScenario latency = LatencyScenario::PerDomainPerExample();
  ModelConfig model;
  AlgoConfig algo;
  ClientConfig client;
  bool exclusive = true;
  std::uint64_t budget = 5000;
  std::size_t eval_every = 10;
  std::size_t eval_cap = 2048;
  std::size_t trials = 1;
  std::uint64_t seed = 0;
  std::string out;

  void Validate() const;
};

// Strict parse: unknown keys and type mismatches raise ConfigError naming the
// offending field path.
ExperimentConfig ParseExperimentConfig(const std::string& json_text);
ExperimentConfig LoadExperimentConfig(const std::string& path);

// Fully resolved config (every default filled in) as canonical JSON.
std::string ExperimentConfigToJson(const ExperimentConfig& config);

// FNV-1a over the canonical JSON without seed, trials and out.
std::string ConfigHash(const ExperimentConfig& config);

// Adapts a FederatedDataset to the engine's client interface.
class ShardPopulation : public ClientPopulation {
 public:
  ShardPopulation(const FederatedDataset& dataset, LocalTrainSpec spec);

  std::size_t size() const override { return dataset_.shards.size(); }
  bool IsStraggler(ClientId id) const override;
  std::size_t NumExamples(ClientId id) const override;
  std::size_t ExamplesPerStep(ClientId id) const override;
  ClientWork Train(ClientId id, const TrainRequest& request,
                   Stream& rng) const override;

 private:
  const FederatedDataset& dataset_;
  LocalTrainSpec spec_;
};

// Population 75th-percentile (nearest rank) of overhead + per_example * n,
// one draw per client from the time-limit stream.
double DefaultTimeLimit(const LatencyScenario& scenario, const ClientPopulation& population,
                        std::uint64_t seed);

Layout ModelLayout(const ExperimentConfig& config);
LocalTrainSpec MakeTrainSpec(const ExperimentConfig& config);
FederatedDataset BuildExperimentDataset(const ExperimentConfig& config);

struct RunOptions {
  std::size_t jobs = 1;
  bool record_trajectory = false;
  bool record_jobs = false;
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<MetricsRecord> records;  // last entry is the final evaluation
  double total_time_s = 0.0;
  std::uint64_t server_steps = 0;
  std::uint64_t aggregated_updates = 0;
  std::uint64_t discarded_updates = 0;
  std::optional<double> time_limit_s;
  ParamVector final_model;
  ModelKind output_kind = ModelKind::kGlobal;
  std::vector<ParamVector> trajectory;
  std::vector<JobRecord> jobs;
};

// One trial. The dataset is fixed by config.dataset.seed; `seed` drives
// initialization, sampling, latency and local training.
RunResult RunExperiment(const ExperimentConfig& config, const FederatedDataset& dataset,
                        std::uint64_t seed, const RunOptions& options = {});

// JSON lines: one record per line, then a final line tagged with run metadata.
std::string RunToJsonl(const ExperimentConfig& config, const RunResult& result);

}  // namespace fedsim

#endif  // FEDSIM_EXPERIMENT_H_
