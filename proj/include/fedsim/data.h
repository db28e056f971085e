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

#ifndef FEDSIM_DATA_H_
#define FEDSIM_DATA_H_

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/latency.h"

namespace fedsim {

using ClassId = std::uint32_t;

struct Example {
  std::vector<double> features;
  ClassId label = 0;

  bool operator==(const Example&) const = default;
};

struct ClientShard {
  std::size_t client_id = 0;
  std::vector<Example> examples;
  bool is_straggler = false;

  bool operator==(const ClientShard&) const = default;
};

// Gaussian-mixture classification task split across clients.
struct SyntheticConfig {
  std::size_t n_classes = 10;
  std::size_t d_in = 16;
  std::size_t m_clients = 400;
  // Client dataset sizes, rounded to the nearest integer and clamped to >= 1.
  LognormalParams size_distribution{3.4011973816621555, 0.6};  // median 30
  // Global class probabilities; empty means uniform.
  std::vector<double> class_mixture;
  // Dirichlet concentration of the per-client class mixture. Larger values
  // make shards closer to the global mixture.
  double concentration = 0.5;
  // Standard deviation of the isotropic noise around each class center.
  double cluster_spread = 1.0;
  // Standard deviation of the class centers themselves.
  double center_scale = 1.0;
  std::size_t eval_size = 2000;
  std::uint64_t seed = 0;

  void Validate() const;
  std::vector<double> Mixture() const;
};

struct FederatedDataset {
  std::vector<ClientShard> shards;
  std::vector<Example> eval_total;
  std::vector<Example> eval_straggler;
  std::set<ClassId> straggler_classes;
  SyntheticConfig generator_config;
  // Bookkeeping from the partitioning step.
  std::size_t removed_examples = 0;
  std::size_t dropped_shards = 0;

  std::size_t NumStragglers() const;
  std::size_t TotalExamples() const;
  // Throws DataError when a dataset invariant does not hold.
  void CheckInvariants() const;
};

// Class centers shared by training and evaluation draws.
std::vector<std::vector<double>> ClassCenters(const SyntheticConfig& config);

std::vector<ClientShard> GenerateSynthetic(const SyntheticConfig& config);

// Flags the n clients holding the most straggler-class examples (ties go to
// the lower client_id) and strips straggler-class examples from every other
// client. Standard shards left empty are dropped.
FederatedDataset ApplyStragglerPartition(std::vector<ClientShard> shards,
                                         const std::set<ClassId>& straggler_classes,
                                         std::size_t n_straggler_clients);

// Held-out draws from the global mixture, using a stream disjoint from the
// training shards. Returns (eval_total, eval_straggler).
std::pair<std::vector<Example>, std::vector<Example>> MakeEvalSplits(
    const SyntheticConfig& config, const std::set<ClassId>& straggler_classes);

// generate -> partition -> eval splits.
FederatedDataset BuildDataset(const SyntheticConfig& config,
                              const std::set<ClassId>& straggler_classes,
                              std::size_t n_straggler_clients);

std::string ExportDatasetJson(const FederatedDataset& dataset);
FederatedDataset ImportDatasetJson(const std::string& text);

}  // namespace fedsim

#endif  // FEDSIM_DATA_H_
