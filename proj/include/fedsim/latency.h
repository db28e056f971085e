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

#ifndef FEDSIM_LATENCY_H_
#define FEDSIM_LATENCY_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedsim/rng.h"

namespace fedsim {

struct FederatedDataset;

// Parameters of a log-normal distribution: exp(mu + sigma * Z).
struct LognormalParams {
  double mu = 0.0;
  double sigma = 0.0;

  void Validate() const;
  double Median() const;
  double Mean() const;
  bool operator==(const LognormalParams&) const = default;
};

// Distributions of the three latency factors of one client group.
struct LatencyProfile {
  LognormalParams comm;         // seconds, download + upload combined
  LognormalParams per_example;  // seconds per processed example
  LognormalParams overhead;     // seconds, fixed start-up / turn-down cost

  void Validate() const;
  bool operator==(const LatencyProfile&) const = default;
};

enum class LatencyMode {
  kPerExample,           // every client shares one profile
  kPerDomainPerExample,  // straggler clients draw from a slower profile
};

struct LatencyScenario {
  LatencyMode mode = LatencyMode::kPerExample;
  LatencyProfile standard;
  LatencyProfile straggler;
  // Multiplier on the communication term when a client also downloads a
  // separate teacher model. 1.0 means no surcharge.
  double teacher_download_factor = 1.0;

  void Validate() const;
  const LatencyProfile& ProfileFor(bool is_straggler) const;

  // Group parameters used for the EMNIST-like experiments.
  static LatencyScenario PerExample();
  static LatencyScenario PerDomainPerExample();
};

struct LatencySample {
  double comm_s = 0.0;
  double per_example_s = 0.0;
  double overhead_s = 0.0;
  double total_s = 0.0;
  std::size_t n_examples = 0;

  double ComputationSeconds() const {
    return overhead_s + per_example_s * static_cast<double>(n_examples);
  }
};

// Builds a sample from already drawn factors; total = comm + overhead +
// per_example * n_examples.
LatencySample ComposeLatency(double comm_s, double per_example_s,
                             double overhead_s, std::size_t n_examples);

double SampleLognormal(const LognormalParams& params, Stream& rng);

// Draws (comm, per_example, overhead) in that order from the client's group
// profile and composes the round total.
LatencySample SampleClientLatency(const LatencyScenario& scenario,
                                  bool is_straggler, std::size_t n_examples,
                                  Stream& rng);

// Nearest-rank percentile of an ascending-sorted, nonempty range.
double NearestRankPercentile(std::span<const double> sorted, double percent);

struct PercentileRow {
  std::string group;
  std::size_t samples = 0;
  double p50 = 0.0;
  double p95 = 0.0;
  double p99 = 0.0;
};

// Samples one total latency per client per draw epoch (each client uses its
// full shard as n_examples) and reports nearest-rank percentiles for the
// standard and straggler groups. Groups without clients are omitted.
std::vector<PercentileRow> LatencyPercentiles(const LatencyScenario& scenario,
                                              const FederatedDataset& population,
                                              std::uint64_t seed,
                                              std::size_t n_draws);

}  // namespace fedsim

#endif  // FEDSIM_LATENCY_H_
