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

#include "fedsim/latency.h"

#include <algorithm>
#include <cmath>

#include "fedsim/data.h"
#include "fedsim/error.h"

namespace fedsim {

void LognormalParams::Validate() const {
  if (!std::isfinite(mu)) throw InvalidParameter("lognormal mu must be finite");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw InvalidParameter("lognormal sigma must be finite and >= 0, got " +
                           std::to_string(sigma));
  }
}

double LognormalParams::Median() const { return std::exp(mu); }

double LognormalParams::Mean() const { return std::exp(mu + 0.5 * sigma * sigma); }

void LatencyProfile::Validate() const {
  comm.Validate();
  per_example.Validate();
  overhead.Validate();
}

void LatencyScenario::Validate() const {
  standard.Validate();
  straggler.Validate();
  if (mode == LatencyMode::kPerExample && !(standard == straggler)) {
    throw InvalidParameter(
        "per-example scenario requires identical standard and straggler "
        "profiles");
  }
  if (!(teacher_download_factor >= 1.0) ||
      !std::isfinite(teacher_download_factor)) {
    throw InvalidParameter("teacher_download_factor must be >= 1");
  }
}

const LatencyProfile& LatencyScenario::ProfileFor(bool is_straggler) const {
  return is_straggler ? straggler : standard;
}

LatencyScenario LatencyScenario::PerExample() {
  LatencyScenario s;
  s.mode = LatencyMode::kPerExample;
  s.standard = {{2.7, 1.0}, {-1.6, 0.5}, {3.0, 0.3}};
  s.straggler = s.standard;
  return s;
}

LatencyScenario LatencyScenario::PerDomainPerExample() {
  LatencyScenario s;
  s.mode = LatencyMode::kPerDomainPerExample;
  s.standard = {{2.7, 1.0}, {-2.0, 0.2}, {3.0, 0.3}};
  s.straggler = {{3.7, 1.0}, {-1.0, 0.5}, {3.5, 0.3}};
  return s;
}

LatencySample ComposeLatency(double comm_s, double per_example_s,
                             double overhead_s, std::size_t n_examples) {
  LatencySample s;
  s.comm_s = comm_s;
  s.per_example_s = per_example_s;
  s.overhead_s = overhead_s;
  s.n_examples = n_examples;
  s.total_s = comm_s + (overhead_s + per_example_s * static_cast<double>(n_examples));
  return s;
}

double SampleLognormal(const LognormalParams& params, Stream& rng) {
  params.Validate();
  // Always consume a normal so stream positions do not depend on sigma.
  return std::exp(params.mu + params.sigma * rng.Normal());
}

LatencySample SampleClientLatency(const LatencyScenario& scenario,
                                  bool is_straggler, std::size_t n_examples,
                                  Stream& rng) {
  const LatencyProfile& p = scenario.ProfileFor(is_straggler);
  const double comm = SampleLognormal(p.comm, rng);
  const double per_example = SampleLognormal(p.per_example, rng);
  const double overhead = SampleLognormal(p.overhead, rng);
  return ComposeLatency(comm, per_example, overhead, n_examples);
}

double NearestRankPercentile(std::span<const double> sorted, double percent) {
  if (sorted.empty()) throw InvalidParameter("percentile of empty sample");
  if (!(percent > 0.0 && percent <= 100.0)) {
    throw InvalidParameter("percentile must be in (0, 100]");
  }
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(percent / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

std::vector<PercentileRow> LatencyPercentiles(const LatencyScenario& scenario,
                                              const FederatedDataset& population,
                                              std::uint64_t seed,
                                              std::size_t n_draws) {
  if (population.shards.empty()) {
    throw InvalidParameter("latency percentiles need a nonempty population");
  }
  if (n_draws == 0) throw InvalidParameter("n_draws must be positive");
  scenario.Validate();

  std::vector<double> standard;
  std::vector<double> straggler;
  for (std::size_t draw = 0; draw < n_draws; ++draw) {
    for (std::size_t i = 0; i < population.shards.size(); ++i) {
      const ClientShard& shard = population.shards[i];
      Stream rng = Stream::Derive(seed, Purpose::kLatencyReport, i, draw);
      const LatencySample s = SampleClientLatency(
          scenario, shard.is_straggler, shard.examples.size(), rng);
      (shard.is_straggler ? straggler : standard).push_back(s.total_s);
    }
  }

  std::vector<PercentileRow> rows;
  auto summarize = [&rows](const std::string& name, std::vector<double>& v) {
    if (v.empty()) return;
    std::sort(v.begin(), v.end());
    rows.push_back({name, v.size(), NearestRankPercentile(v, 50.0),
                    NearestRankPercentile(v, 95.0),
                    NearestRankPercentile(v, 99.0)});
  };
  summarize("standard", standard);
  summarize("straggler", straggler);
  return rows;
}

}  // namespace fedsim
