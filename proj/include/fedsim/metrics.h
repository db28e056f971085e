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

#ifndef FEDSIM_METRICS_H_
#define FEDSIM_METRICS_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedsim/data.h"
#include "fedsim/engine.h"
#include "fedsim/model.h"

namespace fedsim {

struct MetricsRecord {
  double virtual_time_s = 0.0;
  std::uint64_t server_step = 0;
  std::uint64_t aggregated_updates = 0;
  double total_acc = 0.0;
  double straggler_acc = 0.0;
  ModelKind which_model = ModelKind::kGlobal;

  bool operator==(const MetricsRecord&) const = default;
};

struct EvalResult {
  double total_acc = 0.0;
  double straggler_acc = 0.0;
};

// Accuracy on the first `cap` examples of each eval split (0: no cap).
EvalResult Evaluate(const ParamVector& model, const FederatedDataset& dataset,
                    std::size_t cap = 0);

// Linear interpolation between closest ranks (position p/100 * (n - 1)).
double InterpolatedPercentile(std::vector<double> values, double percent);

struct Band {
  double median = 0.0;
  double lo = 0.0;  // 5th percentile
  double hi = 0.0;  // 95th percentile
};

Band SummarizeValues(std::span<const double> values);

// Final-record statistics over independent trials.
struct TrialSummary {
  std::size_t n_trials = 0;
  Band total_acc;
  Band straggler_acc;
  double total_time_s_median = 0.0;
};

// Uses the last record of each run as its final value.
TrialSummary SummarizeTrials(std::span<const std::vector<MetricsRecord>> runs);

// One-line JSON object for a record.
std::string RecordToJson(const MetricsRecord& record);

}  // namespace fedsim

#endif  // FEDSIM_METRICS_H_
