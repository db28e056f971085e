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

#include "fedsim/metrics.h"

#include <algorithm>
#include <cmath>

#include "fedsim/error.h"
#include "json.hpp"

namespace fedsim {
namespace {

std::span<const Example> Capped(const std::vector<Example>& split, std::size_t cap) {
  const std::size_t n = cap == 0 ? split.size() : std::min(cap, split.size());
  return std::span<const Example>(split.data(), n);
}

}  // namespace

EvalResult Evaluate(const ParamVector& model, const FederatedDataset& dataset,
                    std::size_t cap) {
  if (dataset.eval_total.empty()) throw DataError("eval_total split is empty");
  if (dataset.eval_straggler.empty()) throw DataError("eval_straggler split is empty");
  EvalResult r;
  r.total_acc = Accuracy(model, Capped(dataset.eval_total, cap));
  r.straggler_acc = Accuracy(model, Capped(dataset.eval_straggler, cap));
  return r;
}

double InterpolatedPercentile(std::vector<double> values, double percent) {
  if (values.empty()) throw InvalidParameter("percentile of an empty set");
  if (!(percent >= 0.0 && percent <= 100.0)) {
    throw InvalidParameter("percentile must lie in [0, 100]");
  }
  std::sort(values.begin(), values.end());
  const double pos = percent / 100.0 * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Band SummarizeValues(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  return Band{InterpolatedPercentile(v, 50.0), InterpolatedPercentile(v, 5.0),
              InterpolatedPercentile(v, 95.0)};
}

TrialSummary SummarizeTrials(std::span<const std::vector<MetricsRecord>> runs) {
  if (runs.empty()) throw InvalidParameter("no runs to summarize");
  std::vector<double> total, straggler, time;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].empty()) {
      throw InvalidParameter("run " + std::to_string(i) + " has no records");
    }
    const MetricsRecord& last = runs[i].back();
    total.push_back(last.total_acc);
    straggler.push_back(last.straggler_acc);
    time.push_back(last.virtual_time_s);
  }
  TrialSummary s;
  s.n_trials = runs.size();
  s.total_acc = SummarizeValues(total);
  s.straggler_acc = SummarizeValues(straggler);
  s.total_time_s_median = InterpolatedPercentile(time, 50.0);
  return s;
}

std::string RecordToJson(const MetricsRecord& record) {
  nlohmann::ordered_json j;
  j["virtual_time_s"] = record.virtual_time_s;
  j["server_step"] = record.server_step;
  j["aggregated_updates"] = record.aggregated_updates;
  j["total_acc"] = record.total_acc;
  j["straggler_acc"] = record.straggler_acc;
  j["which_model"] = ModelKindName(record.which_model);
  return j.dump();
}

}  // namespace fedsim
