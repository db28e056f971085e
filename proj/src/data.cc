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

#include "fedsim/data.h"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "fedsim/error.h"
#include "fedsim/rng.h"
#include "json.hpp"

namespace fedsim {
namespace {

std::size_t SampleCategorical(const std::vector<double>& probs, Stream& rng) {
  const double u = rng.Uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return k;
  }
  // Rounding left a sliver above the last cumulative value.
  for (std::size_t k = probs.size(); k-- > 0;) {
    if (probs[k] > 0.0) return k;
  }
  return probs.size() - 1;
}

std::vector<double> SampleDirichlet(const std::vector<double>& alpha,
                                    Stream& rng) {
  std::vector<double> out(alpha.size(), 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    out[k] = alpha[k] > 0.0 ? rng.Gamma(alpha[k]) : 0.0;
    total += out[k];
  }
  if (!(total > 0.0)) {
    // Every gamma underflowed; fall back to the prior mean.
    const double s = std::accumulate(alpha.begin(), alpha.end(), 0.0);
    for (std::size_t k = 0; k < alpha.size(); ++k) out[k] = alpha[k] / s;
    return out;
  }
  for (double& v : out) v /= total;
  return out;
}

Example DrawExample(const std::vector<std::vector<double>>& centers,
                    ClassId label, double spread, Stream& rng) {
  Example ex;
  ex.label = label;
  ex.features = centers[label];
  for (double& f : ex.features) f += spread * rng.Normal();
  return ex;
}

}  // namespace

void SyntheticConfig::Validate() const {
  if (n_classes < 2) throw InvalidParameter("n_classes must be >= 2");
  if (d_in == 0) throw InvalidParameter("d_in must be positive");
  if (m_clients == 0) throw InvalidParameter("m_clients must be >= 1");
  if (!(cluster_spread >= 0.0) || !std::isfinite(cluster_spread)) {
    throw InvalidParameter("cluster_spread must be finite and >= 0");
  }
  if (!(center_scale >= 0.0) || !std::isfinite(center_scale)) {
    throw InvalidParameter("center_scale must be finite and >= 0");
  }
  if (!(concentration > 0.0) || !std::isfinite(concentration)) {
    throw InvalidParameter("concentration must be positive and finite");
  }
  size_distribution.Validate();
  if (!class_mixture.empty()) {
    if (class_mixture.size() != n_classes) {
      throw InvalidParameter("class_mixture must have n_classes entries");
    }
    double total = 0.0;
    for (double p : class_mixture) {
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw InvalidParameter("class_mixture entries must be >= 0");
      }
      total += p;
    }
    if (!(total > 0.0)) throw InvalidParameter("class_mixture sums to zero");
  }
}

std::vector<double> SyntheticConfig::Mixture() const {
  if (class_mixture.empty()) {
    return std::vector<double>(n_classes, 1.0 / static_cast<double>(n_classes));
  }
  const double total =
      std::accumulate(class_mixture.begin(), class_mixture.end(), 0.0);
  std::vector<double> p = class_mixture;
  for (double& v : p) v /= total;
  return p;
}

std::size_t FederatedDataset::NumStragglers() const {
  return static_cast<std::size_t>(
      std::count_if(shards.begin(), shards.end(),
                    [](const ClientShard& s) { return s.is_straggler; }));
}

std::size_t FederatedDataset::TotalExamples() const {
  std::size_t n = 0;
  for (const ClientShard& s : shards) n += s.examples.size();
  return n;
}

void FederatedDataset::CheckInvariants() const {
  std::set<ClassId> seen_on_stragglers;
  for (const ClientShard& s : shards) {
    for (const Example& ex : s.examples) {
      const bool straggler_class = straggler_classes.count(ex.label) > 0;
      if (!s.is_straggler && straggler_class) {
        throw DataError("standard client " + std::to_string(s.client_id) +
                        " holds straggler class " + std::to_string(ex.label));
      }
      if (s.is_straggler && straggler_class) seen_on_stragglers.insert(ex.label);
    }
  }
  for (ClassId c : straggler_classes) {
    if (!seen_on_stragglers.count(c)) {
      throw DataError("straggler class " + std::to_string(c) +
                      " has no examples on any straggler client");
    }
  }
  for (const Example& ex : eval_straggler) {
    if (!straggler_classes.count(ex.label)) {
      throw DataError("eval_straggler contains a non-straggler label");
    }
  }
}

std::vector<std::vector<double>> ClassCenters(const SyntheticConfig& config) {
  config.Validate();
  Stream rng = Stream::Derive(config.seed, Purpose::kDataCenters);
  std::vector<std::vector<double>> centers(config.n_classes,
                                           std::vector<double>(config.d_in));
  for (auto& c : centers) {
    for (double& v : c) v = config.center_scale * rng.Normal();
  }
  return centers;
}

std::vector<ClientShard> GenerateSynthetic(const SyntheticConfig& config) {
  config.Validate();
  const auto centers = ClassCenters(config);
  const std::vector<double> mixture = config.Mixture();
  std::vector<double> alpha = mixture;
  for (double& a : alpha) a *= config.concentration;

  std::vector<ClientShard> shards(config.m_clients);
  for (std::size_t i = 0; i < config.m_clients; ++i) {
    Stream rng = Stream::Derive(config.seed, Purpose::kDataClients, i);
    const double raw = SampleLognormal(config.size_distribution, rng);
    const auto size =
        static_cast<std::size_t>(std::max(1.0, std::round(raw)));
    const std::vector<double> local = SampleDirichlet(alpha, rng);
    ClientShard& shard = shards[i];
    shard.client_id = i;
    shard.examples.reserve(size);
    for (std::size_t e = 0; e < size; ++e) {
      const auto label = static_cast<ClassId>(SampleCategorical(local, rng));
      shard.examples.push_back(
          DrawExample(centers, label, config.cluster_spread, rng));
    }
  }
  return shards;
}

FederatedDataset ApplyStragglerPartition(std::vector<ClientShard> shards,
                                         const std::set<ClassId>& straggler_classes,
                                         std::size_t n_straggler_clients) {
  if (straggler_classes.empty()) {
    throw InvalidParameter("straggler_classes must be nonempty");
  }
  if (n_straggler_clients > shards.size()) {
    throw InvalidParameter("n_straggler_clients (" +
                           std::to_string(n_straggler_clients) +
                           ") exceeds the number of clients (" +
                           std::to_string(shards.size()) + ")");
  }

  std::vector<std::size_t> counts(shards.size(), 0);
  for (std::size_t i = 0; i < shards.size(); ++i) {
    for (const Example& ex : shards[i].examples) {
      counts[i] += straggler_classes.count(ex.label);
    }
  }
  std::vector<std::size_t> order(shards.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return shards[a].client_id < shards[b].client_id;
  });
  for (std::size_t r = 0; r < shards.size(); ++r) {
    shards[order[r]].is_straggler = r < n_straggler_clients;
  }

  FederatedDataset out;
  out.straggler_classes = straggler_classes;
  for (ClientShard& shard : shards) {
    if (!shard.is_straggler) {
      const std::size_t before = shard.examples.size();
      std::erase_if(shard.examples, [&](const Example& ex) {
        return straggler_classes.count(ex.label) > 0;
      });
      out.removed_examples += before - shard.examples.size();
      if (shard.examples.empty()) {
        ++out.dropped_shards;
        continue;
      }
    }
    out.shards.push_back(std::move(shard));
  }
  if (out.dropped_shards > 0) {
    std::cerr << "warning: dropped " << out.dropped_shards
              << " standard client(s) left without examples\n";
  }
  return out;
}

std::pair<std::vector<Example>, std::vector<Example>> MakeEvalSplits(
    const SyntheticConfig& config, const std::set<ClassId>& straggler_classes) {
  const auto centers = ClassCenters(config);
  const std::vector<double> mixture = config.Mixture();
  Stream rng = Stream::Derive(config.seed, Purpose::kDataEval);
  std::vector<Example> total;
  total.reserve(config.eval_size);
  for (std::size_t e = 0; e < config.eval_size; ++e) {
    const auto label = static_cast<ClassId>(SampleCategorical(mixture, rng));
    total.push_back(DrawExample(centers, label, config.cluster_spread, rng));
  }
  std::vector<Example> straggler;
  for (const Example& ex : total) {
    if (straggler_classes.count(ex.label)) straggler.push_back(ex);
  }
  return {std::move(total), std::move(straggler)};
}

FederatedDataset BuildDataset(const SyntheticConfig& config,
                              const std::set<ClassId>& straggler_classes,
                              std::size_t n_straggler_clients) {
  FederatedDataset ds = ApplyStragglerPartition(
      GenerateSynthetic(config), straggler_classes, n_straggler_clients);
  auto [total, straggler] = MakeEvalSplits(config, straggler_classes);
  ds.eval_total = std::move(total);
  ds.eval_straggler = std::move(straggler);
  ds.generator_config = config;
  ds.CheckInvariants();
  return ds;
}

namespace {

nlohmann::json ExamplesToJson(const std::vector<Example>& examples) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Example& ex : examples) {
    arr.push_back({{"x", ex.features}, {"y", ex.label}});
  }
  return arr;
}

std::vector<Example> ExamplesFromJson(const nlohmann::json& arr) {
  std::vector<Example> out;
  out.reserve(arr.size());
  for (const auto& item : arr) {
    out.push_back({item.at("x").get<std::vector<double>>(),
                   item.at("y").get<ClassId>()});
  }
  return out;
}

}  // namespace

std::string ExportDatasetJson(const FederatedDataset& dataset) {
  nlohmann::json j;
  nlohmann::json shards = nlohmann::json::array();
  for (const ClientShard& s : dataset.shards) {
    shards.push_back({{"client_id", s.client_id},
                      {"straggler", s.is_straggler},
                      {"examples", ExamplesToJson(s.examples)}});
  }
  const SyntheticConfig& c = dataset.generator_config;
  j["generator"] = {{"n_classes", c.n_classes},
                    {"d_in", c.d_in},
                    {"m_clients", c.m_clients},
                    {"size_mu", c.size_distribution.mu},
                    {"size_sigma", c.size_distribution.sigma},
                    {"class_mixture", c.class_mixture},
                    {"concentration", c.concentration},
                    {"cluster_spread", c.cluster_spread},
                    {"center_scale", c.center_scale},
                    {"eval_size", c.eval_size},
                    {"seed", c.seed}};
  j["straggler_classes"] = dataset.straggler_classes;
  j["shards"] = std::move(shards);
  j["eval_total"] = ExamplesToJson(dataset.eval_total);
  j["eval_straggler"] = ExamplesToJson(dataset.eval_straggler);
  j["removed_examples"] = dataset.removed_examples;
  j["dropped_shards"] = dataset.dropped_shards;
  return j.dump();
}

FederatedDataset ImportDatasetJson(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("dataset json: ") + e.what());
  }
  try {
    FederatedDataset ds;
    const auto& g = j.at("generator");
    SyntheticConfig& c = ds.generator_config;
    c.n_classes = g.at("n_classes").get<std::size_t>();
    c.d_in = g.at("d_in").get<std::size_t>();
    c.m_clients = g.at("m_clients").get<std::size_t>();
    c.size_distribution = {g.at("size_mu").get<double>(),
                           g.at("size_sigma").get<double>()};
    c.class_mixture = g.at("class_mixture").get<std::vector<double>>();
    c.concentration = g.at("concentration").get<double>();
    c.cluster_spread = g.at("cluster_spread").get<double>();
    c.center_scale = g.at("center_scale").get<double>();
    c.eval_size = g.at("eval_size").get<std::size_t>();
    c.seed = g.at("seed").get<std::uint64_t>();
    ds.straggler_classes = j.at("straggler_classes").get<std::set<ClassId>>();
    for (const auto& s : j.at("shards")) {
      ds.shards.push_back({s.at("client_id").get<std::size_t>(),
                           ExamplesFromJson(s.at("examples")),
                           s.at("straggler").get<bool>()});
    }
    ds.eval_total = ExamplesFromJson(j.at("eval_total"));
    ds.eval_straggler = ExamplesFromJson(j.at("eval_straggler"));
    ds.removed_examples = j.at("removed_examples").get<std::size_t>();
    ds.dropped_shards = j.at("dropped_shards").get<std::size_t>();
    ds.CheckInvariants();
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset json: ") + e.what());
  }
}

}  // namespace fedsim
