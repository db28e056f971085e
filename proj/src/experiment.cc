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

#include "fedsim/experiment.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <type_traits>
#include <utility>

#include "fedsim/error.h"
#include "fedsim/rng.h"
#include "json.hpp"

static_assert(std::is_same_v<std::size_t, std::uint64_t>,
              "config reader assumes a 64-bit size_t");

namespace fedsim {
namespace {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

// Strict view of one JSON object. Every key must be consumed before Finish().
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(Where() + ": expected an object");
  }

  bool Has(const char* key) const { return j_.contains(key); }

  std::string Where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? std::string("<root>") : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const Json* Take(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void Get(const char* key, double& out) {
    if (const Json* v = Take(key)) {
      if (v->is_string() && (*v == "inf" || *v == "infinity")) {
        out = std::numeric_limits<double>::infinity();
      } else if (v->is_number()) {
        out = v->get<double>();
      } else {
        throw ConfigError(Where(key) + ": expected a number");
      }
    }
  }

  void Get(const char* key, std::uint64_t& out) {
    if (const Json* v = Take(key)) {
      if (!v->is_number_unsigned()) {
        throw ConfigError(Where(key) + ": expected a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }

  void Get(const char* key, bool& out) {
    if (const Json* v = Take(key)) {
      if (!v->is_boolean()) throw ConfigError(Where(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }

  void Get(const char* key, std::string& out) {
    if (const Json* v = Take(key)) {
      if (!v->is_string()) throw ConfigError(Where(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }

  template <typename T>
  void GetOptional(const char* key, std::optional<T>& out) {
    if (const Json* v = Take(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      T value{};
      const Json wrapped = {{key, *v}};
      Fields probe(wrapped, path_);
      probe.Get(key, value);
      out = value;
    }
  }

  Fields Child(const char* key) {
    const Json* v = Take(key);
    static const Json kEmpty = Json::object();
    return Fields(v ? *v : kEmpty, Where(key));
  }

  void Finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(Where(it.key()) + ": unknown key");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void ReadLognormal(Fields f, LognormalParams& p) {
  f.Get("mu", p.mu);
  f.Get("sigma", p.sigma);
  f.Finish();
}

void ReadProfile(Fields f, LatencyProfile& p) {
  if (f.Has("comm")) ReadLognormal(f.Child("comm"), p.comm);
  if (f.Has("per_example")) ReadLognormal(f.Child("per_example"), p.per_example);
  if (f.Has("overhead")) ReadLognormal(f.Child("overhead"), p.overhead);
  f.Finish();
}

void ReadDataset(Fields f, ExperimentConfig& c) {
  SyntheticConfig& d = c.dataset;
  f.Get("n_classes", d.n_classes);
  f.Get("d_in", d.d_in);
  f.Get("m_clients", d.m_clients);
  double median = d.size_distribution.Median();
  f.Get("size_median", median);
  if (!(median > 0.0)) throw ConfigError(f.Where("size_median") + ": must be positive");
  d.size_distribution.mu = std::log(median);
  f.Get("size_sigma", d.size_distribution.sigma);
  if (const Json* v = f.Take("class_mixture")) {
    if (!v->is_array()) throw ConfigError(f.Where("class_mixture") + ": expected an array");
    d.class_mixture.clear();
    for (const Json& x : *v) {
      if (!x.is_number()) throw ConfigError(f.Where("class_mixture") + ": expected numbers");
      d.class_mixture.push_back(x.get<double>());
    }
  }
  f.Get("concentration", d.concentration);
  f.Get("cluster_spread", d.cluster_spread);
  f.Get("center_scale", d.center_scale);
  f.Get("eval_size", d.eval_size);
  f.Get("seed", d.seed);
  if (const Json* v = f.Take("straggler_classes")) {
    if (!v->is_array()) {
      throw ConfigError(f.Where("straggler_classes") + ": expected an array");
    }
    c.straggler_classes.clear();
    for (const Json& x : *v) {
      if (!x.is_number_unsigned()) {
        throw ConfigError(f.Where("straggler_classes") + ": expected class indices");
      }
      c.straggler_classes.insert(x.get<ClassId>());
    }
  }
  f.Get("n_straggler_clients", c.n_straggler_clients);
  f.Finish();
}

void ReadLatency(Fields f, LatencyScenario& s) {
  std::string mode = "pdpe";
  f.Get("mode", mode);
  if (mode == "pe") {
    s = LatencyScenario::PerExample();
  } else if (mode == "pdpe") {
    s = LatencyScenario::PerDomainPerExample();
  } else {
    throw ConfigError(f.Where("mode") + ": expected \"pe\" or \"pdpe\", got \"" + mode + "\"");
  }
  if (f.Has("standard")) ReadProfile(f.Child("standard"), s.standard);
  if (f.Has("straggler")) {
    if (s.mode == LatencyMode::kPerExample) {
      throw ConfigError(f.Where("straggler") + ": the pe scenario has a single profile");
    }
    ReadProfile(f.Child("straggler"), s.straggler);
  }
  if (s.mode == LatencyMode::kPerExample) s.straggler = s.standard;
  f.Get("teacher_download_factor", s.teacher_download_factor);
  f.Finish();
}

void ReadModel(Fields f, ModelConfig& m) {
  f.Get("hidden", m.hidden);
  f.Get("init_scale", m.init_scale);
  std::string distill = m.distill == DistillLoss::kSoftCrossEntropy ? "soft_ce" : "logit_mse";
  f.Get("distill", distill);
  if (distill == "soft_ce") {
    m.distill = DistillLoss::kSoftCrossEntropy;
  } else if (distill == "logit_mse") {
    m.distill = DistillLoss::kLogitMse;
  } else {
    throw ConfigError(f.Where("distill") + ": expected \"soft_ce\" or \"logit_mse\"");
  }
  f.Get("temperature", m.temperature);
  f.Finish();
}

void ReadAlgo(Fields f, ExperimentConfig& c) {
  std::string name = AlgorithmName(c.algo.algorithm);
  f.Get("algorithm", name);
  try {
    c.algo = AlgoConfig::Defaults(ParseAlgorithm(name));
  } catch (const ConfigError& e) {
    throw ConfigError(f.Where("algorithm") + ": " + e.what());
  }
  AlgoConfig& a = c.algo;
  const bool over_selecting =
      a.algorithm == Algorithm::kFareDust || a.algorithm == Algorithm::kFeast;
  f.Get("eta_g", a.eta_g);
  f.Get("eta_l", a.eta_l);
  const bool has_eta_a = f.Has("eta_a");
  const bool has_kappa = f.Has("kappa");
  if (has_eta_a && has_kappa) {
    throw ConfigError(f.Where("kappa") + ": give either eta_a or kappa, not both");
  }
  if (has_eta_a) {
    f.Get("eta_a", a.eta_a);
  } else {
    const AlgoConfig defaults = AlgoConfig::Defaults(a.algorithm);
    double kappa = defaults.eta_a / defaults.eta_g;
    f.Get("kappa", kappa);
    a.eta_a = kappa * a.eta_g;
  }
  const bool has_cohort = f.Has("cohort");
  f.Get("cohort", a.cohort);
  if (has_cohort) {
    a.over_selection_cohort =
        over_selecting ? static_cast<std::size_t>(std::llround(1.2 * static_cast<double>(a.cohort)))
                       : a.cohort;
  }
  f.Get("over_selection_cohort", a.over_selection_cohort);
  f.Get("buffer", a.buffer);
  f.Get("concurrency", a.concurrency);
  f.Get("teachers", a.teachers);
  f.Get("rho", a.rho);
  f.Get("nu", a.nu);
  f.Get("beta", a.beta);
  f.Get("ema", a.ema);
  f.Get("tau_max", a.tau_max);
  f.Get("strict_sequential", a.strict_sequential);
  std::string empty = a.empty_history == EmptyHistoryTeacher::kCurrentModel
                          ? "current_model"
                          : "no_distill";
  f.Get("empty_history", empty);
  if (empty == "current_model") {
    a.empty_history = EmptyHistoryTeacher::kCurrentModel;
  } else if (empty == "no_distill") {
    a.empty_history = EmptyHistoryTeacher::kNoDistill;
  } else {
    throw ConfigError(f.Where("empty_history") +
                      ": expected \"current_model\" or \"no_distill\"");
  }
  if (f.Has("server_optimizer")) {
    Fields s = f.Child("server_optimizer");
    std::string kind = a.server.kind == ServerOptimizerKind::kSgd ? "sgd" : "adam";
    s.Get("kind", kind);
    if (kind == "sgd") {
      a.server.kind = ServerOptimizerKind::kSgd;
    } else if (kind == "adam") {
      a.server.kind = ServerOptimizerKind::kAdam;
    } else {
      throw ConfigError(s.Where("kind") + ": expected \"sgd\" or \"adam\"");
    }
    s.Get("beta1", a.server.beta1);
    s.Get("beta2", a.server.beta2);
    s.Get("epsilon", a.server.epsilon);
    s.Finish();
  }
  ClientConfig& cl = c.client;
  f.Get("batch_size", cl.batch_size);
  f.Get("epochs", cl.epochs);
  f.GetOptional("local_steps", cl.local_steps);
  f.Get("time_limit", cl.time_limit);
  f.GetOptional("time_limit_s", cl.time_limit_s);
  if (cl.time_limit_s) cl.time_limit = true;
  f.Finish();
}

OrderedJson LognormalJson(const LognormalParams& p) {
  return OrderedJson{{"mu", p.mu}, {"sigma", p.sigma}};
}

OrderedJson ProfileJson(const LatencyProfile& p) {
  return OrderedJson{{"comm", LognormalJson(p.comm)},
                     {"per_example", LognormalJson(p.per_example)},
                     {"overhead", LognormalJson(p.overhead)}};
}

OrderedJson ConfigJson(const ExperimentConfig& c) {
  OrderedJson j;
  j["label"] = c.label;
  const SyntheticConfig& d = c.dataset;
  j["dataset"] = {{"n_classes", d.n_classes},
                  {"d_in", d.d_in},
                  {"m_clients", d.m_clients},
                  {"size_median", d.size_distribution.Median()},
                  {"size_sigma", d.size_distribution.sigma},
                  {"class_mixture", d.class_mixture},
                  {"concentration", d.concentration},
                  {"cluster_spread", d.cluster_spread},
                  {"center_scale", d.center_scale},
                  {"eval_size", d.eval_size},
                  {"seed", d.seed},
                  {"straggler_classes", c.straggler_classes},
                  {"n_straggler_clients", c.n_straggler_clients}};
  OrderedJson lat;
  lat["mode"] = c.latency.mode == LatencyMode::kPerExample ? "pe" : "pdpe";
  lat["standard"] = ProfileJson(c.latency.standard);
  if (c.latency.mode == LatencyMode::kPerDomainPerExample) {
    lat["straggler"] = ProfileJson(c.latency.straggler);
  }
  lat["teacher_download_factor"] = c.latency.teacher_download_factor;
  j["latency"] = lat;
  j["model"] = {{"hidden", c.model.hidden},
                {"init_scale", c.model.init_scale},
                {"distill", c.model.distill == DistillLoss::kSoftCrossEntropy ? "soft_ce"
                                                                               : "logit_mse"},
                {"temperature", c.model.temperature}};
  const AlgoConfig& a = c.algo;
  OrderedJson algo;
  algo["algorithm"] = AlgorithmName(a.algorithm);
  algo["eta_g"] = a.eta_g;
  algo["eta_l"] = a.eta_l;
  algo["eta_a"] = a.eta_a;
  algo["cohort"] = a.cohort;
  algo["over_selection_cohort"] = a.over_selection_cohort;
  algo["buffer"] = a.buffer;
  algo["concurrency"] = a.concurrency;
  algo["teachers"] = a.teachers;
  algo["rho"] = a.rho;
  algo["nu"] = a.nu;
  algo["beta"] = a.beta;
  algo["ema"] = a.ema;
  if (std::isfinite(a.tau_max)) {
    algo["tau_max"] = a.tau_max;
  } else {
    algo["tau_max"] = "inf";
  }
  algo["strict_sequential"] = a.strict_sequential;
  algo["empty_history"] =
      a.empty_history == EmptyHistoryTeacher::kCurrentModel ? "current_model" : "no_distill";
  algo["server_optimizer"] = {
      {"kind", a.server.kind == ServerOptimizerKind::kSgd ? "sgd" : "adam"},
      {"beta1", a.server.beta1},
      {"beta2", a.server.beta2},
      {"epsilon", a.server.epsilon}};
  algo["batch_size"] = c.client.batch_size;
  algo["epochs"] = c.client.epochs;
  algo["local_steps"] = c.client.local_steps ? OrderedJson(*c.client.local_steps)
                                             : OrderedJson(nullptr);
  algo["time_limit"] = c.client.time_limit;
  algo["time_limit_s"] = c.client.time_limit_s ? OrderedJson(*c.client.time_limit_s)
                                               : OrderedJson(nullptr);
  j["algo"] = algo;
  j["exclusive"] = c.exclusive;
  j["budget"] = c.budget;
  j["eval_every"] = c.eval_every;
  j["eval_cap"] = c.eval_cap;
  j["trials"] = c.trials;
  j["seed"] = c.seed;
  j["out"] = c.out;
  return j;
}

}  // namespace

void ExperimentConfig::Validate() const {
  dataset.Validate();
  latency.Validate();
  algo.Validate();
  if (straggler_classes.empty()) throw ConfigError("dataset.straggler_classes is empty");
  for (ClassId k : straggler_classes) {
    if (k >= dataset.n_classes) {
      throw ConfigError("dataset.straggler_classes: class " + std::to_string(k) +
                        " is out of range");
    }
  }
  if (n_straggler_clients > dataset.m_clients) {
    throw ConfigError("dataset.n_straggler_clients exceeds m_clients");
  }
  if (budget == 0) throw ConfigError("budget must be positive");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  if (trials == 0) throw ConfigError("trials must be positive");
  if (client.batch_size == 0) throw ConfigError("algo.batch_size must be positive");
  if (client.epochs == 0 && !client.local_steps) throw ConfigError("algo.epochs must be positive");
  if (client.local_steps && *client.local_steps == 0) {
    throw ConfigError("algo.local_steps must be positive");
  }
  if (client.time_limit_s && !(*client.time_limit_s > 0.0)) {
    throw ConfigError("algo.time_limit_s must be positive");
  }
  if (!(model.init_scale >= 0.0)) throw ConfigError("model.init_scale must be >= 0");
  if (!(model.temperature > 0.0)) throw ConfigError("model.temperature must be positive");
}

ExperimentConfig ParseExperimentConfig(const std::string& json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Fields root(j, "");
  if (root.Has("dataset")) ReadDataset(root.Child("dataset"), c);
  if (root.Has("latency")) ReadLatency(root.Child("latency"), c.latency);
  if (root.Has("model")) ReadModel(root.Child("model"), c.model);
  if (root.Has("algo")) {
    ReadAlgo(root.Child("algo"), c);
  } else {
    c.algo = AlgoConfig::Defaults(Algorithm::kFedAvg);
  }
  root.Get("label", c.label);
  root.Get("exclusive", c.exclusive);
  root.Get("budget", c.budget);
  root.Get("eval_every", c.eval_every);
  root.Get("eval_cap", c.eval_cap);
  root.Get("trials", c.trials);
  root.Get("seed", c.seed);
  root.Get("out", c.out);
  root.Finish();
  if (c.label.empty()) c.label = AlgorithmName(c.algo.algorithm);
  try {
    c.Validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentConfig LoadExperimentConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return ParseExperimentConfig(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string ExperimentConfigToJson(const ExperimentConfig& config) {
  return ConfigJson(config).dump(2);
}

std::string ConfigHash(const ExperimentConfig& config) {
  OrderedJson j = ConfigJson(config);
  j.erase("seed");
  j.erase("trials");
  j.erase("out");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------

ShardPopulation::ShardPopulation(const FederatedDataset& dataset, LocalTrainSpec spec)
    : dataset_(dataset), spec_(std::move(spec)) {
  for (const ClientShard& s : dataset_.shards) {
    if (s.examples.empty()) {
      throw DataError("client " + std::to_string(s.client_id) + " has no examples");
    }
  }
}

bool ShardPopulation::IsStraggler(ClientId id) const {
  return dataset_.shards.at(id).is_straggler;
}

std::size_t ShardPopulation::NumExamples(ClientId id) const {
  return dataset_.shards.at(id).examples.size();
}

std::size_t ShardPopulation::ExamplesPerStep(ClientId id) const {
  return std::min(spec_.batch_size, NumExamples(id));
}

ClientWork ShardPopulation::Train(ClientId id, const TrainRequest& request,
                                  Stream& rng) const {
  LocalTrainSpec spec = spec_;
  spec.loss.rho = request.rho;
  spec.loss.nu = request.nu;
  if (request.max_steps) spec.steps = *request.max_steps;
  const ParamVector* anchor = request.nu > 0.0 ? request.start.get() : nullptr;
  LocalResult r = LocalSgd(*request.start, dataset_.shards.at(id).examples, spec,
                           request.teacher.get(), anchor, rng);
  return ClientWork{std::move(r.w), r.steps, r.examples_processed};
}

double DefaultTimeLimit(const LatencyScenario& scenario, const ClientPopulation& population,
                        std::uint64_t seed) {
  std::vector<double> times;
  times.reserve(population.size());
  for (ClientId id = 0; id < population.size(); ++id) {
    Stream rng = Stream::Derive(seed, Purpose::kTimeLimit, id);
    const LatencySample s = SampleClientLatency(scenario, population.IsStraggler(id),
                                                population.NumExamples(id), rng);
    times.push_back(s.ComputationSeconds());
  }
  std::sort(times.begin(), times.end());
  return NearestRankPercentile(times, 75.0);
}

Layout ModelLayout(const ExperimentConfig& config) {
  return Layout{config.dataset.d_in, config.model.hidden, config.dataset.n_classes};
}

LocalTrainSpec MakeTrainSpec(const ExperimentConfig& config) {
  LocalTrainSpec spec;
  spec.epochs = config.client.epochs;
  spec.steps = config.client.local_steps;
  spec.batch_size = config.client.batch_size;
  spec.eta_l = config.algo.eta_l;
  spec.loss.distill = config.model.distill;
  spec.loss.temperature = config.model.temperature;
  return spec;
}

FederatedDataset BuildExperimentDataset(const ExperimentConfig& config) {
  return BuildDataset(config.dataset, config.straggler_classes, config.n_straggler_clients);
}

RunResult RunExperiment(const ExperimentConfig& config, const FederatedDataset& dataset,
                        std::uint64_t seed, const RunOptions& options) {
  config.Validate();
  ShardPopulation population(dataset, MakeTrainSpec(config));

  RunResult result;
  result.seed = seed;
  SimOptions sim_options;
  sim_options.seed = seed;
  sim_options.jobs = options.jobs;
  sim_options.exclusive = config.exclusive;
  sim_options.budget = config.budget;
  if (config.client.time_limit) {
    sim_options.time_limit_s = config.client.time_limit_s
                                   ? *config.client.time_limit_s
                                   : DefaultTimeLimit(config.latency, population, seed);
    result.time_limit_s = sim_options.time_limit_s;
  }
  Simulation sim(population, config.latency, sim_options);
  sim.set_record_jobs(options.record_jobs);

  Stream init = Stream::Derive(seed, Purpose::kInit);
  std::unique_ptr<StrategyBase> strategy =
      MakeStrategy(config.algo, InitParams(ModelLayout(config), config.model.init_scale, init));
  strategy->set_record_trajectory(options.record_trajectory);

  auto evaluate = [&] {
    const EvalResult e = Evaluate(strategy->OutputModel(), dataset, config.eval_cap);
    result.records.push_back({sim.now(), sim.server_steps(), sim.aggregated_updates(),
                              e.total_acc, e.straggler_acc, strategy->OutputKind()});
  };
  evaluate();
  sim.SetServerUpdateHook([&] {
    if (sim.server_steps() % config.eval_every == 0) evaluate();
  });
  result.total_time_s = RunEventLoop(sim, *strategy);
  evaluate();

  result.server_steps = sim.server_steps();
  result.aggregated_updates = sim.aggregated_updates();
  result.discarded_updates = strategy->DiscardedUpdates();
  result.final_model = strategy->OutputModel();
  result.output_kind = strategy->OutputKind();
  result.trajectory = strategy->trajectory();
  result.jobs = sim.jobs();
  return result;
}

std::string RunToJsonl(const ExperimentConfig& config, const RunResult& result) {
  std::string out;
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const MetricsRecord& r = result.records[i];
    if (i + 1 < result.records.size()) {
      out += RecordToJson(r);
    } else {
      OrderedJson j = OrderedJson::parse(RecordToJson(r));
      j["final"] = true;
      j["algorithm"] = AlgorithmName(config.algo.algorithm);
      j["label"] = config.label;
      j["config_hash"] = ConfigHash(config);
      j["seed"] = result.seed;
      j["server_steps"] = result.server_steps;
      j["discarded_updates"] = result.discarded_updates;
      out += j.dump();
    }
    out += '\n';
  }
  return out;
}

}  // namespace fedsim
