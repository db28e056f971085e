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

#include "fedsim/cli.h"

#include <glob.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fedsim/error.h"
#include "fedsim/experiment.h"
#include "fedsim/latency.h"
#include "fedsim/metrics.h"
#include "fedsim/verify.h"
#include "json.hpp"

namespace fedsim {
namespace {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Input problems map to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

std::size_t DefaultJobs() {
  if (const char* env = std::getenv("FEDSIM_JOBS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path);
  out << text;
  if (!out) throw Error("write failed: " + path);
}

ExperimentConfig LoadConfigOrThrow(const std::string& path) {
  if (!fs::exists(path)) throw InputError("config file not found: " + path);
  try {
    return ParseExperimentConfig(ReadFile(path));
  } catch (const ConfigError& e) {
    throw InputError(path + ": " + e.what());
  }
}

void ParallelFor(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(jobs, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// Runs every trial of `config`; trials share one dataset. Parallelism goes to
// trials when there are several, otherwise into the client pool.
std::vector<RunResult> RunTrials(const ExperimentConfig& config, std::size_t jobs) {
  const FederatedDataset dataset = BuildExperimentDataset(config);
  std::vector<RunResult> results(config.trials);
  RunOptions opts;
  opts.jobs = config.trials > 1 ? 1 : jobs;
  ParallelFor(config.trials, config.trials > 1 ? jobs : 1, [&](std::size_t i) {
    results[i] = RunExperiment(config, dataset, config.seed + i, opts);
  });
  return results;
}

std::string Stem(const std::string& out) {
  const fs::path p(out);
  if (p.extension() == ".jsonl") return (p.parent_path() / p.stem()).string();
  return out;
}

std::string FormatDouble(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::string out;
};

int CmdSimulate(const SimulateArgs& a, std::size_t jobs, std::ostream& out) {
  ExperimentConfig config = LoadConfigOrThrow(a.config);
  if (a.seed) config.seed = *a.seed;
  if (a.trials) {
    if (*a.trials == 0) throw InputError("--trials must be positive");
    config.trials = *a.trials;
  }
  if (!a.out.empty()) config.out = a.out;
  if (config.out.empty()) throw InputError("no output path: pass --out or set \"out\"");

  const std::vector<RunResult> results = RunTrials(config, jobs);
  const std::string stem = Stem(config.out);
  OrderedJson files = OrderedJson::array();
  OrderedJson seeds = OrderedJson::array();
  for (const RunResult& r : results) {
    const std::string path = config.trials == 1
                                 ? config.out
                                 : stem + "_seed" + std::to_string(r.seed) + ".jsonl";
    WriteFile(path, RunToJsonl(config, r));
    files.push_back(path);
    seeds.push_back(r.seed);
    const MetricsRecord& f = r.records.back();
    out << config.label << " seed " << r.seed << ": total_acc " << FormatDouble(f.total_acc)
        << " straggler_acc " << FormatDouble(f.straggler_acc) << " time_s "
        << FormatDouble(f.virtual_time_s) << " -> " << path << "\n";
  }
  OrderedJson manifest;
  manifest["tool_version"] = kToolVersion;
  manifest["config_hash"] = ConfigHash(config);
  manifest["label"] = config.label;
  manifest["algorithm"] = AlgorithmName(config.algo.algorithm);
  manifest["seeds"] = seeds;
  manifest["files"] = files;
  manifest["config"] = OrderedJson::parse(ExperimentConfigToJson(config));
  WriteFile(stem + ".manifest.json", manifest.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------

std::vector<std::string> ExpandInputs(const std::vector<std::string>& patterns) {
  std::vector<std::string> files;
  for (const std::string& pat : patterns) {
    glob_t g{};
    const int rc = ::glob(pat.c_str(), 0, nullptr, &g);
    if (rc == 0) {
      for (std::size_t i = 0; i < g.gl_pathc; ++i) files.emplace_back(g.gl_pathv[i]);
    }
    globfree(&g);
    if (rc == GLOB_NOMATCH) throw InputError("no files match: " + pat);
    if (rc != 0) throw InputError("cannot expand: " + pat);
  }
  std::sort(files.begin(), files.end());
  files.erase(std::unique(files.begin(), files.end()), files.end());
  return files;
}

struct FinalRecord {
  std::string file;
  std::string label;
  std::string config_hash;
  MetricsRecord record;
};

FinalRecord ReadFinalRecord(const std::string& path) {
  std::istringstream in(ReadFile(path));
  std::string line;
  std::optional<FinalRecord> found;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.value("final", false)) continue;
    try {
      FinalRecord f;
      f.file = path;
      f.label = j.at("label").get<std::string>();
      f.config_hash = j.at("config_hash").get<std::string>();
      f.record.virtual_time_s = j.at("virtual_time_s").get<double>();
      f.record.server_step = j.at("server_step").get<std::uint64_t>();
      f.record.aggregated_updates = j.at("aggregated_updates").get<std::uint64_t>();
      f.record.total_acc = j.at("total_acc").get<double>();
      f.record.straggler_acc = j.at("straggler_acc").get<double>();
      found = f;
    } catch (const Json::exception& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!found) throw InputError(path + ": no final record");
  return *found;
}

std::string SummaryCsv(const std::map<std::string, std::vector<FinalRecord>>& groups) {
  std::ostringstream os;
  os << "algorithm,metric,median,lo,hi,time_s_median,n_trials\n";
  for (const auto& [label, recs] : groups) {
    std::vector<std::vector<MetricsRecord>> runs;
    for (const FinalRecord& f : recs) runs.push_back({f.record});
    const TrialSummary s = SummarizeTrials(runs);
    auto row = [&](const char* metric, const Band& b) {
      os << label << "," << metric << "," << FormatDouble(b.median) << ","
         << FormatDouble(b.lo) << "," << FormatDouble(b.hi) << ","
         << FormatDouble(s.total_time_s_median) << "," << s.n_trials << "\n";
    };
    row("straggler_acc", s.straggler_acc);
    row("total_acc", s.total_acc);
  }
  return os.str();
}

int CmdReport(const std::vector<std::string>& inputs, const std::string& out_path,
              bool force_mixed, std::ostream& out) {
  if (inputs.empty()) throw InputError("report needs --in");
  std::map<std::string, std::vector<FinalRecord>> groups;
  for (const std::string& file : ExpandInputs(inputs)) {
    FinalRecord f = ReadFinalRecord(file);
    auto& g = groups[f.label];
    if (!g.empty() && g.front().config_hash != f.config_hash && !force_mixed) {
      throw InputError("label '" + f.label + "' mixes config hashes " +
                       g.front().config_hash + " (" + g.front().file + ") and " +
                       f.config_hash + " (" + f.file + "); pass --force-mixed to combine");
    }
    g.push_back(std::move(f));
  }
  const std::string csv = SummaryCsv(groups);
  if (out_path.empty()) {
    out << csv;
  } else {
    WriteFile(out_path, csv);
    out << "wrote " << out_path << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct SweepPoint {
  std::vector<std::string> values;  // rendered parameter values
  double objective = 0.0;
  TrialSummary summary;
  std::size_t index = 0;
};

int CmdSweep(const std::string& path, const std::string& out_path,
             std::optional<std::size_t> max_grid_flag, std::size_t jobs, std::ostream& out) {
  if (!fs::exists(path)) throw InputError("sweep file not found: " + path);
  Json sweep;
  try {
    sweep = Json::parse(ReadFile(path));
  } catch (const Json::parse_error& e) {
    throw InputError(path + ": invalid JSON: " + e.what());
  }
  if (!sweep.is_object()) throw InputError(path + ": expected an object");
  for (auto it = sweep.begin(); it != sweep.end(); ++it) {
    const std::string& k = it.key();
    if (k != "base" && k != "grid" && k != "objective" && k != "max_grid") {
      throw InputError(path + ": " + k + ": unknown key");
    }
  }
  if (!sweep.contains("base") || !sweep["base"].is_object()) {
    throw InputError(path + ": base: expected an experiment config object");
  }
  if (!sweep.contains("grid") || !sweep["grid"].is_object() || sweep["grid"].empty()) {
    throw InputError(path + ": grid: expected a nonempty object of value lists");
  }
  const std::string objective = sweep.value("objective", std::string("straggler_acc"));
  if (objective != "straggler_acc" && objective != "total_acc") {
    throw InputError(path + ": objective: expected straggler_acc or total_acc");
  }
  std::size_t max_grid = sweep.value("max_grid", std::size_t{64});
  if (max_grid_flag) max_grid = *max_grid_flag;

  std::vector<std::string> names;
  std::vector<std::vector<Json>> lists;
  std::size_t total = 1;
  for (auto it = sweep["grid"].begin(); it != sweep["grid"].end(); ++it) {
    if (!it->is_array() || it->empty()) {
      throw InputError(path + ": grid." + it.key() + ": expected a nonempty array");
    }
    names.push_back(it.key());
    lists.emplace_back(it->begin(), it->end());
    total *= it->size();
  }
  if (total > max_grid) {
    throw InputError("grid has " + std::to_string(total) + " points, above the cap of " +
                     std::to_string(max_grid) + "; raise it with --max-grid");
  }

  std::vector<SweepPoint> points(total);
  for (std::size_t p = 0; p < total; ++p) {
    Json cfg = sweep["base"];
    std::size_t rest = p;
    points[p].index = p;
    for (std::size_t k = names.size(); k-- > 0;) {
      const Json& v = lists[k][rest % lists[k].size()];
      rest /= lists[k].size();
      std::string ptr = "/" + names[k];
      std::replace(ptr.begin(), ptr.end(), '.', '/');
      cfg[Json::json_pointer(ptr)] = v;
    }
    for (std::size_t k = 0; k < names.size(); ++k) {
      std::string ptr = "/" + names[k];
      std::replace(ptr.begin(), ptr.end(), '.', '/');
      points[p].values.push_back(cfg[Json::json_pointer(ptr)].dump());
    }
    ExperimentConfig config;
    try {
      config = ParseExperimentConfig(cfg.dump());
    } catch (const ConfigError& e) {
      throw InputError(path + ": grid point " + std::to_string(p) + ": " + e.what());
    }
    const std::vector<RunResult> results = RunTrials(config, jobs);
    std::vector<std::vector<MetricsRecord>> runs;
    for (const RunResult& r : results) runs.push_back(r.records);
    points[p].summary = SummarizeTrials(runs);
    points[p].objective = objective == "straggler_acc" ? points[p].summary.straggler_acc.median
                                                       : points[p].summary.total_acc.median;
  }
  std::stable_sort(points.begin(), points.end(), [](const SweepPoint& a, const SweepPoint& b) {
    return a.objective > b.objective;
  });

  std::ostringstream os;
  for (const std::string& n : names) os << n << ",";
  os << "objective,objective_median,total_acc_median,straggler_acc_median,time_s_median,best\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const SweepPoint& p = points[i];
    for (const std::string& v : p.values) {
      std::string cell = v;
      if (cell.find(',') != std::string::npos) cell = "\"" + cell + "\"";
      os << cell << ",";
    }
    os << objective << "," << FormatDouble(p.objective) << ","
       << FormatDouble(p.summary.total_acc.median) << ","
       << FormatDouble(p.summary.straggler_acc.median) << ","
       << FormatDouble(p.summary.total_time_s_median) << "," << (i == 0 ? 1 : 0) << "\n";
  }
  if (out_path.empty()) {
    out << os.str();
  } else {
    WriteFile(out_path, os.str());
    out << "wrote " << out_path << " (" << total << " points)\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

int CmdVerify(const verify::SuiteOptions& options, const std::string& out_path,
              std::ostream& out) {
  std::vector<verify::CheckReport> reports;
  try {
    reports = verify::RunSuite(options);
  } catch (const ConfigError& e) {
    throw InputError(e.what());
  }
  bool all = true;
  for (const verify::CheckReport& r : reports) {
    out << std::left << std::setw(20) << r.name << " " << std::setw(12)
        << verify::StatusName(r.status) << " measured " << FormatDouble(r.measured)
        << " bound " << FormatDouble(r.bound) << "\n";
    all = all && r.status == verify::Status::kPass;
  }
  if (!out_path.empty()) WriteFile(out_path, verify::ReportsToJson(reports) + "\n");
  return all ? 0 : 1;
}

int CmdLatencyReport(const std::string& config_path, std::optional<std::uint64_t> seed,
                     std::size_t draws, const std::string& out_path, std::ostream& out) {
  const ExperimentConfig config = LoadConfigOrThrow(config_path);
  const FederatedDataset dataset = BuildExperimentDataset(config);
  const auto rows =
      LatencyPercentiles(config.latency, dataset, seed.value_or(config.seed), draws);
  std::ostringstream os;
  os << "group,samples,p50_s,p95_s,p99_s\n";
  for (const PercentileRow& r : rows) {
    os << r.group << "," << r.samples << "," << FormatDouble(r.p50) << ","
       << FormatDouble(r.p95) << "," << FormatDouble(r.p99) << "\n";
  }
  if (out_path.empty()) {
    out << os.str();
  } else {
    WriteFile(out_path, os.str());
    out << "wrote " << out_path << "\n";
  }
  return 0;
}

int CmdDataReport(const std::string& config_path, const std::string& out_path,
                  const std::string& export_path, std::ostream& out) {
  const ExperimentConfig config = LoadConfigOrThrow(config_path);
  const FederatedDataset dataset = BuildExperimentDataset(config);
  std::map<std::size_t, std::size_t> sizes_standard, sizes_straggler;
  std::vector<std::size_t> classes_standard(config.dataset.n_classes, 0);
  std::vector<std::size_t> classes_straggler(config.dataset.n_classes, 0);
  for (const ClientShard& s : dataset.shards) {
    ++(s.is_straggler ? sizes_straggler : sizes_standard)[s.examples.size()];
    for (const Example& e : s.examples) {
      ++(s.is_straggler ? classes_straggler : classes_standard)[e.label];
    }
  }
  std::ostringstream os;
  os << "table,group,key,count\n";
  for (const auto& [k, n] : sizes_standard) os << "shard_size,standard," << k << "," << n << "\n";
  for (const auto& [k, n] : sizes_straggler) os << "shard_size,straggler," << k << "," << n << "\n";
  for (std::size_t c = 0; c < classes_standard.size(); ++c) {
    os << "class_count,standard," << c << "," << classes_standard[c] << "\n";
  }
  for (std::size_t c = 0; c < classes_straggler.size(); ++c) {
    os << "class_count,straggler," << c << "," << classes_straggler[c] << "\n";
  }
  if (out_path.empty()) {
    out << os.str();
  } else {
    WriteFile(out_path, os.str());
    out << "wrote " << out_path << "\n";
  }
  if (!export_path.empty()) {
    WriteFile(export_path, ExportDatasetJson(dataset));
    out << "exported " << export_path << "\n";
  }
  return 0;
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Discrete-event simulator for federated learning with stragglers", "fedsim"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  std::size_t jobs = DefaultJobs();
  auto add_jobs = [&](CLI::App* sub) {
    sub->add_option("--jobs", jobs, "Worker threads (default: $FEDSIM_JOBS or 1)")
        ->check(CLI::PositiveNumber);
  };

  SimulateArgs sim;
  CLI::App* simulate = app.add_subcommand("simulate", "Run an experiment config");
  simulate->add_option("--config", sim.config, "Experiment JSON")->required();
  simulate->add_option("--seed", sim.seed, "Base seed (overrides config)");
  simulate->add_option("--trials", sim.trials, "Trials, seeds base..base+trials-1");
  simulate->add_option("--out", sim.out,
                       "Output JSONL; with several trials, <stem>_seed<N>.jsonl");
  add_jobs(simulate);

  std::string sweep_path, sweep_out;
  std::optional<std::size_t> max_grid;
  CLI::App* sweep = app.add_subcommand("sweep", "Grid search over config fields");
  sweep->add_option("--config", sweep_path, "Sweep JSON {base, grid, objective}")->required();
  sweep->add_option("--out", sweep_out, "Output CSV (default: stdout)");
  sweep->add_option("--max-grid", max_grid, "Cap on grid points");
  add_jobs(sweep);

  verify::SuiteOptions vopts;
  std::string verify_out;
  CLI::App* verify_cmd = app.add_subcommand("verify", "Numerical checks of the convergence lemmas");
  verify_cmd->add_option("--suite", vopts.suite,
                         "all | lemma1 | zero_mean | lemma2 | lemma3 | theorem1");
  verify_cmd->add_option("--seeds", vopts.seeds, "Seeds for Monte Carlo checks");
  verify_cmd->add_option("--seed", vopts.base_seed, "Base seed");
  verify_cmd->add_option("--out", verify_out, "Output JSON");
  verify_cmd->add_option("--inject-fault", vopts.inject_fault,
                         "Zero the bound of lemma2 | lemma3 | theorem1");
  add_jobs(verify_cmd);

  std::vector<std::string> report_in;
  std::string report_out;
  bool force_mixed = false;
  CLI::App* report = app.add_subcommand("report", "Summarize final records over trials");
  report->add_option("--in", report_in, "JSONL files or glob patterns")->required();
  report->add_option("--out", report_out, "Output CSV (default: stdout)");
  report->add_flag("--force-mixed", force_mixed, "Combine runs with different config hashes");

  std::string lat_config, lat_out;
  std::optional<std::uint64_t> lat_seed;
  std::size_t lat_draws = 100;
  CLI::App* latency = app.add_subcommand("latency-report", "Latency percentiles per group");
  latency->add_option("--config", lat_config, "Experiment JSON")->required();
  latency->add_option("--seed", lat_seed, "Seed (default: config seed)");
  latency->add_option("--draws", lat_draws, "Draws per client")->check(CLI::PositiveNumber);
  latency->add_option("--out", lat_out, "Output CSV (default: stdout)");

  std::string data_config, data_out, data_export;
  CLI::App* data = app.add_subcommand("data-report", "Shard-size and class-count histograms");
  data->add_option("--config", data_config, "Experiment JSON")->required();
  data->add_option("--out", data_out, "Output CSV (default: stdout)");
  data->add_option("--export", data_export, "Also write the dataset as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (*simulate) return CmdSimulate(sim, jobs, out);
    if (*sweep) return CmdSweep(sweep_path, sweep_out, max_grid, jobs, out);
    if (*verify_cmd) {
      vopts.jobs = jobs;
      return CmdVerify(vopts, verify_out, out);
    }
    if (*report) return CmdReport(report_in, report_out, force_mixed, out);
    if (*latency) return CmdLatencyReport(lat_config, lat_seed, lat_draws, lat_out, out);
    if (*data) return CmdDataReport(data_config, data_out, data_export, out);
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace fedsim
