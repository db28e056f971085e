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

#ifndef FEDSIM_VERIFY_H_
#define FEDSIM_VERIFY_H_

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/algorithms.h"
#include "fedsim/engine.h"
#include "fedsim/model.h"
#include "fedsim/rng.h"

namespace fedsim::verify {

// Constants of the smoothness / bounded-gradient / bounded-variance
// assumptions, known exactly for the quadratic testbed.
struct ConvergenceAssumptions {
  double L = 0.0;
  double G = 0.0;
  double sigma_l = 0.0;
  double f_star = 0.0;
};

struct QuadConfig {
  std::size_t dim = 100;
  std::size_t clients = 40;
  double L = 1.0;
  // Curvatures are drawn uniformly from [min_curvature_fraction * L, L];
  // client 0 sits exactly at L.
  double min_curvature_fraction = 0.25;
  double G = 2.0;
  double sigma_l = 0.5;
  double center_scale = 1.0;
  std::uint64_t seed = 0;

  void Validate() const;
};

/// Client i minimizes F_i(w) = h_i(||w - c_i||) where h_i is the quadratic
/// 0.5 * a_i * r^2 with its slope capped at G (a Huber function). Gradients are
/// therefore a_i (w - c_i) clipped to norm G: exactly a_i-smooth and bounded by
/// G. Stochastic gradients add N(0, sigma_l^2 / dim * I) noise.
class QuadClientSet {
 public:
  explicit QuadClientSet(const QuadConfig& config);

  const QuadConfig& config() const { return config_; }
  std::size_t dim() const { return config_.dim; }
  std::size_t size() const { return curvature_.size(); }
  double curvature(std::size_t i) const { return curvature_[i]; }
  const std::vector<double>& center(std::size_t i) const { return centers_[i]; }

  double Loss(std::size_t i, const std::vector<double>& w) const;
  std::vector<double> Grad(std::size_t i, const std::vector<double>& w) const;
  std::vector<double> StochasticGrad(std::size_t i, const std::vector<double>& w,
                                     Stream& rng) const;
  // Population objective f = mean_i F_i and its gradient.
  double Objective(const std::vector<double>& w) const;
  std::vector<double> FullGrad(const std::vector<double>& w) const;

  ConvergenceAssumptions Assumptions() const;
  const std::vector<double>& minimizer() const { return minimizer_; }

 private:
  QuadConfig config_;
  std::vector<double> curvature_;
  std::vector<std::vector<double>> centers_;
  std::vector<double> minimizer_;
  double f_star_ = 0.0;
};

// Engine-facing clients: each local step is one stochastic gradient step.
class QuadPopulation : public ClientPopulation {
 public:
  QuadPopulation(const QuadClientSet& set, double eta_l, std::size_t local_steps);

  std::size_t size() const override { return set_.size(); }
  bool IsStraggler(ClientId) const override { return false; }
  std::size_t NumExamples(ClientId) const override { return local_steps_; }
  std::size_t ExamplesPerStep(ClientId) const override { return 1; }
  ClientWork Train(ClientId id, const TrainRequest& request, Stream& rng) const override;

 private:
  const QuadClientSet& set_;
  double eta_l_;
  std::size_t local_steps_;
};

struct FeastRunConfig {
  std::size_t fast = 2;  // B
  std::size_t plus = 4;  // B+ (every sampled client reports: tau_max = inf)
  double beta = 0.5;
  double eta_g = 1.0;
  double eta_a = 1.0;
  double eta_l = 0.05;
  std::size_t local_steps = 5;
  std::size_t rounds = 50;
};

struct FeastTrace {
  std::vector<FeastRoundLog> rounds;
  ParamVector w_final;
  ParamVector a_final;
};

// Runs FeAST-on-MSG through the event engine on the quadratic clients, with
// per-example log-normal latencies and no deadline.
FeastTrace RunFeastOnQuad(const QuadClientSet& set, const FeastRunConfig& run,
                          std::uint64_t seed, bool keep_logs = true);

enum class Status { kPass, kFail, kInsufficient };
const char* StatusName(Status s);

struct CheckReport {
  std::string name;
  Status status = Status::kFail;
  double measured = 0.0;
  double bound = 0.0;
  double se = 0.0;
  std::string detail;
  std::vector<std::pair<std::string, double>> values;
};

// Closed form of a_{t+1} - w_{t+1} from logged fast and slow deltas,
// recomputed term by term for every round. Requires eta_a == eta_g.
CheckReport CheckLemma1Recursion(const std::vector<FeastRoundLog>& logs, double eta_g,
                                 double beta, double tol);

// Per-coordinate mean of a_T - w_T over seeds against 3 standard errors.
CheckReport CheckZeroMeanGap(const QuadClientSet& set, const FeastRunConfig& run,
                             std::size_t n_seeds, std::uint64_t base_seed,
                             std::size_t jobs = 1);

// Mean squared stochastic gradient norm at random points against
// sigma_l^2 + G^2. When `at` is given every draw uses that point.
CheckReport CheckLemma2Variance(const QuadClientSet& set, std::size_t n_draws,
                                std::uint64_t seed,
                                const std::vector<double>* at = nullptr);

// Assumption enforcement: clipped norms never exceed G and the injected
// noise has rms norm within 2% of sigma_l.
CheckReport CheckAssumptions(const QuadClientSet& set, std::size_t n_draws,
                             std::uint64_t seed);

double Lemma3Bound(const FeastRunConfig& run, double sigma_l, double G);

// E||a_t - w_t||^2 (mean + 3 SE over seeds) against the closed-form bound at
// every round.
CheckReport CheckLemma3GapBound(const QuadClientSet& set, const FeastRunConfig& run,
                                std::size_t n_seeds, std::uint64_t base_seed,
                                std::size_t jobs = 1, double bound_scale = 1.0);

// Throws ConfigError unless beta <= B/B+, eta_g >= 1 and
// eta_g * eta_l * T_l / 2 == 1 / sqrt(T).
void CheckTheoremSchedule(const FeastRunConfig& run);

// Run configuration satisfying the theorem's schedule for T rounds.
FeastRunConfig TheoremSchedule(std::size_t fast, std::size_t plus, std::size_t local_steps,
                               double eta_g, std::size_t T);

double Theorem1Bound(const ConvergenceAssumptions& a, double f_a0, std::size_t T);

// Average of ||grad f(a_t)||^2 over t = 1..T, for every T in `horizons`.
CheckReport CheckTheorem1(const QuadClientSet& set, std::size_t fast, std::size_t plus,
                          std::size_t local_steps, const std::vector<std::size_t>& horizons,
                          std::size_t n_seeds, std::uint64_t base_seed, std::size_t jobs = 1,
                          double bound_scale = 1.0);

struct SuiteOptions {
  std::string suite = "all";  // all | lemma1 | zero_mean | lemma2 | lemma3 | theorem1
  std::size_t seeds = 0;      // 0: per-check default
  std::uint64_t base_seed = 0;
  std::size_t jobs = 1;
  // Scales the named check's bound by zero, for exercising failure paths.
  std::string inject_fault;
};

std::vector<CheckReport> RunSuite(const SuiteOptions& options);
std::string ReportsToJson(const std::vector<CheckReport>& reports);

}  // namespace fedsim::verify

#endif  // FEDSIM_VERIFY_H_
