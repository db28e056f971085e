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

#include "fedsim/verify.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <thread>

#include "fedsim/error.h"
#include "json.hpp"

namespace fedsim::verify {
namespace {

double Norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

// Runs fn(0..n-1) on up to `jobs` threads; results must be written by index.
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

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe MeanAndSe(const std::vector<double>& x) {
  MeanSe r;
  if (x.empty()) return r;
  double sum = 0.0;
  for (double v : x) sum += v;
  r.mean = sum / static_cast<double>(x.size());
  if (x.size() > 1) {
    double ss = 0.0;
    for (double v : x) ss += (v - r.mean) * (v - r.mean);
    const double var = ss / static_cast<double>(x.size() - 1);
    r.se = std::sqrt(var / static_cast<double>(x.size()));
  }
  return r;
}

Status Judge(bool ok) { return ok ? Status::kPass : Status::kFail; }

// Starting point shared by all verification runs: norm 3 along the diagonal,
// far enough from the centers for clipping to be active early on.
ParamVector StartPoint(std::size_t dim) {
  ParamVector w(Layout::Flat(dim));
  const double v = 3.0 / std::sqrt(static_cast<double>(dim));
  for (double& x : w.values) x = v;
  return w;
}

}  // namespace

void QuadConfig::Validate() const {
  if (dim == 0) throw InvalidParameter("quad dim must be positive");
  if (clients == 0) throw InvalidParameter("quad clients must be positive");
  if (!(L > 0.0)) throw InvalidParameter("quad L must be positive");
  if (!(min_curvature_fraction > 0.0 && min_curvature_fraction <= 1.0)) {
    throw InvalidParameter("min_curvature_fraction must lie in (0, 1]");
  }
  if (!(G > 0.0)) throw InvalidParameter("quad G must be positive");
  if (!(sigma_l >= 0.0)) throw InvalidParameter("quad sigma_l must be >= 0");
  if (!(center_scale >= 0.0)) throw InvalidParameter("quad center_scale must be >= 0");
}

QuadClientSet::QuadClientSet(const QuadConfig& config) : config_(config) {
  config_.Validate();
  const std::size_t d = config_.dim;
  const double lo = config_.min_curvature_fraction * config_.L;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < config_.clients; ++i) {
    Stream rng = Stream::Derive(config_.seed, Purpose::kQuadSetup, i);
    const double u = rng.Uniform();
    curvature_.push_back(i == 0 ? config_.L : lo + (config_.L - lo) * u);
    std::vector<double> c(d);
    for (double& x : c) x = config_.center_scale * inv_sqrt_d * rng.Normal();
    centers_.push_back(std::move(c));
  }

  // Curvature-weighted mean is exact when no client is clipped there.
  std::vector<double> w(d, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    total += curvature_[i];
    for (std::size_t j = 0; j < d; ++j) w[j] += curvature_[i] * centers_[i][j];
  }
  for (double& x : w) x /= total;
  for (int iter = 0; iter < 200000; ++iter) {
    const std::vector<double> g = FullGrad(w);
    if (Norm2(g) < 1e-28) break;
    for (std::size_t j = 0; j < d; ++j) w[j] -= g[j] / config_.L;
  }
  minimizer_ = w;
  f_star_ = Objective(w);
}

double QuadClientSet::Loss(std::size_t i, const std::vector<double>& w) const {
  const double a = curvature_[i];
  const double G = config_.G;
  double r2 = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double diff = w[j] - centers_[i][j];
    r2 += diff * diff;
  }
  const double r = std::sqrt(r2);
  if (a * r <= G) return 0.5 * a * r2;
  return G * r - G * G / (2.0 * a);
}

std::vector<double> QuadClientSet::Grad(std::size_t i, const std::vector<double>& w) const {
  const double a = curvature_[i];
  std::vector<double> g(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) g[j] = a * (w[j] - centers_[i][j]);
  const double n = std::sqrt(Norm2(g));
  if (n > config_.G) {
    const double s = config_.G / n;
    for (double& x : g) x *= s;
  }
  return g;
}

std::vector<double> QuadClientSet::StochasticGrad(std::size_t i,
                                                  const std::vector<double>& w,
                                                  Stream& rng) const {
  std::vector<double> g = Grad(i, w);
  const double s = config_.sigma_l / std::sqrt(static_cast<double>(w.size()));
  for (double& x : g) x += s * rng.Normal();
  return g;
}

double QuadClientSet::Objective(const std::vector<double>& w) const {
  double s = 0.0;
  for (std::size_t i = 0; i < size(); ++i) s += Loss(i, w);
  return s / static_cast<double>(size());
}

std::vector<double> QuadClientSet::FullGrad(const std::vector<double>& w) const {
  std::vector<double> g(w.size(), 0.0);
  for (std::size_t i = 0; i < size(); ++i) {
    const std::vector<double> gi = Grad(i, w);
    for (std::size_t j = 0; j < w.size(); ++j) g[j] += gi[j];
  }
  for (double& x : g) x /= static_cast<double>(size());
  return g;
}

ConvergenceAssumptions QuadClientSet::Assumptions() const {
  return {config_.L, config_.G, config_.sigma_l, f_star_};
}

QuadPopulation::QuadPopulation(const QuadClientSet& set, double eta_l,
                               std::size_t local_steps)
    : set_(set), eta_l_(eta_l), local_steps_(local_steps) {
  if (local_steps_ == 0) throw InvalidParameter("local_steps must be positive");
  if (!(eta_l_ >= 0.0)) throw InvalidParameter("eta_l must be >= 0");
}

ClientWork QuadPopulation::Train(ClientId id, const TrainRequest& request,
                                 Stream& rng) const {
  std::vector<double> w = request.start->values;
  const std::size_t steps = request.max_steps ? *request.max_steps : local_steps_;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::vector<double> g = set_.StochasticGrad(id, w, rng);
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= eta_l_ * g[j];
  }
  const Layout layout = Layout::Flat(w.size());
  return ClientWork{ParamVector(layout, std::move(w)), steps, steps};
}

FeastTrace RunFeastOnQuad(const QuadClientSet& set, const FeastRunConfig& run,
                          std::uint64_t seed, bool keep_logs) {
  if (run.plus < run.fast) throw InvalidParameter("B+ must be at least B");
  if (run.plus > set.size()) throw InvalidParameter("B+ exceeds the number of clients");
  QuadPopulation population(set, run.eta_l, run.local_steps);

  AlgoConfig cfg;
  cfg.algorithm = Algorithm::kFeast;
  cfg.eta_g = run.eta_g;
  cfg.eta_a = run.eta_a;
  cfg.eta_l = run.eta_l;
  cfg.cohort = run.fast;
  cfg.over_selection_cohort = run.plus;
  cfg.beta = run.beta;
  cfg.tau_max = std::numeric_limits<double>::infinity();
  cfg.strict_sequential = true;

  SimOptions options;
  options.seed = seed;
  options.budget = static_cast<std::uint64_t>(run.rounds) * run.fast;
  Simulation sim(population, LatencyScenario::PerExample(), options);
  FeastStrategy strategy(cfg, StartPoint(set.dim()));

  FeastTrace trace;
  strategy.set_round_observer([&](const FeastRoundLog& log) {
    if (log.plus_count != run.plus) {
      throw SimulationError("round closed with " + std::to_string(log.plus_count) +
                            " reports, expected " + std::to_string(run.plus));
    }
    if (keep_logs) trace.rounds.push_back(log);
  });
  RunEventLoop(sim, strategy);
  trace.w_final = strategy.state().w;
  trace.a_final = strategy.aux();
  return trace;
}

const char* StatusName(Status s) {
  switch (s) {
    case Status::kPass:
      return "pass";
    case Status::kFail:
      return "fail";
    case Status::kInsufficient:
      return "insufficient";
  }
  return "unknown";
}

CheckReport CheckLemma1Recursion(const std::vector<FeastRoundLog>& logs, double eta_g,
                                 double beta, double tol) {
  if (logs.empty()) throw InvalidParameter("lemma1 check needs round logs");
  for (std::size_t t = 0; t < logs.size(); ++t) {
    if (logs[t].round != t) throw InvalidParameter("round logs are not contiguous from 0");
  }
  CheckReport r;
  r.name = "lemma1_recursion";
  r.bound = tol;
  double worst = 0.0;
  std::size_t worst_t = 0;
  const std::size_t d = logs[0].w_round.size();
  for (std::size_t t = 0; t < logs.size(); ++t) {
    std::vector<double> rhs(d, 0.0);
    double weight = 1.0;
    for (std::size_t k = 0; k <= t; ++k) {
      const FeastRoundLog& L = logs[t - k];
      const double B = static_cast<double>(L.fast_count);
      const double Bp = static_cast<double>(L.plus_count);
      const double c_fast = eta_g * weight * (1.0 / B - 1.0 / Bp);
      const double c_slow = eta_g * weight / Bp;
      for (std::size_t j = 0; j < d; ++j) {
        rhs[j] += c_fast * L.delta_fast[j] - c_slow * L.delta_slow[j];
      }
      weight *= beta;
    }
    double err2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double lhs = logs[t].a_next[j] - logs[t].w_next[j];
      err2 += (lhs - rhs[j]) * (lhs - rhs[j]);
    }
    const double rel = std::sqrt(err2) / std::max(1.0, std::sqrt(Norm2(rhs)));
    if (rel > worst) {
      worst = rel;
      worst_t = t;
    }
  }
  r.measured = worst;
  r.status = Judge(worst <= tol);
  r.values = {{"rounds", static_cast<double>(logs.size())},
              {"worst_round", static_cast<double>(worst_t)}};
  r.detail = "max relative error of a_{t+1}-w_{t+1} against the closed form";
  return r;
}

CheckReport CheckZeroMeanGap(const QuadClientSet& set, const FeastRunConfig& run,
                             std::size_t n_seeds, std::uint64_t base_seed, std::size_t jobs) {
  CheckReport r;
  r.name = "zero_mean_gap";
  r.bound = 0.99;
  if (n_seeds < 100) {
    r.status = Status::kInsufficient;
    r.detail = "needs at least 100 seeds, got " + std::to_string(n_seeds);
    r.values = {{"seeds", static_cast<double>(n_seeds)}};
    return r;
  }
  std::vector<std::vector<double>> gaps(n_seeds);
  ParallelFor(n_seeds, jobs, [&](std::size_t s) {
    const FeastTrace tr = RunFeastOnQuad(set, run, base_seed + s, false);
    gaps[s] = Subtract(tr.a_final, tr.w_final).values;
  });
  const std::size_t d = set.dim();
  std::size_t inside = 0;
  double worst_z = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> col(n_seeds);
    for (std::size_t s = 0; s < n_seeds; ++s) col[s] = gaps[s][j];
    const MeanSe ms = MeanAndSe(col);
    if (std::abs(ms.mean) <= 3.0 * ms.se) ++inside;
    if (ms.se > 0.0) worst_z = std::max(worst_z, std::abs(ms.mean) / ms.se);
  }
  r.measured = static_cast<double>(inside) / static_cast<double>(d);
  r.status = Judge(r.measured >= r.bound);
  r.values = {{"seeds", static_cast<double>(n_seeds)},
              {"coordinates", static_cast<double>(d)},
              {"max_abs_z", worst_z}};
  r.detail = "fraction of coordinates of mean(a_T - w_T) within 3 standard errors";
  return r;
}

CheckReport CheckLemma2Variance(const QuadClientSet& set, std::size_t n_draws,
                                std::uint64_t seed, const std::vector<double>* at) {
  if (n_draws == 0) throw InvalidParameter("lemma2 check needs draws");
  const ConvergenceAssumptions a = set.Assumptions();
  Stream rng = Stream::Derive(seed, Purpose::kQuadProbe, 0);
  std::vector<double> sq(n_draws);
  for (std::size_t k = 0; k < n_draws; ++k) {
    const std::size_t i = rng.Below(set.size());
    std::vector<double> w;
    if (at) {
      w = *at;
    } else {
      // Radius up to twice the clipping radius: both regimes get sampled.
      std::vector<double> dir(set.dim());
      for (double& x : dir) x = rng.Normal();
      const double n = std::sqrt(Norm2(dir));
      const double radius = rng.Uniform() * 2.0 * a.G / set.curvature(i);
      w = set.center(i);
      for (std::size_t j = 0; j < w.size(); ++j) w[j] += radius * dir[j] / n;
    }
    sq[k] = Norm2(set.StochasticGrad(i, w, rng));
  }
  const MeanSe ms = MeanAndSe(sq);
  CheckReport r;
  r.name = "lemma2_variance";
  r.measured = ms.mean;
  r.se = ms.se;
  r.bound = a.sigma_l * a.sigma_l + a.G * a.G;
  r.status = Judge(ms.mean <= r.bound + 3.0 * ms.se);
  r.values = {{"draws", static_cast<double>(n_draws)}};
  r.detail = "mean ||g||^2 against sigma_l^2 + G^2 (+3 SE)";
  return r;
}

CheckReport CheckAssumptions(const QuadClientSet& set, std::size_t n_draws,
                             std::uint64_t seed) {
  if (n_draws == 0) throw InvalidParameter("assumption check needs draws");
  const ConvergenceAssumptions a = set.Assumptions();
  Stream rng = Stream::Derive(seed, Purpose::kQuadProbe, 1);
  double max_norm = 0.0;
  double noise_sq = 0.0;
  for (std::size_t k = 0; k < n_draws; ++k) {
    const std::size_t i = rng.Below(set.size());
    std::vector<double> w(set.dim());
    for (double& x : w) x = 3.0 * rng.Normal();
    const std::vector<double> g = set.Grad(i, w);
    max_norm = std::max(max_norm, std::sqrt(Norm2(g)));
    const std::vector<double> sg = set.StochasticGrad(i, w, rng);
    for (std::size_t j = 0; j < g.size(); ++j) noise_sq += (sg[j] - g[j]) * (sg[j] - g[j]);
  }
  const double rms = std::sqrt(noise_sq / static_cast<double>(n_draws));
  const bool clip_ok = max_norm <= a.G * (1.0 + 1e-12);
  const bool noise_ok = a.sigma_l == 0.0 ? rms == 0.0
                                         : std::abs(rms - a.sigma_l) <= 0.02 * a.sigma_l;
  CheckReport r;
  r.name = "assumptions";
  r.measured = max_norm;
  r.bound = a.G;
  r.status = Judge(clip_ok && noise_ok);
  r.values = {{"noise_rms", rms}, {"sigma_l", a.sigma_l}, {"draws", static_cast<double>(n_draws)}};
  r.detail = "max clipped gradient norm <= G and noise rms within 2% of sigma_l";
  return r;
}

double Lemma3Bound(const FeastRunConfig& run, double sigma_l, double G) {
  const double lr = run.eta_g * run.eta_l * static_cast<double>(run.local_steps);
  const double ratio = 1.0 - static_cast<double>(run.fast) / static_cast<double>(run.plus);
  const double one_minus_beta = 1.0 - run.beta;
  return 4.0 * lr * lr / (one_minus_beta * one_minus_beta) * ratio * ratio *
         (sigma_l * sigma_l + G * G);
}

CheckReport CheckLemma3GapBound(const QuadClientSet& set, const FeastRunConfig& run,
                                std::size_t n_seeds, std::uint64_t base_seed,
                                std::size_t jobs, double bound_scale) {
  if (n_seeds < 2) throw InvalidParameter("lemma3 check needs at least 2 seeds");
  if (run.eta_a != run.eta_g) throw InvalidParameter("lemma3 check needs eta_a == eta_g");
  std::vector<std::vector<double>> gaps(n_seeds);
  ParallelFor(n_seeds, jobs, [&](std::size_t s) {
    const FeastTrace tr = RunFeastOnQuad(set, run, base_seed + s, true);
    std::vector<double> g;
    g.reserve(tr.rounds.size());
    for (const FeastRoundLog& L : tr.rounds) g.push_back(SquaredNorm(Subtract(L.a_next, L.w_next)));
    gaps[s] = std::move(g);
  });
  const ConvergenceAssumptions a = set.Assumptions();
  CheckReport r;
  r.name = "lemma3_gap_bound";
  r.bound = Lemma3Bound(run, a.sigma_l, a.G) * bound_scale;
  bool ok = true;
  double worst = 0.0;
  std::size_t worst_t = 0;
  for (std::size_t t = 0; t < run.rounds; ++t) {
    std::vector<double> col(n_seeds);
    for (std::size_t s = 0; s < n_seeds; ++s) col[s] = gaps[s][t];
    const MeanSe ms = MeanAndSe(col);
    const double upper = ms.mean + 3.0 * ms.se;
    if (upper > r.bound) ok = false;
    if (upper >= worst) {
      worst = upper;
      worst_t = t + 1;
      r.se = ms.se;
    }
  }
  r.measured = worst;
  r.status = Judge(ok);
  r.values = {{"seeds", static_cast<double>(n_seeds)},
              {"rounds", static_cast<double>(run.rounds)},
              {"worst_t", static_cast<double>(worst_t)}};
  r.detail = "max over t of mean+3SE of ||a_t - w_t||^2 against the closed-form bound";
  return r;
}

void CheckTheoremSchedule(const FeastRunConfig& run) {
  const double T = static_cast<double>(run.rounds);
  if (run.rounds == 0) throw ConfigError("theorem schedule needs T >= 1");
  if (run.beta > static_cast<double>(run.fast) / static_cast<double>(run.plus) + 1e-15) {
    throw ConfigError("theorem schedule needs beta <= B/B+");
  }
  if (run.eta_g < 1.0) throw ConfigError("theorem schedule needs eta_g >= 1");
  if (run.eta_a != run.eta_g) throw ConfigError("theorem schedule needs eta_a == eta_g");
  const double lhs = run.eta_g * run.eta_l * static_cast<double>(run.local_steps) / 2.0;
  const double rhs = 1.0 / std::sqrt(T);
  if (std::abs(lhs - rhs) > 1e-12 * rhs) {
    throw ConfigError("theorem schedule needs eta_g * eta_l * T_l / 2 == 1/sqrt(T)");
  }
}

FeastRunConfig TheoremSchedule(std::size_t fast, std::size_t plus, std::size_t local_steps,
                               double eta_g, std::size_t T) {
  if (plus <= fast) throw ConfigError("theorem schedule needs B+ > B");
  FeastRunConfig run;
  run.fast = fast;
  run.plus = plus;
  run.local_steps = local_steps;
  run.eta_g = eta_g;
  run.eta_a = eta_g;
  run.beta = static_cast<double>(fast) / static_cast<double>(plus);
  run.eta_l = 2.0 / (std::sqrt(static_cast<double>(T)) * eta_g *
                     static_cast<double>(local_steps));
  run.rounds = T;
  CheckTheoremSchedule(run);
  return run;
}

double Theorem1Bound(const ConvergenceAssumptions& a, double f_a0, std::size_t T) {
  const double t = static_cast<double>(T);
  return (f_a0 - a.f_star) / std::sqrt(t) +
         (10.0 / std::sqrt(t) + 2.5 * a.L * a.L / t) * (a.sigma_l * a.sigma_l + a.G * a.G);
}

CheckReport CheckTheorem1(const QuadClientSet& set, std::size_t fast, std::size_t plus,
                          std::size_t local_steps, const std::vector<std::size_t>& horizons,
                          std::size_t n_seeds, std::uint64_t base_seed, std::size_t jobs,
                          double bound_scale) {
  if (horizons.empty()) throw InvalidParameter("theorem check needs horizons");
  if (n_seeds == 0) throw InvalidParameter("theorem check needs seeds");
  const ConvergenceAssumptions a = set.Assumptions();
  const double f_a0 = set.Objective(StartPoint(set.dim()).values);
  CheckReport r;
  r.name = "theorem1_schedule";
  bool ok = true;
  std::vector<double> lhs(horizons.size());
  for (std::size_t h = 0; h < horizons.size(); ++h) {
    const FeastRunConfig run = TheoremSchedule(fast, plus, local_steps, 1.0, horizons[h]);
    std::vector<double> per_seed(n_seeds);
    ParallelFor(n_seeds, jobs, [&](std::size_t s) {
      const FeastTrace tr = RunFeastOnQuad(set, run, base_seed + s, true);
      double sum = 0.0;
      for (const FeastRoundLog& L : tr.rounds) sum += Norm2(set.FullGrad(L.a_next.values));
      per_seed[s] = sum / static_cast<double>(run.rounds);
    });
    const MeanSe ms = MeanAndSe(per_seed);
    lhs[h] = ms.mean;
    const double rhs = Theorem1Bound(a, f_a0, horizons[h]) * bound_scale;
    if (!(ms.mean <= rhs)) ok = false;
    const std::string tag = "T=" + std::to_string(horizons[h]);
    r.values.push_back({"lhs_" + tag, ms.mean});
    r.values.push_back({"rhs_" + tag, rhs});
    if (h == horizons.size() - 1) {
      r.measured = ms.mean;
      r.bound = rhs;
      r.se = ms.se;
    }
  }
  for (std::size_t h = 1; h < horizons.size(); ++h) {
    if (horizons[h] > horizons[h - 1] && lhs[h] > 1.1 * lhs[h - 1]) ok = false;
  }
  auto find = [&](std::size_t T) -> std::optional<double> {
    for (std::size_t h = 0; h < horizons.size(); ++h) {
      if (horizons[h] == T) return lhs[h];
    }
    return std::nullopt;
  };
  const auto at64 = find(64), at1024 = find(1024);
  if (at64 && at1024) {
    r.values.push_back({"ratio_1024_over_64", *at1024 / *at64});
    if (*at1024 > 0.5 * *at64) ok = false;
  }
  r.values.push_back({"f_a0_minus_f_star", f_a0 - a.f_star});
  r.values.push_back({"seeds", static_cast<double>(n_seeds)});
  r.status = Judge(ok);
  r.detail =
      "average ||grad f(a_t)||^2 per horizon: below the bound, non-increasing (10% slack), "
      "T=1024 at most half of T=64";
  return r;
}

std::vector<CheckReport> RunSuite(const SuiteOptions& options) {
  const std::string& s = options.suite;
  static const char* kSuites[] = {"all", "lemma1", "zero_mean", "lemma2", "lemma3", "theorem1"};
  if (std::find(std::begin(kSuites), std::end(kSuites), s) == std::end(kSuites)) {
    throw ConfigError("unknown verify suite '" + s +
                      "' (expected all, lemma1, zero_mean, lemma2, lemma3 or theorem1)");
  }
  const std::string& fault = options.inject_fault;
  if (!fault.empty() && fault != "lemma2" && fault != "lemma3" && fault != "theorem1") {
    throw ConfigError("fault injection supports lemma2, lemma3 and theorem1");
  }
  auto scale = [&](const char* name) { return fault == name ? 0.0 : 1.0; };
  auto want = [&](const char* name) { return s == "all" || s == name; };

  const QuadClientSet set(QuadConfig{});
  const FeastRunConfig run;  // B=2, B+=4, eta_a = eta_g = 1, beta = 0.5, 50 rounds
  std::vector<CheckReport> out;

  if (want("lemma1")) {
    const std::size_t n = options.seeds ? std::min<std::size_t>(options.seeds, 5) : 5;
    CheckReport worst;
    bool all_pass = true;
    for (std::size_t k = 0; k < n; ++k) {
      const FeastTrace tr = RunFeastOnQuad(set, run, options.base_seed + k, true);
      CheckReport r = CheckLemma1Recursion(tr.rounds, run.eta_g, run.beta, 1e-9);
      all_pass = all_pass && r.status == Status::kPass;
      if (k == 0 || r.measured > worst.measured) worst = r;
    }
    worst.status = Judge(all_pass);
    worst.values.push_back({"seeds", static_cast<double>(n)});
    out.push_back(worst);
  }
  if (want("lemma1") || want("zero_mean")) {
    const std::size_t n = options.seeds ? options.seeds : 200;
    out.push_back(CheckZeroMeanGap(set, run, n, options.base_seed, options.jobs));
  }
  if (want("lemma2")) {
    CheckReport r = CheckLemma2Variance(set, 100000, options.base_seed);
    if (fault == "lemma2") {
      r.bound *= 0.0;
      r.status = Judge(r.measured <= r.bound + 3.0 * r.se);
    }
    out.push_back(r);
    out.push_back(CheckAssumptions(set, 100000, options.base_seed));
  }
  if (want("lemma3")) {
    const std::size_t n = options.seeds ? options.seeds : 100;
    out.push_back(CheckLemma3GapBound(set, run, n, options.base_seed, options.jobs,
                                      scale("lemma3")));
  }
  if (want("theorem1")) {
    out.push_back(CheckTheorem1(set, 2, 4, 5, {64, 256, 1024}, 4, options.base_seed,
                                options.jobs, scale("theorem1")));
  }
  return out;
}

std::string ReportsToJson(const std::vector<CheckReport>& reports) {
  nlohmann::ordered_json j;
  bool all = !reports.empty();
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const CheckReport& r : reports) {
    nlohmann::ordered_json c;
    c["name"] = r.name;
    c["status"] = StatusName(r.status);
    c["measured"] = r.measured;
    c["bound"] = r.bound;
    c["se"] = r.se;
    c["detail"] = r.detail;
    nlohmann::ordered_json v = nlohmann::ordered_json::object();
    for (const auto& [k, x] : r.values) v[k] = x;
    c["values"] = v;
    arr.push_back(c);
    all = all && r.status == Status::kPass;
  }
  j["all_passed"] = all;
  j["checks"] = arr;
  return j.dump(2);
}

}  // namespace fedsim::verify
