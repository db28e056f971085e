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

#ifndef FEDSIM_MODEL_H_
#define FEDSIM_MODEL_H_

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fedsim/data.h"
#include "fedsim/rng.h"

namespace fedsim {

enum class Activation { kTanh };

// Shape of a classifier: hidden == 0 is multinomial logistic regression,
// otherwise a one-hidden-layer MLP. n_classes == 0 marks a flat vector with
// no classifier interpretation (d_in entries).
struct Layout {
  std::size_t d_in = 0;
  std::size_t hidden = 0;
  std::size_t n_classes = 0;
  Activation activation = Activation::kTanh;

  static Layout Flat(std::size_t n) { return Layout{n, 0, 0}; }
  bool IsFlat() const { return n_classes == 0; }
  std::size_t NumParams() const;
  bool operator==(const Layout&) const = default;
};

// Flat weight vector. Linear layout: W (C x d, row-major) then b (C).
// MLP layout: W1 (H x d), b1 (H), W2 (C x H), b2 (C).
struct ParamVector {
  Layout layout;
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(const Layout& l) : layout(l), values(l.NumParams(), 0.0) {}
  ParamVector(const Layout& l, std::vector<double> v);

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  bool operator==(const ParamVector&) const = default;

  // Throws NumericError naming `what` on the first non-finite entry.
  void CheckFinite(const char* what) const;
};

// y += a * x
void Axpy(double a, const ParamVector& x, ParamVector& y);
ParamVector Subtract(const ParamVector& a, const ParamVector& b);
double SquaredNorm(const ParamVector& v);
double MaxAbsDiff(const ParamVector& a, const ParamVector& b);

enum class DistillLoss {
  kSoftCrossEntropy,  // cross-entropy of student log-softmax vs teacher softmax
  kLogitMse,          // 0.5 * mean squared logit difference
};

struct LossOptions {
  double rho = 0.0;  // distillation weight
  double nu = 0.0;   // proximal weight
  DistillLoss distill = DistillLoss::kSoftCrossEntropy;
  double temperature = 1.0;
};

struct LossBreakdown {
  double supervised = 0.0;
  double distill = 0.0;
  double proximal = 0.0;
  double total = 0.0;
};

// Uniform in [-scale, scale].
ParamVector InitParams(const Layout& layout, double scale, Stream& rng);

std::vector<double> ForwardLogits(const ParamVector& w, std::span<const double> x);

// Row-major (batch x n_classes) logits.
std::vector<double> ForwardBatch(const ParamVector& w,
                                 std::span<const Example* const> batch);

/// Loss and exact gradient of
///   mean CE(batch) + rho * psi(student, teacher) + nu * 0.5 * ||w - anchor||^2.
///
/// `teacher_logits` holds batch x n_classes logits and is required when
/// rho > 0; `anchor` is required when nu > 0. A term whose weight is zero is
/// neither evaluated nor reported.
std::pair<LossBreakdown, ParamVector> LossAndGrad(
    const ParamVector& w, std::span<const Example* const> batch,
    std::optional<std::span<const double>> teacher_logits,
    const ParamVector* anchor, const LossOptions& options);

std::pair<LossBreakdown, ParamVector> LossAndGrad(
    const ParamVector& w, std::span<const Example> batch,
    std::optional<std::span<const double>> teacher_logits,
    const ParamVector* anchor, const LossOptions& options);

struct LocalTrainSpec {
  std::size_t epochs = 1;
  // When set, overrides epochs: run exactly this many minibatch steps,
  // reshuffling at each pass over the shard.
  std::optional<std::size_t> steps;
  std::size_t batch_size = 20;
  double eta_l = 0.1;
  LossOptions loss;
};

struct LocalResult {
  ParamVector w;
  std::size_t steps = 0;
  std::size_t examples_processed = 0;
};

// Minibatch SGD from w0. Each pass over the shard uses a fresh Fisher-Yates
// shuffle drawn from rng; the last batch of a pass may be short.
LocalResult LocalSgd(const ParamVector& w0, std::span<const Example> shard,
                     const LocalTrainSpec& spec, const ParamVector* teacher,
                     const ParamVector* anchor, Stream& rng);

// Argmax with ties to the lowest class index.
std::size_t Predict(const ParamVector& w, std::span<const double> x);
double Accuracy(const ParamVector& w, std::span<const Example> examples);

}  // namespace fedsim

#endif  // FEDSIM_MODEL_H_
