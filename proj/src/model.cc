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

#include "fedsim/model.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedsim/error.h"

namespace fedsim {

std::size_t Layout::NumParams() const {
  if (IsFlat()) return d_in;
  if (hidden == 0) return n_classes * d_in + n_classes;
  return hidden * d_in + hidden + n_classes * hidden + n_classes;
}

ParamVector::ParamVector(const Layout& l, std::vector<double> v)
    : layout(l), values(std::move(v)) {
  if (values.size() != layout.NumParams()) {
    throw InvalidParameter("parameter count " + std::to_string(values.size()) +
                           " does not match layout (" +
                           std::to_string(layout.NumParams()) + ")");
  }
}

void ParamVector::CheckFinite(const char* what) const {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(what) + ": non-finite value at index " +
                         std::to_string(i));
    }
  }
}

void Axpy(double a, const ParamVector& x, ParamVector& y) {
  if (x.size() != y.size()) throw InvalidParameter("Axpy size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y.values[i] += a * x.values[i];
}

ParamVector Subtract(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw InvalidParameter("Subtract size mismatch");
  ParamVector out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out.values[i] -= b.values[i];
  return out;
}

double SquaredNorm(const ParamVector& v) {
  double s = 0.0;
  for (double x : v.values) s += x * x;
  return s;
}

double MaxAbsDiff(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw InvalidParameter("MaxAbsDiff size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.values[i] - b.values[i]));
  }
  return m;
}

ParamVector InitParams(const Layout& layout, double scale, Stream& rng) {
  ParamVector w(layout);
  for (double& v : w.values) v = scale * (2.0 * rng.Uniform() - 1.0);
  return w;
}

namespace {

// Offsets into the flat vector.
struct Offsets {
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
};

Offsets OffsetsFor(const Layout& l) {
  Offsets o;
  if (l.hidden == 0) {
    o.w2 = 0;
    o.b2 = l.n_classes * l.d_in;
  } else {
    o.w1 = 0;
    o.b1 = l.hidden * l.d_in;
    o.w2 = o.b1 + l.hidden;
    o.b2 = o.w2 + l.n_classes * l.hidden;
  }
  return o;
}

void CheckClassifier(const ParamVector& w) {
  if (w.layout.IsFlat() || w.layout.n_classes == 0) {
    throw InvalidParameter("flat parameter vector used as a classifier");
  }
  if (w.values.size() != w.layout.NumParams()) {
    throw InvalidParameter("parameter vector does not match its layout");
  }
}

// Computes logits into z; when hidden > 0 also stores activations in h.
void Forward(const ParamVector& w, const Offsets& o, std::span<const double> x,
             std::vector<double>& h, std::span<double> z) {
  const Layout& l = w.layout;
  const double* p = w.values.data();
  if (x.size() != l.d_in) {
    throw InvalidParameter("feature dimension " + std::to_string(x.size()) +
                           " != d_in " + std::to_string(l.d_in));
  }
  std::span<const double> in = x;
  std::size_t in_dim = l.d_in;
  if (l.hidden > 0) {
    h.assign(l.hidden, 0.0);
    for (std::size_t j = 0; j < l.hidden; ++j) {
      const double* row = p + o.w1 + j * l.d_in;
      double acc = p[o.b1 + j];
      for (std::size_t k = 0; k < l.d_in; ++k) acc += row[k] * x[k];
      h[j] = std::tanh(acc);
    }
    in = h;
    in_dim = l.hidden;
  }
  for (std::size_t c = 0; c < l.n_classes; ++c) {
    const double* row = p + o.w2 + c * in_dim;
    double acc = p[o.b2 + c];
    for (std::size_t k = 0; k < in_dim; ++k) acc += row[k] * in[k];
    z[c] = acc;
  }
}

// log-softmax of z / temperature, max-shifted.
void LogSoftmax(std::span<const double> z, double temperature,
                std::span<double> out) {
  double m = z[0] / temperature;
  for (double v : z) m = std::max(m, v / temperature);
  double s = 0.0;
  for (double v : z) s += std::exp(v / temperature - m);
  const double lse = m + std::log(s);
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] / temperature - lse;
}

void CheckFeatures(const Example& ex) {
  for (double v : ex.features) {
    if (!std::isfinite(v)) throw NumericError("non-finite feature in batch");
  }
}

}  // namespace

std::vector<double> ForwardLogits(const ParamVector& w, std::span<const double> x) {
  CheckClassifier(w);
  std::vector<double> h;
  std::vector<double> z(w.layout.n_classes);
  Forward(w, OffsetsFor(w.layout), x, h, z);
  return z;
}

std::vector<double> ForwardBatch(const ParamVector& w,
                                 std::span<const Example* const> batch) {
  CheckClassifier(w);
  const std::size_t n_classes = w.layout.n_classes;
  const Offsets o = OffsetsFor(w.layout);
  std::vector<double> out(batch.size() * n_classes);
  std::vector<double> h;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Forward(w, o, batch[i]->features, h,
            std::span<double>(out).subspan(i * n_classes, n_classes));
  }
  return out;
}

std::pair<LossBreakdown, ParamVector> LossAndGrad(
    const ParamVector& w, std::span<const Example* const> batch,
    std::optional<std::span<const double>> teacher_logits,
    const ParamVector* anchor, const LossOptions& options) {
  CheckClassifier(w);
  if (batch.empty()) throw InvalidParameter("LossAndGrad: empty batch");
  if (!(options.rho >= 0.0) || !(options.nu >= 0.0)) {
    throw InvalidParameter("LossAndGrad: rho and nu must be >= 0");
  }
  if (!(options.temperature > 0.0)) {
    throw InvalidParameter("LossAndGrad: temperature must be positive");
  }
  const bool use_distill = options.rho > 0.0;
  const bool use_prox = options.nu > 0.0;
  const Layout& l = w.layout;
  const std::size_t n_classes = l.n_classes;
  if (use_distill) {
    if (!teacher_logits) {
      throw InvalidParameter("LossAndGrad: rho > 0 requires teacher logits");
    }
    if (teacher_logits->size() != batch.size() * n_classes) {
      throw InvalidParameter("LossAndGrad: teacher logits shape mismatch");
    }
    for (double v : *teacher_logits) {
      if (!std::isfinite(v)) throw NumericError("non-finite teacher logit");
    }
  }
  if (use_prox) {
    if (anchor == nullptr) {
      throw InvalidParameter("LossAndGrad: nu > 0 requires an anchor");
    }
    if (anchor->size() != w.size()) {
      throw InvalidParameter("LossAndGrad: anchor size mismatch");
    }
    anchor->CheckFinite("proximal anchor");
  }
  w.CheckFinite("model weights");

  const Offsets o = OffsetsFor(l);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const double t = options.temperature;
  ParamVector grad(l);
  double* g = grad.values.data();
  const double* p = w.values.data();

  std::vector<double> h;
  std::vector<double> z(n_classes), log_p(n_classes), dz(n_classes);
  std::vector<double> log_q(n_classes), teacher_p(n_classes);
  std::vector<double> dh(l.hidden);
  LossBreakdown loss;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Example& ex = *batch[i];
    CheckFeatures(ex);
    if (ex.label >= n_classes) throw InvalidParameter("label out of range");
    Forward(w, o, ex.features, h, z);
    LogSoftmax(z, 1.0, log_p);
    loss.supervised -= log_p[ex.label];
    for (std::size_t c = 0; c < n_classes; ++c) dz[c] = std::exp(log_p[c]);
    dz[ex.label] -= 1.0;

    if (use_distill) {
      std::span<const double> zt = teacher_logits->subspan(i * n_classes, n_classes);
      if (options.distill == DistillLoss::kSoftCrossEntropy) {
        LogSoftmax(zt, t, teacher_p);
        for (double& v : teacher_p) v = std::exp(v);
        LogSoftmax(z, t, log_q);
        double psi = 0.0;
        for (std::size_t c = 0; c < n_classes; ++c) {
          psi -= teacher_p[c] * log_q[c];
          dz[c] += options.rho * (std::exp(log_q[c]) - teacher_p[c]) / t;
        }
        loss.distill += psi;
      } else {
        const double inv_c = 1.0 / static_cast<double>(n_classes);
        double psi = 0.0;
        for (std::size_t c = 0; c < n_classes; ++c) {
          const double diff = z[c] - zt[c];
          psi += 0.5 * diff * diff * inv_c;
          dz[c] += options.rho * diff * inv_c;
        }
        loss.distill += psi;
      }
    }
    for (double& v : dz) v *= inv_n;

    // Backprop into the output layer.
    std::span<const double> in = ex.features;
    std::size_t in_dim = l.d_in;
    if (l.hidden > 0) {
      in = h;
      in_dim = l.hidden;
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
      double* row = g + o.w2 + c * in_dim;
      for (std::size_t k = 0; k < in_dim; ++k) row[k] += dz[c] * in[k];
      g[o.b2 + c] += dz[c];
    }
    if (l.hidden > 0) {
      std::fill(dh.begin(), dh.end(), 0.0);
      for (std::size_t c = 0; c < n_classes; ++c) {
        const double* row = p + o.w2 + c * l.hidden;
        for (std::size_t j = 0; j < l.hidden; ++j) dh[j] += dz[c] * row[j];
      }
      for (std::size_t j = 0; j < l.hidden; ++j) {
        const double da = dh[j] * (1.0 - h[j] * h[j]);
        double* row = g + o.w1 + j * l.d_in;
        for (std::size_t k = 0; k < l.d_in; ++k) row[k] += da * ex.features[k];
        g[o.b1 + j] += da;
      }
    }
  }
  loss.supervised *= inv_n;
  loss.distill *= inv_n;

  if (use_prox) {
    double sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = p[i] - anchor->values[i];
      sq += d * d;
      g[i] += options.nu * d;
    }
    loss.proximal = 0.5 * sq;
  }
  loss.total = loss.supervised + options.rho * loss.distill +
               options.nu * loss.proximal;
  if (!std::isfinite(loss.total)) {
    throw NumericError("LossAndGrad: loss is not finite");
  }
  return {loss, std::move(grad)};
}

std::pair<LossBreakdown, ParamVector> LossAndGrad(
    const ParamVector& w, std::span<const Example> batch,
    std::optional<std::span<const double>> teacher_logits,
    const ParamVector* anchor, const LossOptions& options) {
  std::vector<const Example*> ptrs;
  ptrs.reserve(batch.size());
  for (const Example& ex : batch) ptrs.push_back(&ex);
  return LossAndGrad(w, ptrs, teacher_logits, anchor, options);
}

LocalResult LocalSgd(const ParamVector& w0, std::span<const Example> shard,
                     const LocalTrainSpec& spec, const ParamVector* teacher,
                     const ParamVector* anchor, Stream& rng) {
  if (shard.empty()) throw InvalidParameter("LocalSgd: empty shard");
  if (!(spec.eta_l >= 0.0) || !std::isfinite(spec.eta_l)) {
    throw InvalidParameter("LocalSgd: eta_l must be finite and >= 0");
  }
  if (spec.batch_size == 0) throw InvalidParameter("LocalSgd: batch_size is 0");
  if (spec.loss.rho > 0.0 && teacher == nullptr) {
    throw InvalidParameter("LocalSgd: rho > 0 requires a teacher model");
  }

  const std::size_t n = shard.size();
  const std::size_t bs = std::min(spec.batch_size, n);
  const std::size_t per_pass = (n + bs - 1) / bs;
  const std::size_t total_steps = spec.steps ? *spec.steps : spec.epochs * per_pass;

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  auto reshuffle = [&] {
    for (std::size_t i = n; i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.Below(i)]);
    }
  };

  LocalResult result{w0, 0, 0};
  std::vector<std::size_t> idx;
  std::vector<const Example*> batch;
  std::size_t pos = n;  // forces a shuffle before the first step
  for (std::size_t step = 0; step < total_steps; ++step) {
    if (pos >= n) {
      reshuffle();
      pos = 0;
    }
    const std::size_t len = std::min(bs, n - pos);
    idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
               perm.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
    // Batch membership is random; evaluation order within it is canonical.
    std::sort(idx.begin(), idx.end());
    batch.clear();
    for (std::size_t i : idx) batch.push_back(&shard[i]);

    std::optional<std::vector<double>> tl;
    if (spec.loss.rho > 0.0) tl = ForwardBatch(*teacher, batch);
    auto [loss, grad] = LossAndGrad(
        result.w, batch,
        tl ? std::optional<std::span<const double>>(*tl) : std::nullopt,
        spec.loss.nu > 0.0 ? anchor : nullptr, spec.loss);
    Axpy(-spec.eta_l, grad, result.w);
    ++result.steps;
    result.examples_processed += len;
  }
  return result;
}

std::size_t Predict(const ParamVector& w, std::span<const double> x) {
  const std::vector<double> z = ForwardLogits(w, x);
  std::size_t best = 0;
  for (std::size_t c = 1; c < z.size(); ++c) {
    if (z[c] > z[best]) best = c;
  }
  return best;
}

double Accuracy(const ParamVector& w, std::span<const Example> examples) {
  if (examples.empty()) throw InvalidParameter("Accuracy: empty example set");
  std::size_t correct = 0;
  for (const Example& ex : examples) {
    correct += Predict(w, ex.features) == ex.label;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace fedsim
