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

#ifndef FEDSIM_TESTS_GRADIENT_CHECK_H_
#define FEDSIM_TESTS_GRADIENT_CHECK_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedsim/model.h"
#include "fedsim/rng.h"

namespace fedsim::testing {

struct GradientCheckResult {
  std::size_t configs = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
// coordinates whose true derivative is ~0 from dividing roundoff by ~0.
inline double RelError(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Random layouts, batches, distillation and proximal weights; central
// differences with step h on the total loss.
inline GradientCheckResult RunGradientCheck(std::uint64_t seed, std::size_t n_configs,
                                            double h = 1e-5) {
  GradientCheckResult out;
  for (std::size_t k = 0; k < n_configs; ++k) {
    Stream rng = Stream::Derive(seed, Purpose::kQuadProbe, k);
    Layout layout;
    layout.d_in = 1 + rng.Below(6);
    layout.hidden = rng.Below(2) ? 0 : 1 + rng.Below(6);
    layout.n_classes = 2 + rng.Below(4);
    const ParamVector w = InitParams(layout, 0.8, rng);
    const ParamVector teacher = InitParams(layout, 0.8, rng);
    const ParamVector anchor = InitParams(layout, 0.8, rng);

    std::vector<Example> batch(1 + rng.Below(6));
    for (Example& ex : batch) {
      ex.features.resize(layout.d_in);
      for (double& f : ex.features) f = rng.Normal();
      ex.label = static_cast<ClassId>(rng.Below(layout.n_classes));
    }

    LossOptions opt;
    opt.rho = rng.Below(3) ? 2.0 * rng.Uniform() : 0.0;
    opt.nu = rng.Below(2) ? rng.Uniform() : 0.0;
    opt.distill = rng.Below(2) ? DistillLoss::kSoftCrossEntropy : DistillLoss::kLogitMse;
    opt.temperature = 0.5 + 2.5 * rng.Uniform();

    std::vector<const Example*> ptrs;
    for (const Example& ex : batch) ptrs.push_back(&ex);
    const std::vector<double> tl = ForwardBatch(teacher, ptrs);
    const std::optional<std::span<const double>> tspan =
        opt.rho > 0.0 ? std::optional<std::span<const double>>(tl) : std::nullopt;
    const ParamVector* anc = opt.nu > 0.0 ? &anchor : nullptr;

    const ParamVector grad = LossAndGrad(w, ptrs, tspan, anc, opt).second;
    ParamVector probe = w;
    for (std::size_t i = 0; i < w.size(); ++i) {
      probe[i] = w[i] + h;
      const double up = LossAndGrad(probe, ptrs, tspan, anc, opt).first.total;
      probe[i] = w[i] - h;
      const double down = LossAndGrad(probe, ptrs, tspan, anc, opt).first.total;
      probe[i] = w[i];
      const double numeric = (up - down) / (2.0 * h);
      out.max_rel_error = std::max(out.max_rel_error, RelError(grad[i], numeric));
      ++out.coordinates;
    }
    ++out.configs;
  }
  return out;
}

}  // namespace fedsim::testing

#endif  // FEDSIM_TESTS_GRADIENT_CHECK_H_
