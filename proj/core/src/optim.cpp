// Copyright 2026 The ResFuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "resfuse/optim.hpp"

#include <cmath>

namespace resfuse {

void adam_step(ParameterSet& params, AdamState& state, const AdamConfig& config) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta1), t));
  const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(config.beta2), t));
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    auto& mom = state.moments[name];
    const std::size_t n = p.value.size();
    if (mom.m.size() != n) {
      mom.m.assign(n, 0.0f);
      mom.v.assign(n, 0.0f);
    }
    const auto g = p.value.grad();
    const bool has_grad = !g.empty();
    for (std::size_t i = 0; i < n; ++i) {
      const float gi = has_grad ? g[i] : 0.0f;
      mom.m[i] = config.beta1 * mom.m[i] + (1.0f - config.beta1) * gi;
      mom.v[i] = config.beta2 * mom.v[i] + (1.0f - config.beta2) * gi * gi;
      const float mhat = mom.m[i] / bc1;
      const float vhat = mom.v[i] / bc2;
      p.value[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

}  // namespace resfuse
