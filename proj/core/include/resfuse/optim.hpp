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

#ifndef RESFUSE_OPTIM_HPP_
#define RESFUSE_OPTIM_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "resfuse/parameter.hpp"

namespace resfuse {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamMoments {
  std::vector<float> m;
  std::vector<float> v;
  bool operator==(const AdamMoments&) const = default;
};

/// Per-parameter first/second moments keyed by parameter name, plus the
/// shared step counter.
struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, AdamMoments> moments;
  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update over every trainable parameter, in name
/// order. Parameters without a gradient buffer are treated as zero-gradient.
void adam_step(ParameterSet& params, AdamState& state, const AdamConfig& config);

}  // namespace resfuse

#endif  // RESFUSE_OPTIM_HPP_
