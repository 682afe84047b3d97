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

#include "resfuse/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

namespace resfuse {
namespace {

using nlohmann::json;

json range_json(const CountRange& r) { return json::array({r.min, r.max}); }

CountRange range_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("phantom spec: count range must be [min, max]");
  return {j[0].get<int>(), j[1].get<int>()};
}

struct Ellipsoid {
  double c[3];
  double a[3];
};

// Voxels inside the ellipsoid, as flat indices.
std::vector<std::size_t> rasterize(const Ellipsoid& e, const std::array<std::size_t, 3>& size) {
  std::vector<std::size_t> out;
  long lo[3], hi[3];
  for (int k = 0; k < 3; ++k) {
    lo[k] = std::max(0L, static_cast<long>(std::floor(e.c[k] - e.a[k])));
    hi[k] = std::min(static_cast<long>(size[k]) - 1, static_cast<long>(std::ceil(e.c[k] + e.a[k])));
  }
  for (long d = lo[0]; d <= hi[0]; ++d) {
    for (long h = lo[1]; h <= hi[1]; ++h) {
      for (long w = lo[2]; w <= hi[2]; ++w) {
        const double x = (d - e.c[0]) / e.a[0];
        const double y = (h - e.c[1]) / e.a[1];
        const double z = (w - e.c[2]) / e.a[2];
        if (x * x + y * y + z * z <= 1.0) {
          out.push_back((static_cast<std::size_t>(d) * size[1] + h) * size[2] + w);
        }
      }
    }
  }
  return out;
}

// Marks every voxel within one step (26-neighbourhood) of `voxels`.
void mark_dilated(const std::vector<std::size_t>& voxels, const std::array<std::size_t, 3>& size,
                  std::vector<std::uint8_t>& occupied) {
  const long D = static_cast<long>(size[0]), H = static_cast<long>(size[1]),
             W = static_cast<long>(size[2]);
  for (std::size_t i : voxels) {
    const long d = static_cast<long>(i / (size[1] * size[2]));
    const long h = static_cast<long>((i / size[2]) % size[1]);
    const long w = static_cast<long>(i % size[2]);
    for (long dd = -1; dd <= 1; ++dd) {
      for (long hh = -1; hh <= 1; ++hh) {
        for (long ww = -1; ww <= 1; ++ww) {
          const long a = d + dd, b = h + hh, c = w + ww;
          if (a < 0 || a >= D || b < 0 || b >= H || c < 0 || c >= W) continue;
          occupied[(a * H + b) * W + c] = 1;
        }
      }
    }
  }
}

// One pass of a 3x3x3 mean filter with replicated borders.
std::vector<double> box_blur(const std::vector<double>& v, const std::array<std::size_t, 3>& size) {
  const long D = static_cast<long>(size[0]), H = static_cast<long>(size[1]),
             W = static_cast<long>(size[2]);
  std::vector<double> out(v.size());
  for (long d = 0; d < D; ++d) {
    for (long h = 0; h < H; ++h) {
      for (long w = 0; w < W; ++w) {
        double acc = 0.0;
        for (long dd = -1; dd <= 1; ++dd) {
          const long a = std::clamp(d + dd, 0L, D - 1);
          for (long hh = -1; hh <= 1; ++hh) {
            const long b = std::clamp(h + hh, 0L, H - 1);
            for (long ww = -1; ww <= 1; ++ww) {
              const long c = std::clamp(w + ww, 0L, W - 1);
              acc += v[(a * H + b) * W + c];
            }
          }
        }
        out[(d * H + h) * W + w] = acc / 27.0;
      }
    }
  }
  return out;
}

}  // namespace

void PhantomSpec::validate() const {
  for (auto s : size) {
    if (s == 0) throw ConfigError("phantom spec: size extents must be positive");
  }
  for (const auto* r : {&lesion_count, &cyst_count, &gland_count}) {
    if (r->min < 0 || r->max < r->min) throw ConfigError("phantom spec: bad count range");
  }
  if (!(radius_min > 0.0) || radius_max < radius_min) throw ConfigError("phantom spec: bad radius range");
  if (!(axis_ratio_min > 0.0) || axis_ratio_max < axis_ratio_min) {
    throw ConfigError("phantom spec: bad axis ratio range");
  }
  if (noise_sigma < 0.0) throw ConfigError("phantom spec: noise_sigma must be >= 0");
  if (max_attempts < 1) throw ConfigError("phantom spec: max_attempts must be >= 1");
}

std::string PhantomSpec::to_json() const {
  json j = {
      {"size", size},
      {"lesion_count", range_json(lesion_count)},
      {"cyst_count", range_json(cyst_count)},
      {"gland_count", range_json(gland_count)},
      {"radius_range", {radius_min, radius_max}},
      {"axis_ratio_range", {axis_ratio_min, axis_ratio_max}},
      {"background", background},
      {"lesion_pre", lesion_pre},
      {"gland_pre", gland_pre},
      {"cyst_pre", cyst_pre},
      {"lesion_enhancement", lesion_enhancement},
      {"gland_enhancement", gland_enhancement},
      {"cyst_enhancement", cyst_enhancement},
      {"background_enhancement", background_enhancement},
      {"noise_sigma", noise_sigma},
      {"smoothing", smoothing},
      {"max_attempts", max_attempts},
  };
  return j.dump();
}

PhantomSpec PhantomSpec::from_json(const std::string& text) {
  PhantomSpec s;
  try {
    const auto j = json::parse(text);
    if (!j.is_object()) throw ConfigError("phantom spec: expected a JSON object");
    if (j.contains("size")) s.size = j.at("size").get<std::array<std::size_t, 3>>();
    if (j.contains("lesion_count")) s.lesion_count = range_from(j.at("lesion_count"));
    if (j.contains("cyst_count")) s.cyst_count = range_from(j.at("cyst_count"));
    if (j.contains("gland_count")) s.gland_count = range_from(j.at("gland_count"));
    if (j.contains("radius_range")) {
      s.radius_min = j.at("radius_range").at(0).get<double>();
      s.radius_max = j.at("radius_range").at(1).get<double>();
    }
    if (j.contains("axis_ratio_range")) {
      s.axis_ratio_min = j.at("axis_ratio_range").at(0).get<double>();
      s.axis_ratio_max = j.at("axis_ratio_range").at(1).get<double>();
    }
    s.background = j.value("background", s.background);
    s.lesion_pre = j.value("lesion_pre", s.lesion_pre);
    s.gland_pre = j.value("gland_pre", s.gland_pre);
    s.cyst_pre = j.value("cyst_pre", s.cyst_pre);
    s.lesion_enhancement = j.value("lesion_enhancement", s.lesion_enhancement);
    s.gland_enhancement = j.value("gland_enhancement", s.gland_enhancement);
    s.cyst_enhancement = j.value("cyst_enhancement", s.cyst_enhancement);
    s.background_enhancement = j.value("background_enhancement", s.background_enhancement);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.smoothing = j.value("smoothing", s.smoothing);
    s.max_attempts = j.value("max_attempts", s.max_attempts);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("phantom spec: ") + e.what());
  }
  s.validate();
  return s;
}

LabelVolume Sample::lesion_mask() const {
  LabelVolume m(labels.shape);
  for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = labels.values[i] == kLesionTissue;
  return m;
}

Sample generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto& size = spec.size;
  const std::size_t nvox = size[0] * size[1] * size[2];
  std::mt19937_64 rng(seed);

  auto draw_count = [&](const CountRange& r) {
    return std::uniform_int_distribution<int>(r.min, r.max)(rng);
  };
  const int counts[3] = {draw_count(spec.lesion_count), draw_count(spec.cyst_count),
                         draw_count(spec.gland_count)};
  const TissueLabel kinds[3] = {kLesionTissue, kCystTissue, kGlandTissue};

  LabelVolume labels(Shape{size[0], size[1], size[2]});
  std::vector<std::uint8_t> occupied(nvox, 0);
  std::uniform_real_distribution<double> radius(spec.radius_min, spec.radius_max);
  std::uniform_real_distribution<double> ratio(spec.axis_ratio_min, spec.axis_ratio_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int k = 0; k < 3; ++k) {
    for (int obj = 0; obj < counts[k]; ++obj) {
      bool placed = false;
      for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
        Ellipsoid e;
        const double r = radius(rng);
        bool fits = true;
        for (int a = 0; a < 3; ++a) {
          e.a[a] = r * ratio(rng);
          const double room = static_cast<double>(size[a]) - 1.0 - 2.0 * e.a[a];
          e.c[a] = e.a[a] + unit(rng) * std::max(room, 0.0);
          fits = fits && room >= 0.0;
        }
        if (!fits) continue;
        const auto voxels = rasterize(e, size);
        if (voxels.empty()) continue;
        if (std::any_of(voxels.begin(), voxels.end(), [&](std::size_t i) { return occupied[i]; })) {
          continue;
        }
        for (std::size_t i : voxels) labels.values[i] = kinds[k];
        mark_dilated(voxels, size, occupied);
        placed = true;
      }
      if (!placed) {
        throw PlacementError("phantom: could not place object " + std::to_string(obj + 1) +
                             " of kind " + std::to_string(kinds[k]) + " after " +
                             std::to_string(spec.max_attempts) +
                             " attempts; reduce object counts or radii");
      }
    }
  }

  std::vector<double> pre(nvox), post(nvox);
  for (std::size_t i = 0; i < nvox; ++i) {
    double p = spec.background, f = spec.background_enhancement;
    switch (labels.values[i]) {
      case kLesionTissue:
        p = spec.lesion_pre;
        f = spec.lesion_enhancement;
        break;
      case kCystTissue:
        p = spec.cyst_pre;
        f = spec.cyst_enhancement;
        break;
      case kGlandTissue:
        p = spec.gland_pre;
        f = spec.gland_enhancement;
        break;
      default:
        break;
    }
    pre[i] = p;
    post[i] = p * f;
  }
  if (spec.smoothing) {
    pre = box_blur(pre, size);
    post = box_blur(post, size);
  }

  Sample s;
  s.pre = Tensor(Shape{1, size[0], size[1], size[2]});
  s.post = Tensor(Shape{1, size[0], size[1], size[2]});
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
  const bool noisy = spec.noise_sigma > 0.0;
  for (std::size_t i = 0; i < nvox; ++i) {
    const double v = pre[i] + (noisy ? noise(rng) : 0.0);
    s.pre[i] = static_cast<float>(std::clamp(v, 0.0, 2.0));
  }
  for (std::size_t i = 0; i < nvox; ++i) {
    const double v = post[i] + (noisy ? noise(rng) : 0.0);
    s.post[i] = static_cast<float>(std::clamp(v, 0.0, 2.0));
  }
  s.labels = std::move(labels);
  return s;
}

Tensor subtraction(const Tensor& pre, const Tensor& post) {
  if (pre.shape() != post.shape()) {
    throw ShapeError("subtraction", "shape", "pre " + pre.shape().str() + " vs post " + post.shape().str());
  }
  Tensor out(post.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = post[i] - pre[i];
  return out;
}

}  // namespace resfuse
