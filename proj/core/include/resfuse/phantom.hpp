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

// Synthetic pre-/post-contrast phantoms.
//
// Each case holds axis-aligned ellipsoids of three tissue kinds on a uniform
// background:
//
//   tissue       pre    enhancement   post
//   background   0.20   x1.0          0.20
//   lesion       0.30   x2.2          0.66
//   gland        0.55   x1.2          0.66
//   cyst         0.10   x1.0          0.10
//
// Lesion and gland are indistinguishable in the post volume alone and differ
// by 0.25 in the pre volume, so telling them apart requires both.

#ifndef RESFUSE_PHANTOM_HPP_
#define RESFUSE_PHANTOM_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

#include "resfuse/tensor.hpp"

namespace resfuse {

enum TissueLabel : std::uint8_t {
  kBackgroundTissue = 0,
  kLesionTissue = 1,
  kCystTissue = 2,
  kGlandTissue = 3,
};

struct CountRange {
  int min = 0;
  int max = 0;
  bool operator==(const CountRange&) const = default;
};

struct PhantomSpec {
  std::array<std::size_t, 3> size{32, 32, 32};  // D, H, W
  CountRange lesion_count{1, 3};
  CountRange cyst_count{1, 3};
  CountRange gland_count{1, 3};
  double radius_min = 3.0;  // voxels
  double radius_max = 6.0;
  double axis_ratio_min = 0.6;
  double axis_ratio_max = 1.4;

  double background = 0.20;
  double lesion_pre = 0.30;
  double gland_pre = 0.55;
  double cyst_pre = 0.10;
  double lesion_enhancement = 2.2;
  double gland_enhancement = 1.2;
  double cyst_enhancement = 1.0;
  double background_enhancement = 1.0;

  double noise_sigma = 0.03;
  bool smoothing = true;  // one 3x3x3 box blur before noise
  int max_attempts = 1000;  // per object

  void validate() const;
  std::string to_json() const;
  static PhantomSpec from_json(const std::string& text);
  bool operator==(const PhantomSpec&) const = default;
};

struct Sample {
  Tensor pre;          // [1,D,H,W]
  Tensor post;         // [1,D,H,W]
  LabelVolume labels;  // [D,H,W], TissueLabel values

  /// Segmentation target: 1 where labels == lesion, else 0.
  LabelVolume lesion_mask() const;
};

/// Deterministic in (spec, seed). Throws PlacementError when an object cannot
/// be placed without overlap within spec.max_attempts tries.
Sample generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

/// post - pre, unclipped.
Tensor subtraction(const Tensor& pre, const Tensor& post);

}  // namespace resfuse

#endif  // RESFUSE_PHANTOM_HPP_
