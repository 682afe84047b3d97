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

#ifndef RESFUSE_METRICS_HPP_
#define RESFUSE_METRICS_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "resfuse/tensor.hpp"

namespace resfuse {

/// 2|P n G| / (|P| + |G|); 1.0 when both masks are empty. Nonzero = member.
double dice_coefficient(const LabelVolume& pred_mask, const LabelVolume& gt_mask);

/// |P n G| / |G|; 1.0 when G is empty.
double pixel_recall(const LabelVolume& pred_mask, const LabelVolume& gt_mask);

/// Brain-tumour label map (BraTS numbering).
enum TumorLabel : std::uint8_t {
  kTumorBackground = 0,
  kTumorNecrotic = 1,
  kTumorEdema = 2,
  kTumorEnhancing = 3,
};

struct RegionMasks {
  LabelVolume whole_tumor;     // enhancing + necrotic + edema
  LabelVolume tumor_core;      // enhancing + necrotic
  LabelVolume enhancing;       // enhancing
};

/// Throws Error on a label outside TumorLabel.
RegionMasks compose_regions(const LabelVolume& labels);

struct CaseMetrics {
  std::size_t case_id = 0;
  double dsc = 0.0;
  double recall = 0.0;
  std::size_t gland_voxels = 0;
  std::size_t gland_false_positives = 0;  // gland voxels predicted as lesion
};

struct MetricsRecord {
  std::size_t epoch = 0;
  std::string split;
  double dsc = 0.0;     // mean over cases
  double recall = 0.0;  // mean over cases
  double loss = 0.0;    // mean training loss of the epoch (0 when not training)
  double wall_ms = 0.0;
  std::vector<CaseMetrics> cases;

  /// Pooled fraction of gland voxels predicted as lesion; 0 with no gland.
  double gland_false_positive_rate() const;
  /// {"epoch","split","dsc","recall","loss","wall_ms"} on one line.
  std::string to_json_line() const;
};

/// Fills the aggregate dsc / recall of `record` from its cases.
void aggregate(MetricsRecord& record);

}  // namespace resfuse

#endif  // RESFUSE_METRICS_HPP_
