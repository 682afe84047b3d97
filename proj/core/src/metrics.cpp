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

#include "resfuse/metrics.hpp"

#include <string>

#include "json.hpp"

namespace resfuse {
namespace {

struct Overlap {
  std::size_t pred = 0, gt = 0, both = 0;
};

Overlap count_overlap(const char* op, const LabelVolume& p, const LabelVolume& g) {
  if (p.shape != g.shape) {
    throw ShapeError(op, "shape", "prediction " + p.shape.str() + " vs ground truth " + g.shape.str());
  }
  Overlap o;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p.values[i] != 0, b = g.values[i] != 0;
    o.pred += a;
    o.gt += b;
    o.both += a && b;
  }
  return o;
}

}  // namespace

double dice_coefficient(const LabelVolume& pred_mask, const LabelVolume& gt_mask) {
  const auto o = count_overlap("dice_coefficient", pred_mask, gt_mask);
  if (o.pred + o.gt == 0) return 1.0;
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.pred + o.gt);
}

double pixel_recall(const LabelVolume& pred_mask, const LabelVolume& gt_mask) {
  const auto o = count_overlap("pixel_recall", pred_mask, gt_mask);
  if (o.gt == 0) return 1.0;
  return static_cast<double>(o.both) / static_cast<double>(o.gt);
}

RegionMasks compose_regions(const LabelVolume& labels) {
  RegionMasks r{LabelVolume(labels.shape), LabelVolume(labels.shape), LabelVolume(labels.shape)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto v = labels.values[i];
    if (v > kTumorEnhancing) {
      throw Error("compose_regions: unknown label " + std::to_string(v) + " at voxel " +
                  std::to_string(i));
    }
    r.enhancing.values[i] = v == kTumorEnhancing;
    r.tumor_core.values[i] = v == kTumorEnhancing || v == kTumorNecrotic;
    r.whole_tumor.values[i] = v != kTumorBackground;
  }
  return r;
}

double MetricsRecord::gland_false_positive_rate() const {
  std::size_t total = 0, fp = 0;
  for (const auto& c : cases) {
    total += c.gland_voxels;
    fp += c.gland_false_positives;
  }
  return total ? static_cast<double>(fp) / static_cast<double>(total) : 0.0;
}

std::string MetricsRecord::to_json_line() const {
  nlohmann::json j = {{"epoch", epoch}, {"split", split},   {"dsc", dsc},
                      {"recall", recall}, {"loss", loss}, {"wall_ms", wall_ms}};
  return j.dump();
}

void aggregate(MetricsRecord& record) {
  double d = 0.0, r = 0.0;
  for (const auto& c : record.cases) {
    d += c.dsc;
    r += c.recall;
  }
  const double n = static_cast<double>(record.cases.size());
  record.dsc = record.cases.empty() ? 0.0 : d / n;
  record.recall = record.cases.empty() ? 0.0 : r / n;
}

}  // namespace resfuse
