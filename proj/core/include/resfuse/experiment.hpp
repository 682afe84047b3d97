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


// Post-only vs direct vs weighted fusion on a phantom dataset.

#ifndef RESFUSE_EXPERIMENT_HPP_
#define RESFUSE_EXPERIMENT_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "resfuse/phantom.hpp"
#include "resfuse/train.hpp"

namespace resfuse {

struct CompareConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t epochs = 5;
  std::size_t batch_size = 2;
  float lr = 1e-3f;
  std::size_t levels = 3;
  std::size_t base_channels = 8;
  /// Noiseless cases for the gland false-positive measurement.
  std::size_t noiseless_cases = 20;
  std::uint64_t noiseless_seed = 7919;

  void validate() const;
  std::string to_json() const;
};

/// Arms in table order.
inline const std::vector<std::string>& comparison_arms() {
  static const std::vector<std::string> arms{"post-only", "direct", "weighted"};
  return arms;
}

/// Training config of one (arm, seed) cell.
TrainConfig arm_config(const CompareConfig& config, const std::string& arm, std::uint64_t seed);

/// Copy of `spec` with noise switched off.
PhantomSpec noiseless(const PhantomSpec& spec);
std::vector<Sample> generate_cases(const PhantomSpec& spec, std::size_t count, std::uint64_t seed);

struct CellResult {
  std::string arm;
  std::uint64_t seed = 0;
  std::size_t params = 0;
  double val_dsc = 0.0;     // final epoch, mean over val cases
  double val_recall = 0.0;
  double gland_fp_rate = 0.0;  // on the noiseless set
  double train_ms = 0.0;
};

struct ArmSummary {
  std::string arm;
  std::size_t params = 0;
  double dsc_mean = 0.0, dsc_median = 0.0;
  double recall_mean = 0.0, recall_median = 0.0;
  double gland_fp_median = 0.0;
};

struct ComparisonReport {
  CompareConfig config;
  std::vector<CellResult> cells;  // arm-major, seeds in config order
  std::vector<ArmSummary> arms;   // comparison_arms() order

  const ArmSummary& arm(const std::string& name) const;
  std::string to_json() const;
  /// Aligned text table, one row per arm.
  std::string to_table() const;
};

double median(std::vector<double> values);

/// Trains every (arm, seed) cell on `data` and evaluates it on data.val and
/// on `noiseless_set`. `on_cell` reports progress.
ComparisonReport run_comparison(const CompareConfig& config, const TrainData& data,
                                const std::vector<Sample>& noiseless_set,
                                const std::function<void(const CellResult&)>& on_cell = {});

}  // namespace resfuse

#endif  // RESFUSE_EXPERIMENT_HPP_
