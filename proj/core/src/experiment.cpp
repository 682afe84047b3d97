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


#include "resfuse/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "resfuse/dataset.hpp"

namespace resfuse {

void CompareConfig::validate() const {
  if (seeds.empty()) throw ConfigError("compare needs at least one seed");
  if (epochs == 0) throw ConfigError("compare epochs must be positive");
  arm_config(*this, "weighted", seeds.front()).validate();
}

std::string CompareConfig::to_json() const {
  nlohmann::json j = {{"seeds", seeds},
                      {"epochs", epochs},
                      {"batch_size", batch_size},
                      {"lr", lr},
                      {"levels", levels},
                      {"base_channels", base_channels},
                      {"noiseless_cases", noiseless_cases},
                      {"noiseless_seed", noiseless_seed}};
  return j.dump();
}

TrainConfig arm_config(const CompareConfig& config, const std::string& arm, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = config.epochs;
  t.batch_size = config.batch_size;
  t.lr = config.lr;
  t.seed = seed;
  t.levels = config.levels;
  t.base_channels = config.base_channels;
  if (arm == "post-only") {
    t.variant = FusionVariant::kPlainResidual;
    t.post_only = true;
  } else if (arm == "direct") {
    t.variant = FusionVariant::kDirectAdd;
  } else if (arm == "weighted") {
    t.variant = FusionVariant::kWeightedAdd;
  } else {
    throw ConfigError("unknown comparison arm '" + arm + "'");
  }
  return t;
}

PhantomSpec noiseless(const PhantomSpec& spec) {
  PhantomSpec s = spec;
  s.noise_sigma = 0.0;
  return s;
}

std::vector<Sample> generate_cases(const PhantomSpec& spec, std::size_t count, std::uint64_t seed) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_phantom(spec, case_seed(seed, i)));
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

const ArmSummary& ComparisonReport::arm(const std::string& name) const {
  for (const auto& a : arms) {
    if (a.arm == name) return a;
  }
  throw ConfigError("no arm '" + name + "' in report");
}

std::string ComparisonReport::to_json() const {
  nlohmann::json j;
  j["config"] = nlohmann::json::parse(config.to_json());
  j["cells"] = nlohmann::json::array();
  for (const auto& c : cells) {
    j["cells"].push_back({{"arm", c.arm},
                          {"seed", c.seed},
                          {"params", c.params},
                          {"val_dsc", c.val_dsc},
                          {"val_recall", c.val_recall},
                          {"gland_fp_rate", c.gland_fp_rate}});
  }
  j["arms"] = nlohmann::json::array();
  for (const auto& a : arms) {
    j["arms"].push_back({{"arm", a.arm},
                         {"params", a.params},
                         {"dsc_mean", a.dsc_mean},
                         {"dsc_median", a.dsc_median},
                         {"recall_mean", a.recall_mean},
                         {"recall_median", a.recall_median},
                         {"gland_fp_median", a.gland_fp_median}});
  }
  return j.dump();
}

std::string ComparisonReport::to_table() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %9s %9s %11s %9s %11s %13s\n", "method", "params",
                "DSC(%)", "DSC med(%)", "recall(%)", "recall med", "gland FP med");
  out << line;
  for (const auto& a : arms) {
    std::snprintf(line, sizeof line, "%-10s %9zu %9.2f %11.2f %9.2f %11.2f %13.2f\n", a.arm.c_str(),
                  a.params, 100.0 * a.dsc_mean, 100.0 * a.dsc_median, 100.0 * a.recall_mean,
                  100.0 * a.recall_median, 100.0 * a.gland_fp_median);
    out << line;
  }
  return out.str();
}

ComparisonReport run_comparison(const CompareConfig& config, const TrainData& data,
                                const std::vector<Sample>& noiseless_set,
                                const std::function<void(const CellResult&)>& on_cell) {
  config.validate();
  ComparisonReport report;
  report.config = config;
  std::vector<std::size_t> fp_ids(noiseless_set.size());
  std::iota(fp_ids.begin(), fp_ids.end(), std::size_t{0});

  for (const auto& arm : comparison_arms()) {
    std::vector<double> dsc, recall, fp;
    ArmSummary summary;
    summary.arm = arm;
    for (auto seed : config.seeds) {
      const TrainConfig tc = arm_config(config, arm, seed);
      const auto t0 = std::chrono::steady_clock::now();
      TrainState state = initial_state(tc);
      const auto history = train_in_memory(tc, data, state);
      CellResult cell;
      cell.arm = arm;
      cell.seed = seed;
      cell.params = state.net.param_count();
      cell.val_dsc = history.empty() ? 0.0 : history.back().dsc;
      cell.val_recall = history.empty() ? 0.0 : history.back().recall;
      cell.gland_fp_rate =
          evaluate(state.net, noiseless_set, fp_ids, {tc.post_only, std::nullopt}).gland_false_positive_rate();
      cell.train_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      if (on_cell) on_cell(cell);
      dsc.push_back(cell.val_dsc);
      recall.push_back(cell.val_recall);
      fp.push_back(cell.gland_fp_rate);
      summary.params = cell.params;
      report.cells.push_back(cell);
    }
    const double n = static_cast<double>(dsc.size());
    summary.dsc_mean = std::accumulate(dsc.begin(), dsc.end(), 0.0) / n;
    summary.recall_mean = std::accumulate(recall.begin(), recall.end(), 0.0) / n;
    summary.dsc_median = median(dsc);
    summary.recall_median = median(recall);
    summary.gland_fp_median = median(fp);
    report.arms.push_back(summary);
  }
  return report;
}

}  // namespace resfuse
