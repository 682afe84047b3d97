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


#ifndef RESFUSE_TRAIN_HPP_
#define RESFUSE_TRAIN_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "resfuse/checkpoint.hpp"
#include "resfuse/dataset.hpp"
#include "resfuse/metrics.hpp"
#include "resfuse/network.hpp"
#include "resfuse/phantom.hpp"

namespace resfuse {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 2;
  float lr = 1e-3f;
  std::uint64_t seed = 0;
  FusionVariant variant = FusionVariant::kWeightedAdd;
  /// Plain model with the post volume fed to both branches.
  bool post_only = false;
  std::size_t levels = 3;
  std::size_t base_channels = 8;

  std::filesystem::path dataset;
  std::filesystem::path checkpoint;  // last; best goes to <checkpoint>.best
  std::filesystem::path log;         // JSONL, one validation record per epoch
  /// Continue from this checkpoint up to `epochs` total epochs.
  std::optional<std::filesystem::path> resume;

  void validate() const;
  std::string to_json() const;
  /// Model config implied by this training config.
  ModelConfig model_config() const;
};

/// Samples held in memory.
struct TrainData {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<std::size_t> val_ids;  // case ids for val; defaults to 0..n-1
};

TrainData load_train_data(const std::filesystem::path& dataset);

struct TrainState {
  DualBranchSegNet net;
  AdamState optimizer;
  CheckpointMeta meta;
};

/// Fresh state for `config`: He-initialized net, empty optimizer.
TrainState initial_state(const TrainConfig& config);

struct TrainHooks {
  /// After each epoch's validation, with the epoch's record.
  std::function<void(const TrainState&, const MetricsRecord&)> on_epoch;
  /// When the validation DSC improves.
  std::function<void(const TrainState&)> on_best;
};

/// Runs epochs state.meta.progress.epoch + 1 .. config.epochs in place.
/// Throws DivergenceError on a non-finite loss or activation.
std::vector<MetricsRecord> train_in_memory(const TrainConfig& config, const TrainData& data,
                                           TrainState& state, const TrainHooks& hooks = {});

/// File-based training: loads config.dataset, writes checkpoints and the log.
/// The log is truncated on a fresh run and appended to on resume.
TrainState train(const TrainConfig& config);

/// Batch of samples as network input tensors and a lesion-vs-rest target.
struct Batch {
  Tensor pre;          // [B,1,D,H,W]
  Tensor post;         // [B,1,D,H,W]
  LabelVolume target;  // [B,D,H,W]
};
Batch make_batch(const std::vector<const Sample*>& samples, bool post_only);

struct EvalOptions {
  bool post_only = false;
  /// Write mid-axial-slice PGM/PPM images per case here when set.
  std::optional<std::filesystem::path> export_slices;
};

/// Per-case DSC / recall / gland false positives of the lesion class, with
/// per-voxel argmax as the decision rule.
MetricsRecord evaluate(const DualBranchSegNet& net, const std::vector<Sample>& samples,
                       const std::vector<std::size_t>& ids, const EvalOptions& options = {});

/// Per-voxel argmax label map [D,H,W] of a single case; pre/post are
/// [1,D,H,W] or [D,H,W].
LabelVolume predict(const DualBranchSegNet& net, const Tensor& pre, const Tensor& post,
                    bool post_only = false);

/// Shuffled sample order of an epoch; a pure function of (seed, epoch, n).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n);

}  // namespace resfuse

#endif  // RESFUSE_TRAIN_HPP_
