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


// RFCK checkpoint files (little-endian):
//
//   "RFCK" | u32 version | str meta JSON {"adam","model","progress","post_only"}
//   u32 parameter count, then per parameter (name order):
//     str name | u8 rank | u32 dims[rank] | f32 data
//   u64 optimizer step | u32 moment count, then per moment (name order):
//     str "m:<param>" or "v:<param>" | u8 rank | u32 dims[rank] | f32 data
//   u32 CRC32 of everything before it
//
// str = u32 byte length + UTF-8 bytes.

#ifndef RESFUSE_CHECKPOINT_HPP_
#define RESFUSE_CHECKPOINT_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "resfuse/network.hpp"
#include "resfuse/optim.hpp"

namespace resfuse {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct TrainingProgress {
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;
  double best_val_dsc = -1.0;  // -1 before any evaluation
  std::size_t best_epoch = 0;
  bool operator==(const TrainingProgress&) const = default;
};

struct CheckpointMeta {
  AdamConfig adam;
  TrainingProgress progress;
  /// The model was trained with the post volume in both branches.
  bool post_only = false;
};

struct Checkpoint {
  DualBranchSegNet net;
  AdamState optimizer;
  CheckpointMeta meta;
};

std::vector<std::uint8_t> encode_checkpoint(const DualBranchSegNet& net, const AdamState& optimizer,
                                            const CheckpointMeta& meta);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Decodes into an existing net. Throws ConfigError when the stored model
/// config differs from net.config(); nothing is modified unless the whole
/// file validates.
void decode_checkpoint_into(std::span<const std::uint8_t> bytes, DualBranchSegNet& net,
                            AdamState* optimizer = nullptr, CheckpointMeta* meta = nullptr);

void save_checkpoint(const std::filesystem::path& path, const DualBranchSegNet& net,
                     const AdamState& optimizer, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);
void load_checkpoint_into(const std::filesystem::path& path, DualBranchSegNet& net,
                          AdamState* optimizer = nullptr, CheckpointMeta* meta = nullptr);

}  // namespace resfuse

#endif  // RESFUSE_CHECKPOINT_HPP_
