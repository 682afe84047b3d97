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

// RFSV volume files. Little-endian:
//
//   "RFSV" | u32 version (1) | u8 dtype (0 float32, 1 uint8) | u8 rank |
//   rank x u32 dims | raw data | u32 CRC32 of all preceding bytes

#ifndef RESFUSE_VOLUME_IO_HPP_
#define RESFUSE_VOLUME_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "resfuse/tensor.hpp"

namespace resfuse {

inline constexpr std::uint32_t kVolumeFormatVersion = 1;

using Volume = std::variant<Tensor, LabelVolume>;

std::vector<std::uint8_t> encode_volume(const Tensor& t);
std::vector<std::uint8_t> encode_volume(const LabelVolume& labels);
/// Throws FormatError on any defect; never returns a partial volume.
Volume decode_volume(std::span<const std::uint8_t> bytes);

void write_volume(const std::filesystem::path& path, const Tensor& t);
void write_volume(const std::filesystem::path& path, const LabelVolume& labels);
Volume read_volume(const std::filesystem::path& path);
Tensor read_float_volume(const std::filesystem::path& path);
LabelVolume read_label_volume(const std::filesystem::path& path);

}  // namespace resfuse

#endif  // RESFUSE_VOLUME_IO_HPP_
