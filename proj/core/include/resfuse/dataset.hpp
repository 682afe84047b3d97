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

// Phantom dataset directories.
//
//   DIR/manifest.txt          text manifest (format below)
//   DIR/case_<n>_pre.rfsv     float32 [1,D,H,W]
//   DIR/case_<n>_post.rfsv    float32 [1,D,H,W]
//   DIR/case_<n>_labels.rfsv  uint8   [D,H,W]
//
// manifest.txt:
//
//   resfuse-dataset 1
//   seed <u64>
//   spec <phantom spec JSON, one line>
//   cases <count>
//   case <n> <train|val>      (one line per case)

#ifndef RESFUSE_DATASET_HPP_
#define RESFUSE_DATASET_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "resfuse/phantom.hpp"

namespace resfuse {

struct DatasetCase {
  std::size_t id = 0;
  std::string split;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  PhantomSpec spec;
  std::vector<DatasetCase> cases;

  std::vector<std::size_t> ids(std::string_view split) const;
};

/// Seed of case `id` in a dataset generated with `dataset_seed`.
std::uint64_t case_seed(std::uint64_t dataset_seed, std::size_t id);

/// The first round(train_fraction * count) cases are "train", the rest "val".
DatasetManifest make_manifest(const PhantomSpec& spec, std::size_t count, std::uint64_t seed,
                              double train_fraction = 0.75);

/// Generates every case of the manifest and writes the directory.
void write_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest);

DatasetManifest read_manifest(const std::filesystem::path& dir);
Sample load_case(const std::filesystem::path& dir, std::size_t id);

/// A split loaded into memory.
struct LoadedSplit {
  std::vector<std::size_t> ids;
  std::vector<Sample> samples;
};

LoadedSplit load_split(const std::filesystem::path& dir, const DatasetManifest& manifest,
                       std::string_view split);

}  // namespace resfuse

#endif  // RESFUSE_DATASET_HPP_
