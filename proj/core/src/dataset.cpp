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

#include "resfuse/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "resfuse/volume_io.hpp"

namespace resfuse {
namespace {

constexpr const char* kManifestName = "manifest.txt";
constexpr const char* kManifestHeader = "resfuse-dataset 1";

std::filesystem::path case_path(const std::filesystem::path& dir, std::size_t id,
                                const char* part) {
  return dir / ("case_" + std::to_string(id) + "_" + part + ".rfsv");
}

// splitmix64 finalizer.
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

std::vector<std::size_t> DatasetManifest::ids(std::string_view split) const {
  std::vector<std::size_t> out;
  for (const auto& c : cases) {
    if (c.split == split) out.push_back(c.id);
  }
  return out;
}

std::uint64_t case_seed(std::uint64_t dataset_seed, std::size_t id) {
  return mix(mix(dataset_seed) ^ static_cast<std::uint64_t>(id));
}

DatasetManifest make_manifest(const PhantomSpec& spec, std::size_t count, std::uint64_t seed,
                              double train_fraction) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("train fraction must lie in [0, 1]");
  }
  spec.validate();
  DatasetManifest m;
  m.seed = seed;
  m.spec = spec;
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(count)));
  for (std::size_t i = 0; i < count; ++i) {
    m.cases.push_back({i, i < n_train ? "train" : "val"});
  }
  return m;
}

void write_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest) {
  std::filesystem::create_directories(dir);
  for (const auto& c : manifest.cases) {
    const Sample s = generate_phantom(manifest.spec, case_seed(manifest.seed, c.id));
    write_volume(case_path(dir, c.id, "pre"), s.pre);
    write_volume(case_path(dir, c.id, "post"), s.post);
    write_volume(case_path(dir, c.id, "labels"), s.labels);
  }
  std::ofstream out(dir / kManifestName, std::ios::trunc);
  if (!out) throw Error("cannot write manifest in " + dir.string());
  out << kManifestHeader << "\n";
  out << "seed " << manifest.seed << "\n";
  out << "spec " << manifest.spec.to_json() << "\n";
  out << "cases " << manifest.cases.size() << "\n";
  for (const auto& c : manifest.cases) out << "case " << c.id << " " << c.split << "\n";
  if (!out) throw Error("failed writing manifest in " + dir.string());
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestName);
  if (!in) throw FormatError("no manifest.txt in " + dir.string());
  auto fail = [&](const std::string& why) -> FormatError {
    return FormatError("manifest " + (dir / kManifestName).string() + ": " + why);
  };
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) throw fail("bad header");

  DatasetManifest m;
  std::size_t expected = 0;
  bool have_seed = false, have_spec = false, have_count = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "seed") {
      if (!(ls >> m.seed)) throw fail("bad seed line");
      have_seed = true;
    } else if (key == "spec") {
      std::string rest;
      std::getline(ls, rest);
      try {
        m.spec = PhantomSpec::from_json(rest);
      } catch (const ConfigError& e) {
        throw fail(e.what());
      }
      have_spec = true;
    } else if (key == "cases") {
      if (!(ls >> expected)) throw fail("bad cases line");
      have_count = true;
    } else if (key == "case") {
      DatasetCase c;
      if (!(ls >> c.id >> c.split) || (c.split != "train" && c.split != "val")) {
        throw fail("bad case line '" + line + "'");
      }
      m.cases.push_back(std::move(c));
    } else {
      throw fail("unknown key '" + key + "'");
    }
  }
  if (!have_seed || !have_spec || !have_count) throw fail("missing seed, spec or cases line");
  if (m.cases.size() != expected) {
    throw fail("lists " + std::to_string(m.cases.size()) + " cases, header says " +
               std::to_string(expected));
  }
  return m;
}

Sample load_case(const std::filesystem::path& dir, std::size_t id) {
  Sample s;
  s.pre = read_float_volume(case_path(dir, id, "pre"));
  s.post = read_float_volume(case_path(dir, id, "post"));
  s.labels = read_label_volume(case_path(dir, id, "labels"));
  if (s.pre.shape() != s.post.shape() || s.pre.shape().rank() != 4 ||
      s.labels.shape.rank() != 3 || s.labels.size() != s.post.size()) {
    throw FormatError("case " + std::to_string(id) + ": inconsistent volume shapes");
  }
  return s;
}

LoadedSplit load_split(const std::filesystem::path& dir, const DatasetManifest& manifest,
                       std::string_view split) {
  LoadedSplit out;
  out.ids = manifest.ids(split);
  out.samples.reserve(out.ids.size());
  for (auto id : out.ids) out.samples.push_back(load_case(dir, id));
  return out;
}

}  // namespace resfuse
