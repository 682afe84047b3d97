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


#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "resfuse/dataset.hpp"
#include "resfuse/errors.hpp"
#include "test_util.hpp"

namespace {

TEST(Dataset, ManifestSplitsAndSeeds) {
  const auto m = resfuse::make_manifest(testutil::small_spec(), 8, 42);
  EXPECT_EQ(m.ids("train"), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(m.ids("val"), (std::vector<std::size_t>{6, 7}));
  EXPECT_EQ(resfuse::make_manifest(testutil::small_spec(), 160, 0).ids("train").size(), 120u);
  EXPECT_EQ(resfuse::make_manifest(testutil::small_spec(), 4, 0, 1.0).ids("val").size(), 0u);
  EXPECT_THROW(resfuse::make_manifest(testutil::small_spec(), 4, 0, 1.5), resfuse::ConfigError);

  std::set<std::uint64_t> seeds;
  for (std::size_t i = 0; i < 100; ++i) seeds.insert(resfuse::case_seed(42, i));
  EXPECT_EQ(seeds.size(), 100u);
  EXPECT_EQ(resfuse::case_seed(42, 3), resfuse::case_seed(42, 3));
  EXPECT_NE(resfuse::case_seed(42, 3), resfuse::case_seed(43, 3));
}

TEST(Dataset, WriteReadRoundTrip) {
  const auto dir = testutil::temp_dir("dataset_rt");
  const auto m = resfuse::make_manifest(testutil::small_spec(), 4, 9);
  resfuse::write_dataset(dir, m);
  const auto back = resfuse::read_manifest(dir);
  EXPECT_EQ(back.seed, 9u);
  EXPECT_EQ(back.spec, m.spec);
  ASSERT_EQ(back.cases.size(), 4u);
  EXPECT_EQ(back.cases[3].split, "val");

  const auto split = resfuse::load_split(dir, back, "train");
  ASSERT_EQ(split.ids.size(), 3u);
  const auto fresh = resfuse::generate_phantom(m.spec, resfuse::case_seed(9, 1));
  EXPECT_EQ(split.samples[1].labels, fresh.labels);
  EXPECT_TRUE(std::equal(fresh.post.values().begin(), fresh.post.values().end(),
                         split.samples[1].post.values().begin()));
}

TEST(Dataset, EmptyDatasetIsValid) {
  const auto dir = testutil::temp_dir("dataset_empty");
  resfuse::write_dataset(dir, resfuse::make_manifest(testutil::small_spec(), 0, 1));
  EXPECT_TRUE(resfuse::read_manifest(dir).cases.empty());
}

TEST(Dataset, MalformedManifests) {
  const auto dir = testutil::temp_dir("dataset_bad");
  EXPECT_THROW(resfuse::read_manifest(dir), resfuse::FormatError);
  auto write = [&](const std::string& text) {
    std::ofstream(dir / "manifest.txt", std::ios::trunc) << text;
  };
  const std::string spec = "spec " + testutil::small_spec().to_json() + "\n";
  write("resfuse-dataset 2\n");
  EXPECT_THROW(resfuse::read_manifest(dir), resfuse::FormatError);
  write("resfuse-dataset 1\nseed 1\n" + spec + "cases 2\ncase 0 train\n");
  EXPECT_THROW(resfuse::read_manifest(dir), resfuse::FormatError);
  write("resfuse-dataset 1\nseed 1\n" + spec + "cases 1\ncase 0 test\n");
  EXPECT_THROW(resfuse::read_manifest(dir), resfuse::FormatError);
  write("resfuse-dataset 1\nseed 1\nspec {\"size\": [0, 1, 1]}\ncases 0\n");
  EXPECT_THROW(resfuse::read_manifest(dir), resfuse::FormatError);
  write("resfuse-dataset 1\n" + spec + "cases 0\n");
  EXPECT_THROW(resfuse::read_manifest(dir), resfuse::FormatError);
  write("resfuse-dataset 1\nseed 1\n" + spec + "cases 1\ncase 0 train\n");
  EXPECT_NO_THROW(resfuse::read_manifest(dir));
  EXPECT_THROW(resfuse::load_case(dir, 0), resfuse::Error);  // volumes missing
}

}  // namespace
