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

#include <array>

#include "resfuse/errors.hpp"
#include "resfuse/phantom.hpp"
#include "test_util.hpp"

namespace {

using resfuse::PhantomSpec;

struct Grid {
  std::array<std::size_t, 3> s;
  std::size_t idx(std::size_t z, std::size_t y, std::size_t x) const { return (z * s[1] + y) * s[2] + x; }
};

// Calls fn(i, j) for every voxel i and each of its 26 in-bounds neighbours j.
template <typename Fn>
void for_neighbour_pairs(const Grid& g, Fn fn) {
  for (std::size_t z = 0; z < g.s[0]; ++z)
    for (std::size_t y = 0; y < g.s[1]; ++y)
      for (std::size_t x = 0; x < g.s[2]; ++x)
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if (!dz && !dy && !dx) continue;
              const long nz = long(z) + dz, ny = long(y) + dy, nx = long(x) + dx;
              if (nz < 0 || ny < 0 || nx < 0 || nz >= long(g.s[0]) || ny >= long(g.s[1]) || nx >= long(g.s[2]))
                continue;
              fn(g.idx(z, y, x), g.idx(std::size_t(nz), std::size_t(ny), std::size_t(nx)));
            }
}

TEST(Phantom, DeterministicInSeed) {
  const auto spec = testutil::small_spec();
  const auto a = resfuse::generate_phantom(spec, 17), b = resfuse::generate_phantom(spec, 17);
  const auto c = resfuse::generate_phantom(spec, 18);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_TRUE(std::equal(a.pre.values().begin(), a.pre.values().end(), b.pre.values().begin()));
  EXPECT_TRUE(std::equal(a.post.values().begin(), a.post.values().end(), b.post.values().begin()));
  EXPECT_FALSE(std::equal(a.post.values().begin(), a.post.values().end(), c.post.values().begin()));
}

TEST(Phantom, ShapesAndCounts) {
  PhantomSpec spec = testutil::small_spec();
  spec.size = {16, 12, 20};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = resfuse::generate_phantom(spec, seed);
    EXPECT_EQ(s.pre.shape(), (resfuse::Shape{1, 16, 12, 20}));
    EXPECT_EQ(s.post.shape(), s.pre.shape());
    EXPECT_EQ(s.labels.shape, (resfuse::Shape{16, 12, 20}));
    std::array<std::size_t, 4> n{};
    for (auto v : s.labels.values) {
      ASSERT_LT(v, 4);
      ++n[v];
    }
    EXPECT_GT(n[resfuse::kLesionTissue], 0u);
    EXPECT_GT(n[resfuse::kCystTissue], 0u);
    EXPECT_GT(n[resfuse::kGlandTissue], 0u);
    const auto mask = s.lesion_mask();
    for (std::size_t i = 0; i < mask.size(); ++i) EXPECT_EQ(mask.values[i], s.labels.values[i] == 1);
  }
}

TEST(Phantom, ObjectsOfDifferentKindNeverTouch) {
  const auto spec = testutil::small_spec();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = resfuse::generate_phantom(spec, seed);
    std::size_t touching = 0;
    for_neighbour_pairs(Grid{spec.size}, [&](std::size_t i, std::size_t j) {
      const auto a = s.labels.values[i], b = s.labels.values[j];
      touching += a != 0 && b != 0 && a != b;
    });
    EXPECT_EQ(touching, 0u) << "seed " << seed;
  }
}

// Away from edges the blur sees a constant field, so noiseless interiors sit
// exactly on the tissue intensities.
TEST(Phantom, NoiselessInteriorIntensities) {
  PhantomSpec spec = testutil::small_spec();
  spec.noise_sigma = 0.0;
  spec.size = {20, 20, 20};
  spec.radius_min = 3.0;
  spec.radius_max = 4.0;
  const double pre_v[4] = {0.20, 0.30, 0.10, 0.55};
  const double post_v[4] = {0.20, 0.66, 0.10, 0.66};
  std::array<std::size_t, 4> checked{};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = resfuse::generate_phantom(spec, seed);
    std::vector<std::uint8_t> interior(s.labels.size(), 1);
    const Grid g{spec.size};
    for_neighbour_pairs(g, [&](std::size_t i, std::size_t j) {
      if (s.labels.values[i] != s.labels.values[j]) interior[i] = 0;
    });
    for (std::size_t z = 0; z < 20; ++z)
      for (std::size_t y = 0; y < 20; ++y)
        for (std::size_t x = 0; x < 20; ++x) {
          const auto i = g.idx(z, y, x);
          const bool edge = z == 0 || y == 0 || x == 0 || z == 19 || y == 19 || x == 19;
          if (!interior[i] || edge) continue;
          const auto t = s.labels.values[i];
          EXPECT_NEAR(s.pre[i], pre_v[t], 1e-5);
          EXPECT_NEAR(s.post[i], post_v[t], 1e-5);
          ++checked[t];
        }
  }
  for (auto c : checked) EXPECT_GT(c, 0u);
}

TEST(Phantom, LesionAndGlandOnlySeparableWithPre) {
  PhantomSpec spec;
  EXPECT_NEAR(spec.lesion_pre * spec.lesion_enhancement, spec.gland_pre * spec.gland_enhancement, 1e-12);
  EXPECT_GT(spec.gland_pre - spec.lesion_pre, 0.2);
}

TEST(Phantom, NoiseHasConfiguredSpread) {
  PhantomSpec spec = testutil::small_spec();
  spec.smoothing = false;
  spec.noise_sigma = 0.03;
  spec.lesion_count = spec.cyst_count = spec.gland_count = {0, 0};
  const auto s = resfuse::generate_phantom(spec, 3);
  double sum = 0.0, sq = 0.0;
  for (auto v : s.pre.values()) {
    sum += v - 0.2;
    sq += (v - 0.2) * (v - 0.2);
  }
  const double n = double(s.pre.size());
  EXPECT_NEAR(sum / n, 0.0, 0.005);
  EXPECT_NEAR(std::sqrt(sq / n), 0.03, 0.003);
}

TEST(Phantom, PlacementErrorWhenCrowded) {
  PhantomSpec spec = testutil::small_spec();
  spec.size = {8, 8, 8};
  spec.lesion_count = {30, 30};
  spec.radius_min = 2.5;
  spec.radius_max = 3.0;
  spec.max_attempts = 50;
  EXPECT_THROW(resfuse::generate_phantom(spec, 1), resfuse::PlacementError);
}

TEST(PhantomSpec, ValidationAndJson) {
  PhantomSpec spec;
  spec.size = {24, 16, 8};
  spec.gland_count = {0, 4};
  spec.noise_sigma = 0.0;
  spec.smoothing = false;
  EXPECT_EQ(PhantomSpec::from_json(spec.to_json()), spec);
  EXPECT_THROW(PhantomSpec::from_json("[1,2]"), resfuse::ConfigError);
  EXPECT_THROW(PhantomSpec::from_json("{\"lesion_count\": [3, 1]}"), resfuse::ConfigError);

  auto bad = [](auto mutate) {
    PhantomSpec s;
    mutate(s);
    EXPECT_THROW(s.validate(), resfuse::ConfigError);
  };
  bad([](PhantomSpec& s) { s.size[1] = 0; });
  bad([](PhantomSpec& s) { s.cyst_count = {-1, 2}; });
  bad([](PhantomSpec& s) { s.radius_min = 0.0; });
  bad([](PhantomSpec& s) { s.radius_max = 1.0; });
  bad([](PhantomSpec& s) { s.noise_sigma = -0.1; });
  bad([](PhantomSpec& s) { s.max_attempts = 0; });
}

TEST(Subtraction, IsPostMinusPre) {
  const auto s = resfuse::generate_phantom(testutil::small_spec(), 9);
  const auto sub = resfuse::subtraction(s.pre, s.post);
  for (std::size_t i = 0; i < sub.size(); ++i) EXPECT_FLOAT_EQ(sub[i], s.post[i] - s.pre[i]);
  EXPECT_THROW(resfuse::subtraction(s.pre, resfuse::Tensor(resfuse::Shape{1, 2, 2, 2})), resfuse::ShapeError);
}

}  // namespace
