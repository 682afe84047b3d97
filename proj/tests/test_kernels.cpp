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

#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "resfuse/errors.hpp"
#include "resfuse/kernels.hpp"
#include "resfuse/runtime.hpp"
#include "test_util.hpp"

namespace {

using resfuse::Shape;
using resfuse::Tensor;
using resfuse::ShapeError;
namespace k = resfuse::kernels;

TEST(Conv3d, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> ext(3, 9), ch(1, 4);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t ksz = trial % 3 == 0 ? 1 : 3;
    const std::size_t stride = trial % 4 == 1 ? 2 : 1;
    const std::size_t pad = ksz == 3 && trial % 5 != 0 ? 1 : 0;
    const std::size_t cin = ch(rng), cout = ch(rng);
    const Shape xs{1 + static_cast<std::size_t>(trial % 2), cin, static_cast<std::size_t>(ext(rng)),
                   static_cast<std::size_t>(ext(rng)), static_cast<std::size_t>(ext(rng))};
    const auto x = testutil::random_tensor<float>(xs, rng);
    const auto w = testutil::random_tensor<float>(Shape{cout, cin, ksz, ksz, ksz}, rng);
    const auto b = testutil::random_tensor<float>(Shape{cout}, rng);
    const auto y = k::conv3d_forward<float>(x, w, &b, stride, pad);
    const auto wv = testutil::to_vec(w), bv = testutil::to_vec(b);
    const auto ref = oracle::conv3d(testutil::to_vol(x), wv, cout, ksz, &bv, stride, pad);
    ASSERT_EQ(y.shape(), (Shape{ref.n, ref.c, ref.d, ref.h, ref.w}));
    EXPECT_LE(testutil::max_scaled_error(y, ref), 1e-5) << "trial " << trial;
  }
}

TEST(Conv3d, DirectPathMatchesOracleOnWideInputs) {
  std::mt19937_64 rng(2);
  for (std::size_t wext : {4u, 8u, 16u, 32u}) {
    for (std::size_t cout : {1u, 2u, 3u, 8u, 16u}) {
      const auto x = testutil::random_tensor<double>(Shape{2, 3, 3, 2, wext}, rng);
      const auto w = testutil::random_tensor<double>(Shape{cout, 3, 3, 3, 3}, rng);
      const auto y = k::conv3d_forward<double>(x, w, nullptr, 1, 1);
      const auto ref = oracle::conv3d(testutil::to_vol(x), testutil::to_vec(w), cout, 3, nullptr, 1, 1);
      EXPECT_LE(testutil::max_scaled_error(y, ref), 1e-12) << wext << " " << cout;
    }
  }
}

// <dy, conv(x)> must equal <dx, x> + <dw, w> + <db, 1> for a linear map.
TEST(Conv3d, BackwardIsAdjointOfForward) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t stride = trial % 2 ? 2 : 1;
    const std::size_t wext = trial % 3 == 0 ? 8 : 5;
    const auto x = testutil::random_tensor<double>(Shape{2, 2, 6, 5, wext}, rng);
    const auto w = testutil::random_tensor<double>(Shape{3, 2, 3, 3, 3}, rng);
    const auto y = k::conv3d_forward<double>(x, w, nullptr, stride, 1);
    const auto dy = testutil::random_tensor<double>(y.shape(), rng);
    std::vector<double> dx(x.size()), dw(w.size()), db(3);
    k::conv3d_backward<double>(x, w, dy.values(), stride, 1, dx, dw, db);
    double lhs = 0.0, rx = 0.0, rw = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += dy[i] * y[i];
    for (std::size_t i = 0; i < x.size(); ++i) rx += dx[i] * x[i];
    for (std::size_t i = 0; i < w.size(); ++i) rw += dw[i] * w[i];
    EXPECT_NEAR(lhs, rx, 1e-9 * std::max(1.0, std::abs(lhs)));
    EXPECT_NEAR(lhs, rw, 1e-9 * std::max(1.0, std::abs(lhs)));
    double sdy = 0.0;
    for (std::size_t i = 0; i < dy.size(); ++i) sdy += dy[i];
    EXPECT_NEAR(db[0] + db[1] + db[2], sdy, 1e-9 * std::max(1.0, std::abs(sdy)));
  }
}

TEST(Conv3d, PointwiseMatchesPerVoxelMatvec) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t cin = 1 + trial % 4, cout = 1 + (trial / 4) % 4;
    const auto x = testutil::random_tensor<float>(Shape{1, cin, 3, 4, 5}, rng);
    const auto w = testutil::random_tensor<float>(Shape{cout, cin, 1, 1, 1}, rng);
    const auto b = testutil::random_tensor<float>(Shape{cout}, rng);
    const auto bv = testutil::to_vec(b);
    const auto ref = oracle::matvec(testutil::to_vol(x), testutil::to_vec(w), cout, &bv);
    EXPECT_LE(testutil::max_scaled_error(k::conv3d_forward<float>(x, w, &b, 1, 0), ref), 1e-5);
  }
}

TEST(Conv3d, ShapeErrorsNameTheDimension) {
  const Tensor x(Shape{1, 2, 4, 4, 4});
  try {
    k::conv3d_forward<float>(x, Tensor(Shape{3, 5, 3, 3, 3}), nullptr, 1, 1);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.dimension(), "input channels");
  }
  try {
    k::conv3d_forward<float>(x, Tensor(Shape{3, 2, 2, 2, 2}), nullptr, 1, 0);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.dimension(), "kernel extent");
  }
  try {
    k::conv3d_forward<float>(Tensor(Shape{1, 2, 4, 1, 4}), Tensor(Shape{3, 2, 3, 3, 3}), nullptr, 1, 0);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.dimension(), "height");
  }
  try {
    k::conv3d_forward<float>(Tensor(Shape{2, 4, 4, 4}), Tensor(Shape{3, 2, 3, 3, 3}), nullptr, 1, 1);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.dimension(), "rank");
  }
}

TEST(Conv3d, NonFiniteInputRejected) {
  Tensor x(Shape{1, 1, 3, 3, 3});
  x[5] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(k::conv3d_forward<float>(x, Tensor(Shape{1, 1, 3, 3, 3}), nullptr, 1, 1), resfuse::NonFiniteError);
}

TEST(Conv3d, BitIdenticalAcrossThreadCounts) {
  std::mt19937_64 rng(5);
  const auto x = testutil::random_tensor<float>(Shape{2, 4, 8, 8, 16}, rng);
  const auto w = testutil::random_tensor<float>(Shape{8, 4, 3, 3, 3}, rng);
  const auto w2 = testutil::random_tensor<float>(Shape{8, 4, 3, 3, 3}, rng);
  resfuse::set_thread_count(1);
  const auto a = k::conv3d_forward<float>(x, w, nullptr, 1, 1);
  const auto a2 = k::conv3d_forward<float>(x, w2, nullptr, 2, 1);
  std::vector<float> dwa(w.size());
  k::conv3d_backward<float>(x, w, a.values(), 1, 1, {}, dwa, {});
  resfuse::set_thread_count(3);
  const auto b = k::conv3d_forward<float>(x, w, nullptr, 1, 1);
  const auto b2 = k::conv3d_forward<float>(x, w2, nullptr, 2, 1);
  std::vector<float> dwb(w.size());
  k::conv3d_backward<float>(x, w, b.values(), 1, 1, {}, dwb, {});
  resfuse::set_thread_count(0);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  EXPECT_TRUE(std::equal(a2.values().begin(), a2.values().end(), b2.values().begin()));
  EXPECT_EQ(dwa, dwb);
}

TEST(InstanceNorm, MatchesTwoPassOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 1 + trial % 3;
    auto x = testutil::random_tensor<float>(Shape{2, c, 3, 4, 2}, rng, 3.0);
    for (auto& v : x.values()) v += 5.0f;  // offset mean
    const auto g = testutil::random_tensor<float>(Shape{c}, rng);
    const auto b = testutil::random_tensor<float>(Shape{c}, rng);
    const auto y = k::instance_norm_forward<float>(x, g.values(), b.values(), 1e-5f, nullptr);
    const auto ref = oracle::instance_norm(testutil::to_vol(x), testutil::to_vec(g), testutil::to_vec(b), 1e-5);
    EXPECT_LE(testutil::max_scaled_error(y, ref), 1e-5);
  }
}

TEST(InstanceNorm, ConstantSliceMapsToBeta) {
  Tensor x(Shape{1, 1, 2, 2, 2}, 4.0f);
  const std::vector<float> g{2.0f}, b{0.25f};
  const auto y = k::instance_norm_forward<float>(x, g, b, 1e-5f, nullptr);
  for (auto v : y.values()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(InstanceNorm, RejectsSingleVoxelAndWrongAffine) {
  const std::vector<float> one{1.0f}, two{1.0f, 1.0f};
  try {
    k::instance_norm_forward<float>(Tensor(Shape{1, 1, 1, 1, 1}), one, one, 1e-5f, nullptr);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.dimension(), "spatial volume");
  }
  try {
    k::instance_norm_forward<float>(Tensor(Shape{1, 1, 2, 2, 2}), two, two, 1e-5f, nullptr);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.dimension(), "channels");
  }
}

TEST(Resample, MaxPoolAndUpsampleMatchOracles) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 * (1 + trial % 3), h = 2 * (1 + trial % 2), w = 2 * (1 + trial % 4);
    const auto x = testutil::random_tensor<float>(Shape{2, 2, d, h, w}, rng);
    const auto p = k::max_pool2_forward<float>(x, nullptr);
    EXPECT_LE(testutil::max_scaled_error(p, oracle::max_pool2(testutil::to_vol(x))), 1e-5);
    const auto u = k::upsample2_forward<float>(x);
    EXPECT_LE(testutil::max_scaled_error(u, oracle::upsample2(testutil::to_vol(x))), 1e-5);
  }
}

TEST(Resample, PoolTiesGoToFirstVoxel) {
  Tensor x(Shape{1, 1, 2, 2, 2}, 1.0f);
  std::vector<std::size_t> arg;
  k::max_pool2_forward<float>(x, &arg);
  ASSERT_EQ(arg.size(), 1u);
  EXPECT_EQ(arg[0], 0u);
}

TEST(Resample, OddExtentNamesDimension) {
  for (auto [s, dim] : {std::pair{Shape{1, 1, 3, 4, 4}, "depth"}, std::pair{Shape{1, 1, 4, 5, 4}, "height"},
                        std::pair{Shape{1, 1, 4, 4, 7}, "width"}}) {
    try {
      k::max_pool2_forward<float>(Tensor(s), nullptr);
      FAIL();
    } catch (const ShapeError& e) {
      EXPECT_EQ(e.dimension(), dim);
      EXPECT_NE(std::string(e.what()).find("down2"), std::string::npos);
    }
  }
}

TEST(Resample, UpsampleBackwardSumsBlocks) {
  const Shape xs{1, 1, 1, 1, 2};
  std::vector<float> dy(16, 1.0f), dx(2, 0.0f);
  k::upsample2_backward<float>(xs, dy, dx);
  EXPECT_FLOAT_EQ(dx[0], 8.0f);
  EXPECT_FLOAT_EQ(dx[1], 8.0f);
  std::vector<float> short_dy(8, 1.0f);
  EXPECT_THROW(k::upsample2_backward<float>(xs, short_dy, dx), ShapeError);
}

TEST(Softmax, ArgmaxTiesGoToLowestClass) {
  Tensor logits(Shape{1, 3, 1, 1, 2}, 0.0f);
  logits.at(0, 2, 0, 0, 1) = 1.0f;
  const auto lab = resfuse::kernels::argmax_channels(logits);
  EXPECT_EQ(lab.shape, (Shape{1, 1, 1, 2}));
  EXPECT_EQ(lab.values[0], 0);
  EXPECT_EQ(lab.values[1], 2);
  const auto p = k::softmax_channels(logits);
  EXPECT_NEAR(p.at(0, 0, 0, 0, 0) + p.at(0, 1, 0, 0, 0) + p.at(0, 2, 0, 0, 0), 1.0, 1e-6);
}

TEST(DiceLoss, MatchesFormulaOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t classes = 2 + trial % 3;
    const auto logits = testutil::random_tensor<float>(Shape{2, classes, 4, 4, 4}, rng, 2.0);
    resfuse::LabelVolume target(Shape{2, 4, 4, 4});
    std::uniform_int_distribution<int> u(0, static_cast<int>(classes) - 1);
    for (auto& v : target.values) v = static_cast<std::uint8_t>(u(rng));
    const double got = k::soft_dice_loss<float>(logits, target, 1e-5f, {});
    const double want = oracle::dice_loss(testutil::to_vol(logits), target.values, 1e-5);
    EXPECT_NEAR(got, want, 1e-6);
  }
}

TEST(DiceLoss, SaturatedLogitsReachTheEnds) {
  Tensor right(Shape{1, 2, 2, 2, 2}), wrong(Shape{1, 2, 2, 2, 2});
  resfuse::LabelVolume target(Shape{1, 2, 2, 2});
  for (std::size_t i = 0; i < 8; ++i) {
    const bool fg = i % 2 == 0;
    target.values[i] = fg;
    right[(fg ? 8 : 0) + i] = 30.0f;
    wrong[(fg ? 0 : 8) + i] = 30.0f;
  }
  EXPECT_LT(k::soft_dice_loss<float>(right, target, 1e-5f, {}), 1e-5);
  EXPECT_GT(k::soft_dice_loss<float>(wrong, target, 1e-5f, {}), 1.0 - 1e-5);
}

TEST(DiceLoss, RejectsBadTargets) {
  Tensor logits(Shape{1, 2, 2, 2, 2});
  resfuse::LabelVolume bad(Shape{1, 2, 2, 2});
  bad.values[3] = 2;
  EXPECT_THROW(k::soft_dice_loss<float>(logits, bad, 1e-5f, {}), resfuse::Error);
  EXPECT_THROW(k::soft_dice_loss<float>(logits, resfuse::LabelVolume(Shape{1, 2, 2, 3}), 1e-5f, {}), ShapeError);
  EXPECT_THROW(k::soft_dice_loss<float>(Tensor(Shape{1, 1, 2, 2, 2}), resfuse::LabelVolume(Shape{1, 2, 2, 2}), 1e-5f, {}),
               ShapeError);
}

}  // namespace
