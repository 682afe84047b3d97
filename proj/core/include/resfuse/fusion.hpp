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

// Residual module variants and the per-level dual-branch encoding step.
//
//   PlainResidual  relu(E(x) + skip(x))                  main branch only
//   DirectAdd      relu(E(x_main) + E(x_aux))
//   WeightedAdd    relu(E(x_main) + W * E(x_aux) + b)     W, b: 1x1x1 conv
//
// E is the encoding block (conv-norm-relu-conv-norm). Its parameters are
// shared between the main (post-contrast) and auxiliary (pre-contrast)
// branches.

#ifndef RESFUSE_FUSION_HPP_
#define RESFUSE_FUSION_HPP_

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "resfuse/graph.hpp"
#include "resfuse/parameter.hpp"

namespace resfuse {

enum class FusionVariant { kPlainResidual, kDirectAdd, kWeightedAdd };

/// "plain", "direct" or "weighted".
std::string_view to_string(FusionVariant v);
FusionVariant parse_fusion_variant(std::string_view name);

inline constexpr double kNormEps = 1e-5;

/// conv3x3x3 -> instance norm -> relu -> conv3x3x3 -> instance norm.
template <typename T>
struct BasicEncodingBlock {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  BasicParameter<T>* conv1_weight = nullptr;
  BasicParameter<T>* conv1_bias = nullptr;
  BasicParameter<T>* norm1_gamma = nullptr;
  BasicParameter<T>* norm1_beta = nullptr;
  BasicParameter<T>* conv2_weight = nullptr;
  BasicParameter<T>* conv2_bias = nullptr;
  BasicParameter<T>* norm2_gamma = nullptr;
  BasicParameter<T>* norm2_beta = nullptr;

  /// Registers "<prefix>.conv1.weight" etc. Convolutions start at zero, norms
  /// at gamma = 1, beta = 0.
  static BasicEncodingBlock create(BasicParameterSet<T>& params, const std::string& prefix,
                                   std::size_t in_channels, std::size_t out_channels);

  /// E(x), spatial extents preserved.
  BasicVar<T> apply(const BasicVar<T>& x) const;
};

/// 1x1x1 channel projection with bias.
template <typename T>
struct BasicProjection {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  BasicParameter<T>* weight = nullptr;
  BasicParameter<T>* bias = nullptr;

  static BasicProjection create(BasicParameterSet<T>& params, const std::string& prefix,
                                std::size_t in_channels, std::size_t out_channels);
  BasicVar<T> apply(const BasicVar<T>& x) const;
};

/// Square 1x1x1 channel map applied to auxiliary features before addition.
template <typename T>
struct BasicFusionWeightBlock {
  std::size_t channels = 0;
  BasicParameter<T>* weight = nullptr;  // [C,C,1,1,1]
  BasicParameter<T>* bias = nullptr;    // [C]

  /// Starts as the channel identity (or zero), bias zero.
  static BasicFusionWeightBlock create(BasicParameterSet<T>& params, const std::string& prefix,
                                       std::size_t channels, bool zero_init = false);
};

template <typename T>
struct BasicLevelOutput {
  BasicVar<T> main_out;
  std::optional<BasicVar<T>> aux_out;  // E(aux_in); absent when no aux input was given
  BasicVar<T> skip;                    // fed to the decoder at this resolution
};

/// relu(E(x) + skip(x)); skip is identity, or `proj` when channel counts differ.
template <typename T>
BasicVar<T> residual_plain(const BasicVar<T>& x, const BasicEncodingBlock<T>& block,
                           const BasicProjection<T>* proj);

/// e_main + x_aux.
template <typename T>
BasicVar<T> fuse_direct(const BasicVar<T>& e_main, const BasicVar<T>& x_aux);

/// e_main + conv1x1x1(x_aux; fw).
template <typename T>
BasicVar<T> fuse_weighted(const BasicVar<T>& e_main, const BasicVar<T>& x_aux,
                          const BasicFusionWeightBlock<T>& fw);

/// One encoder level. aux_in may be omitted only for kPlainResidual, which
/// never reads it.
template <typename T>
BasicLevelOutput<T> encode_level(const BasicVar<T>& main_in,
                                 const std::optional<BasicVar<T>>& aux_in,
                                 const BasicEncodingBlock<T>& block,
                                 const BasicFusionWeightBlock<T>* fw, FusionVariant variant);

using EncodingBlock = BasicEncodingBlock<float>;
using Projection = BasicProjection<float>;
using FusionWeightBlock = BasicFusionWeightBlock<float>;
using LevelOutput = BasicLevelOutput<float>;

}  // namespace resfuse

#endif  // RESFUSE_FUSION_HPP_
