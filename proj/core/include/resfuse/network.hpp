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

#ifndef RESFUSE_NETWORK_HPP_
#define RESFUSE_NETWORK_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "resfuse/fusion.hpp"
#include "resfuse/graph.hpp"
#include "resfuse/parameter.hpp"
#include "resfuse/tensor.hpp"

namespace resfuse {

struct ModelConfig {
  std::size_t levels = 3;
  std::size_t base_channels = 8;
  std::size_t in_channels_per_branch = 1;
  std::size_t num_classes = 2;
  FusionVariant variant = FusionVariant::kWeightedAdd;
  /// Feed the fused main-branch tensor (rather than E(aux)) down the
  /// auxiliary branch.
  bool aux_descends_fused = false;
  /// Start fusion blocks at W = 0 instead of the channel identity.
  bool fusion_zero_init = false;
  std::uint64_t seed = 0;

  /// Channel width of encoder level l: base_channels * 2^l.
  std::size_t channels(std::size_t level) const { return base_channels << level; }
  /// Spatial extents must be multiples of this.
  std::size_t spatial_divisor() const { return std::size_t{1} << (levels - 1); }

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

/// conv3x3x3 -> instance norm -> relu, used for the stem, the encoder
/// transitions and the decoder up-path.
template <typename T>
struct BasicConvNormRelu {
  BasicParameter<T>* weight = nullptr;
  BasicParameter<T>* bias = nullptr;
  BasicParameter<T>* gamma = nullptr;
  BasicParameter<T>* beta = nullptr;

  static BasicConvNormRelu create(BasicParameterSet<T>& params, const std::string& prefix,
                                  std::size_t in_channels, std::size_t out_channels);
  BasicVar<T> apply(const BasicVar<T>& x) const;
};

/// Dual-branch encoder-decoder. The main branch takes the post-contrast
/// volume, the auxiliary branch the pre-contrast volume; both run through the
/// same stem, transitions and encoding blocks, and are fused once per level.
/// The deepest encoder level doubles as the bottleneck. The decoder only sees
/// main-branch skips.
///
///   level l:  [down2 -> transition]  -> encode_level (fusion) -> skip_l
///   decoder:  up2 -> conv-norm-relu -> concat(skip_l) -> residual block
///   head:     1x1x1 conv to num_classes logits
///
/// Parameters live in a name-ordered set; blocks hold pointers into it, so
/// the net is movable but not copyable.
template <typename T>
class BasicDualBranchSegNet {
 public:
  explicit BasicDualBranchSegNet(const ModelConfig& config);

  BasicDualBranchSegNet(const BasicDualBranchSegNet&) = delete;
  BasicDualBranchSegNet& operator=(const BasicDualBranchSegNet&) = delete;
  BasicDualBranchSegNet(BasicDualBranchSegNet&&) noexcept = default;
  BasicDualBranchSegNet& operator=(BasicDualBranchSegNet&&) noexcept = default;

  /// Logits [N,K,D,H,W]; pre and post are [N,Cin,D,H,W].
  BasicVar<T> forward(BasicGraph<T>& graph, const BasicTensor<T>& pre,
                      const BasicTensor<T>& post) const;

  /// forward() on a non-recording graph.
  BasicTensor<T> infer(const BasicTensor<T>& pre, const BasicTensor<T>& post) const;

  std::size_t param_count(bool trainable_only = false) const {
    return params_.scalar_count(trainable_only);
  }

  const ModelConfig& config() const noexcept { return config_; }
  BasicParameterSet<T>& parameters() noexcept { return params_; }
  const BasicParameterSet<T>& parameters() const noexcept { return params_; }

  const std::vector<BasicEncodingBlock<T>>& encoder_blocks() const noexcept { return enc_; }
  const std::vector<BasicFusionWeightBlock<T>>& fusion_blocks() const noexcept { return fuse_; }
  const BasicProjection<T>& head() const noexcept { return head_; }

 private:
  void check_inputs(const BasicTensor<T>& pre, const BasicTensor<T>& post) const;

  ModelConfig config_;
  BasicParameterSet<T> params_;
  BasicConvNormRelu<T> stem_;
  std::vector<BasicConvNormRelu<T>> down_;  // down_[l-1] enters level l
  std::vector<BasicEncodingBlock<T>> enc_;
  std::vector<BasicFusionWeightBlock<T>> fuse_;  // empty unless kWeightedAdd
  std::vector<BasicConvNormRelu<T>> up_;         // up_[l]: level l+1 -> l
  std::vector<BasicEncodingBlock<T>> dec_;
  std::vector<BasicProjection<T>> dec_proj_;
  BasicProjection<T> head_;
};

using DualBranchSegNet = BasicDualBranchSegNet<float>;

/// Copies parameter values between nets of equal configuration (for example
/// a float net into its double twin).
template <typename To, typename From>
void copy_parameters(const BasicDualBranchSegNet<From>& src, BasicDualBranchSegNet<To>& dst);

}  // namespace resfuse

#endif  // RESFUSE_NETWORK_HPP_
