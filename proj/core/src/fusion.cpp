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

#include "resfuse/fusion.hpp"

#include <string>

namespace resfuse {

std::string_view to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::kPlainResidual:
      return "plain";
    case FusionVariant::kDirectAdd:
      return "direct";
    case FusionVariant::kWeightedAdd:
      return "weighted";
  }
  return "unknown";
}

FusionVariant parse_fusion_variant(std::string_view name) {
  if (name == "plain") return FusionVariant::kPlainResidual;
  if (name == "direct") return FusionVariant::kDirectAdd;
  if (name == "weighted") return FusionVariant::kWeightedAdd;
  throw ConfigError("unknown fusion variant '" + std::string(name) +
                    "' (expected plain, direct or weighted)");
}

template <typename T>
BasicEncodingBlock<T> BasicEncodingBlock<T>::create(BasicParameterSet<T>& params,
                                                    const std::string& prefix,
                                                    std::size_t in_channels,
                                                    std::size_t out_channels) {
  BasicEncodingBlock b;
  b.in_channels = in_channels;
  b.out_channels = out_channels;
  const std::size_t c = out_channels;
  b.conv1_weight = &params.add(prefix + ".conv1.weight", BasicTensor<T>(Shape{c, in_channels, 3, 3, 3}));
  b.conv1_bias = &params.add(prefix + ".conv1.bias", BasicTensor<T>(Shape{c}));
  b.norm1_gamma = &params.add(prefix + ".norm1.weight", BasicTensor<T>(Shape{c}, T(1)));
  b.norm1_beta = &params.add(prefix + ".norm1.bias", BasicTensor<T>(Shape{c}));
  b.conv2_weight = &params.add(prefix + ".conv2.weight", BasicTensor<T>(Shape{c, c, 3, 3, 3}));
  b.conv2_bias = &params.add(prefix + ".conv2.bias", BasicTensor<T>(Shape{c}));
  b.norm2_gamma = &params.add(prefix + ".norm2.weight", BasicTensor<T>(Shape{c}, T(1)));
  b.norm2_beta = &params.add(prefix + ".norm2.bias", BasicTensor<T>(Shape{c}));
  return b;
}

template <typename T>
BasicVar<T> BasicEncodingBlock<T>::apply(const BasicVar<T>& x) const {
  auto& g = x.graph();
  const T eps = static_cast<T>(kNormEps);
  auto h = ops::conv3d(x, g.parameter(*conv1_weight), {g.parameter(*conv1_bias)}, 1, 1);
  h = ops::instance_norm(h, g.parameter(*norm1_gamma), g.parameter(*norm1_beta), eps);
  h = ops::relu(h);
  h = ops::conv3d(h, g.parameter(*conv2_weight), {g.parameter(*conv2_bias)}, 1, 1);
  return ops::instance_norm(h, g.parameter(*norm2_gamma), g.parameter(*norm2_beta), eps);
}

template <typename T>
BasicProjection<T> BasicProjection<T>::create(BasicParameterSet<T>& params,
                                              const std::string& prefix, std::size_t in_channels,
                                              std::size_t out_channels) {
  BasicProjection p;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.weight = &params.add(prefix + ".weight", BasicTensor<T>(Shape{out_channels, in_channels, 1, 1, 1}));
  p.bias = &params.add(prefix + ".bias", BasicTensor<T>(Shape{out_channels}));
  return p;
}

template <typename T>
BasicVar<T> BasicProjection<T>::apply(const BasicVar<T>& x) const {
  auto& g = x.graph();
  return ops::conv1x1x1(x, g.parameter(*weight), {g.parameter(*bias)});
}

template <typename T>
BasicFusionWeightBlock<T> BasicFusionWeightBlock<T>::create(BasicParameterSet<T>& params,
                                                            const std::string& prefix,
                                                            std::size_t channels, bool zero_init) {
  BasicFusionWeightBlock f;
  f.channels = channels;
  BasicTensor<T> w(Shape{channels, channels, 1, 1, 1});
  if (!zero_init) {
    for (std::size_t c = 0; c < channels; ++c) w[c * channels + c] = T(1);
  }
  f.weight = &params.add(prefix + ".weight", std::move(w));
  f.bias = &params.add(prefix + ".bias", BasicTensor<T>(Shape{channels}));
  return f;
}

template <typename T>
BasicVar<T> residual_plain(const BasicVar<T>& x, const BasicEncodingBlock<T>& block,
                           const BasicProjection<T>* proj) {
  const bool needs_proj = block.in_channels != block.out_channels;
  if (needs_proj && proj == nullptr) {
    throw ShapeError("residual_plain", "channels",
                     std::to_string(block.in_channels) + " -> " +
                         std::to_string(block.out_channels) + " needs a projection");
  }
  if (!needs_proj && proj != nullptr) {
    throw ShapeError("residual_plain", "channels", "projection given for an identity skip");
  }
  auto e = block.apply(x);
  auto skip = proj ? proj->apply(x) : x;
  return ops::relu(ops::add(e, skip));
}

template <typename T>
BasicVar<T> fuse_direct(const BasicVar<T>& e_main, const BasicVar<T>& x_aux) {
  return ops::add(e_main, x_aux);
}

template <typename T>
BasicVar<T> fuse_weighted(const BasicVar<T>& e_main, const BasicVar<T>& x_aux,
                          const BasicFusionWeightBlock<T>& fw) {
  const auto& s = x_aux.shape();
  if (s.rank() != 5 || s[1] != fw.channels) {
    throw ShapeError("fuse_weighted", "channels",
                     "fusion block has " + std::to_string(fw.channels) + ", auxiliary input is " +
                         s.str());
  }
  auto& g = e_main.graph();
  auto mixed = ops::conv1x1x1(x_aux, g.parameter(*fw.weight), {g.parameter(*fw.bias)});
  return ops::add(e_main, mixed);
}

template <typename T>
BasicLevelOutput<T> encode_level(const BasicVar<T>& main_in,
                                 const std::optional<BasicVar<T>>& aux_in,
                                 const BasicEncodingBlock<T>& block,
                                 const BasicFusionWeightBlock<T>* fw, FusionVariant variant) {
  if (aux_in && aux_in->shape() != main_in.shape()) {
    throw ShapeError("encode_level", "shape",
                     "main " + main_in.shape().str() + " vs auxiliary " + aux_in->shape().str());
  }
  if (variant == FusionVariant::kWeightedAdd && fw == nullptr) {
    throw ConfigError("encode_level: weighted fusion needs a fusion weight block");
  }
  if (variant != FusionVariant::kPlainResidual && !aux_in) {
    throw ConfigError("encode_level: " + std::string(to_string(variant)) +
                      " fusion needs an auxiliary input");
  }

  BasicLevelOutput<T> out;
  if (aux_in) out.aux_out = block.apply(*aux_in);
  switch (variant) {
    case FusionVariant::kPlainResidual:
      out.main_out = residual_plain<T>(main_in, block, nullptr);
      break;
    case FusionVariant::kDirectAdd:
      out.main_out = ops::relu(fuse_direct(block.apply(main_in), *out.aux_out));
      break;
    case FusionVariant::kWeightedAdd:
      out.main_out = ops::relu(fuse_weighted(block.apply(main_in), *out.aux_out, *fw));
      break;
  }
  out.skip = out.main_out;
  return out;
}

#define RESFUSE_INSTANTIATE_FUSION(T)                                                         \
  template struct BasicEncodingBlock<T>;                                                      \
  template struct BasicProjection<T>;                                                         \
  template struct BasicFusionWeightBlock<T>;                                                  \
  template BasicVar<T> residual_plain(const BasicVar<T>&, const BasicEncodingBlock<T>&,       \
                                      const BasicProjection<T>*);                             \
  template BasicVar<T> fuse_direct(const BasicVar<T>&, const BasicVar<T>&);                   \
  template BasicVar<T> fuse_weighted(const BasicVar<T>&, const BasicVar<T>&,                  \
                                     const BasicFusionWeightBlock<T>&);                       \
  template BasicLevelOutput<T> encode_level(const BasicVar<T>&,                               \
                                            const std::optional<BasicVar<T>>&,                \
                                            const BasicEncodingBlock<T>&,                     \
                                            const BasicFusionWeightBlock<T>*, FusionVariant);

RESFUSE_INSTANTIATE_FUSION(float)
RESFUSE_INSTANTIATE_FUSION(double)

#undef RESFUSE_INSTANTIATE_FUSION

}  // namespace resfuse
