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

#include "resfuse/network.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <string>

#include "json.hpp"

namespace resfuse {

void ModelConfig::validate() const {
  if (levels < 2) throw ConfigError("levels must be >= 2, got " + std::to_string(levels));
  if (levels > 8) throw ConfigError("levels must be <= 8, got " + std::to_string(levels));
  if (base_channels == 0) throw ConfigError("base_channels must be positive");
  if (base_channels > 4096) throw ConfigError("base_channels too large");
  if (in_channels_per_branch == 0) throw ConfigError("in_channels_per_branch must be positive");
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j = {
      {"levels", levels},
      {"base_channels", base_channels},
      {"in_channels_per_branch", in_channels_per_branch},
      {"num_classes", num_classes},
      {"variant", std::string(to_string(variant))},
      {"aux_descends_fused", aux_descends_fused},
      {"fusion_zero_init", fusion_zero_init},
      {"seed", seed},
  };
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.levels = j.at("levels").get<std::size_t>();
    c.base_channels = j.at("base_channels").get<std::size_t>();
    c.in_channels_per_branch = j.at("in_channels_per_branch").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.variant = parse_fusion_variant(j.at("variant").get<std::string>());
    c.aux_descends_fused = j.at("aux_descends_fused").get<bool>();
    c.fusion_zero_init = j.value("fusion_zero_init", false);
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
BasicConvNormRelu<T> BasicConvNormRelu<T>::create(BasicParameterSet<T>& params,
                                                  const std::string& prefix,
                                                  std::size_t in_channels,
                                                  std::size_t out_channels) {
  BasicConvNormRelu b;
  b.weight = &params.add(prefix + ".conv.weight", BasicTensor<T>(Shape{out_channels, in_channels, 3, 3, 3}));
  b.bias = &params.add(prefix + ".conv.bias", BasicTensor<T>(Shape{out_channels}));
  b.gamma = &params.add(prefix + ".norm.weight", BasicTensor<T>(Shape{out_channels}, T(1)));
  b.beta = &params.add(prefix + ".norm.bias", BasicTensor<T>(Shape{out_channels}));
  return b;
}

template <typename T>
BasicVar<T> BasicConvNormRelu<T>::apply(const BasicVar<T>& x) const {
  auto& g = x.graph();
  auto h = ops::conv3d(x, g.parameter(*weight), {g.parameter(*bias)}, 1, 1);
  h = ops::instance_norm(h, g.parameter(*gamma), g.parameter(*beta), static_cast<T>(kNormEps));
  return ops::relu(h);
}

template <typename T>
BasicDualBranchSegNet<T>::BasicDualBranchSegNet(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t L = config_.levels;
  stem_ = BasicConvNormRelu<T>::create(params_, "stem", config_.in_channels_per_branch,
                                       config_.channels(0));
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t c = config_.channels(l);
    if (l > 0) {
      down_.push_back(BasicConvNormRelu<T>::create(params_, "down." + std::to_string(l),
                                                   config_.channels(l - 1), c));
    }
    enc_.push_back(BasicEncodingBlock<T>::create(params_, "enc." + std::to_string(l), c, c));
    if (config_.variant == FusionVariant::kWeightedAdd) {
      fuse_.push_back(BasicFusionWeightBlock<T>::create(params_, "fuse." + std::to_string(l), c,
                                                        config_.fusion_zero_init));
    }
  }
  for (std::size_t l = 0; l + 1 < L; ++l) {
    const std::size_t c = config_.channels(l);
    const std::string tag = std::to_string(l);
    up_.push_back(BasicConvNormRelu<T>::create(params_, "up." + tag, config_.channels(l + 1), c));
    dec_.push_back(BasicEncodingBlock<T>::create(params_, "dec." + tag, 2 * c, c));
    dec_proj_.push_back(BasicProjection<T>::create(params_, "dec." + tag + ".proj", 2 * c, c));
  }
  head_ = BasicProjection<T>::create(params_, "head", config_.channels(0), config_.num_classes);

  // He fan-in initialization of every convolution kernel in name order;
  // fusion blocks keep their identity/zero start, norms and biases their
  // defaults.
  std::mt19937_64 rng(config_.seed);
  for (auto& [name, p] : params_) {
    if (p.value.shape().rank() != 5 || name.rfind("fuse.", 0) == 0) continue;
    const auto& s = p.value.shape();
    const double fan_in = static_cast<double>(s[1] * s[2] * s[3] * s[4]);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
  }
}

template <typename T>
void BasicDualBranchSegNet<T>::check_inputs(const BasicTensor<T>& pre,
                                            const BasicTensor<T>& post) const {
  const auto v = VolumeDims::of(post.shape(), "forward");
  if (pre.shape() != post.shape()) {
    throw ShapeError("forward", "shape", "pre " + pre.shape().str() + " vs post " + post.shape().str());
  }
  if (v.c != config_.in_channels_per_branch) {
    throw ShapeError("forward", "channels",
                     "expected " + std::to_string(config_.in_channels_per_branch) + ", got " +
                         std::to_string(v.c));
  }
  const std::size_t div = config_.spatial_divisor();
  const char* names[] = {"depth", "height", "width"};
  const std::size_t ext[] = {v.d, v.h, v.w};
  for (int i = 0; i < 3; ++i) {
    if (ext[i] % div != 0) {
      throw ShapeError("forward", names[i],
                       "extent " + std::to_string(ext[i]) + " is not a multiple of " +
                           std::to_string(div));
    }
  }
}

template <typename T>
BasicVar<T> BasicDualBranchSegNet<T>::forward(BasicGraph<T>& graph, const BasicTensor<T>& pre,
                                              const BasicTensor<T>& post) const {
  check_inputs(pre, post);
  const std::size_t L = config_.levels;
  const bool dual = config_.variant != FusionVariant::kPlainResidual;

  BasicVar<T> main = stem_.apply(graph.constant(post));
  std::optional<BasicVar<T>> aux;
  if (dual) aux = stem_.apply(graph.constant(pre));

  std::vector<BasicVar<T>> skips;
  BasicVar<T> main_carry;
  std::optional<BasicVar<T>> aux_carry;
  for (std::size_t l = 0; l < L; ++l) {
    if (l > 0) {
      main = down_[l - 1].apply(ops::down2(main_carry));
      if (dual) aux = down_[l - 1].apply(ops::down2(*aux_carry));
    }
    const auto* fw = fuse_.empty() ? nullptr : &fuse_[l];
    auto out = encode_level(main, aux, enc_[l], fw, config_.variant);
    skips.push_back(out.skip);
    main_carry = out.main_out;
    if (dual) aux_carry = config_.aux_descends_fused ? out.main_out : *out.aux_out;
  }

  BasicVar<T> x = main_carry;
  for (std::size_t l = L - 1; l-- > 0;) {
    auto u = up_[l].apply(ops::up2(x));
    x = residual_plain(ops::concat_channels(u, skips[l]), dec_[l], &dec_proj_[l]);
  }
  return head_.apply(x);
}

template <typename T>
BasicTensor<T> BasicDualBranchSegNet<T>::infer(const BasicTensor<T>& pre,
                                               const BasicTensor<T>& post) const {
  BasicGraph<T> g(false);
  auto logits = forward(g, pre, post);
  return logits.value();
}

template <typename To, typename From>
void copy_parameters(const BasicDualBranchSegNet<From>& src, BasicDualBranchSegNet<To>& dst) {
  if (!(src.config() == dst.config())) throw ConfigError("copy_parameters: configs differ");
  for (auto& [name, p] : dst.parameters()) {
    const auto& s = src.parameters().at(name);
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<To>(s.value[i]);
  }
}

template struct BasicConvNormRelu<float>;
template struct BasicConvNormRelu<double>;
template class BasicDualBranchSegNet<float>;
template class BasicDualBranchSegNet<double>;
template void copy_parameters(const BasicDualBranchSegNet<float>&, BasicDualBranchSegNet<double>&);
template void copy_parameters(const BasicDualBranchSegNet<double>&, BasicDualBranchSegNet<float>&);
template void copy_parameters(const BasicDualBranchSegNet<float>&, BasicDualBranchSegNet<float>&);

}  // namespace resfuse
