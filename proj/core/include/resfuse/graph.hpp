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

// Tape-based reverse-mode differentiation.
//
// A BasicGraph records every op in execution order. Inputs of a node always
// precede it on the tape, so reverse tape order is a valid topological order
// and backward() visits each node once. Parameters bound with parameter() get
// their gradient accumulated into Parameter::value.grad() when backward runs;
// binding the same parameter twice yields the same node, which is how weight
// sharing between branches is expressed.

#ifndef RESFUSE_GRAPH_HPP_
#define RESFUSE_GRAPH_HPP_

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "resfuse/parameter.hpp"
#include "resfuse/tensor.hpp"

namespace resfuse {

template <typename T>
class BasicGraph;

/// Handle to a node on a graph. Cheap to copy; valid while the graph lives.
template <typename T>
class BasicVar {
 public:
  BasicVar() = default;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  /// d(loss)/d(this) after backward(); empty if no gradient reached the node.
  std::span<const T> grad() const;
  BasicGraph<T>& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class BasicGraph<T>;
  BasicVar(BasicGraph<T>* g, std::size_t id) : graph_(g), id_(id) {}

  BasicGraph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class BasicGraph {
 public:
  using Tensor = BasicTensor<T>;
  using Var = BasicVar<T>;
  using BackwardFn = std::function<void(BasicGraph&, std::size_t)>;

  /// With record_gradients = false no backward closures are kept and
  /// backward() is unavailable; used for inference.
  explicit BasicGraph(bool record_gradients = true) : record_(record_gradients) {}

  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;

  Var constant(Tensor value);
  Var parameter(BasicParameter<T>& p);

  /// Appends an op node. `value` is checked for NaN/Inf.
  Var record(std::string_view op, Tensor value, std::vector<std::size_t> inputs,
             BackwardFn backward);

  void backward(const Var& loss);

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient accumulator of a node, allocated as zeros on first use.
  std::span<T> grad_buffer(std::size_t id);
  std::span<const T> grad(std::size_t id) const { return nodes_.at(id).grad; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    BasicParameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const BasicParameter<T>*, std::size_t> bound_;
  bool record_;
  bool backward_done_ = false;
};

template <typename T>
const BasicTensor<T>& BasicVar<T>::value() const {
  return graph_->value(id_);
}

template <typename T>
std::span<const T> BasicVar<T>::grad() const {
  return graph_->grad(id_);
}

using Graph = BasicGraph<float>;
using Var = BasicVar<float>;

namespace ops {

/// Cross-correlation, zero padding. Output extent floor((n + 2p - k)/s) + 1.
template <typename T>
BasicVar<T> conv3d(const BasicVar<T>& x, const BasicVar<T>& weight,
                   const std::optional<BasicVar<T>>& bias, std::size_t stride,
                   std::size_t padding);

/// Per-voxel channel mixing; weight must be [Cout,C,1,1,1].
template <typename T>
BasicVar<T> conv1x1x1(const BasicVar<T>& x, const BasicVar<T>& weight,
                      const std::optional<BasicVar<T>>& bias);

template <typename T>
BasicVar<T> relu(const BasicVar<T>& x);

template <typename T>
BasicVar<T> sigmoid(const BasicVar<T>& x);

template <typename T>
BasicVar<T> add(const BasicVar<T>& a, const BasicVar<T>& b);

template <typename T>
BasicVar<T> scale(const BasicVar<T>& x, T factor);

template <typename T>
BasicVar<T> instance_norm(const BasicVar<T>& x, const BasicVar<T>& gamma,
                          const BasicVar<T>& beta, T eps);

/// 2x2x2 max pooling.
template <typename T>
BasicVar<T> down2(const BasicVar<T>& x);

/// Nearest-neighbour doubling of the spatial extents.
template <typename T>
BasicVar<T> up2(const BasicVar<T>& x);

/// Concatenation along the channel axis.
template <typename T>
BasicVar<T> concat_channels(const BasicVar<T>& a, const BasicVar<T>& b);

/// Scalar sum of all elements.
template <typename T>
BasicVar<T> sum(const BasicVar<T>& x);

/// Scalar sum(x * weights) against a constant tensor.
template <typename T>
BasicVar<T> dot(const BasicVar<T>& x, const BasicTensor<T>& weights);

/// Soft Dice loss over foreground classes 1..K-1 (see kernels::soft_dice_loss).
template <typename T>
BasicVar<T> dice_loss(const BasicVar<T>& logits, const LabelVolume& target, T eps = T(1e-5));

}  // namespace ops
}  // namespace resfuse

#endif  // RESFUSE_GRAPH_HPP_
