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

#ifndef RESFUSE_TENSOR_HPP_
#define RESFUSE_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "resfuse/errors.hpp"

namespace resfuse {

/// Extents of a dense row-major array. Every extent is positive.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (dims_[i] == 0) {
        throw ShapeError("Shape", "dim " + std::to_string(i), "extent must be positive");
      }
    }
  }

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }

  std::size_t numel() const noexcept {
    if (dims_.empty()) return 0;
    std::size_t n = 1;
    for (auto d : dims_) n *= d;
    return n;
  }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

 private:
  std::vector<std::size_t> dims_;
};

/// Unpacked N,C,D,H,W extents of a rank-5 volume tensor.
struct VolumeDims {
  std::size_t n = 0, c = 0, d = 0, h = 0, w = 0;

  std::size_t spatial() const noexcept { return d * h * w; }

  static VolumeDims of(const Shape& s, const char* op) {
    if (s.rank() != 5) {
      throw ShapeError(op, "rank", "expected N,C,D,H,W, got " + s.str());
    }
    return {s[0], s[1], s[2], s[3], s[4]};
  }
};

/// Dense row-major array with an optional same-shape gradient buffer.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), values_(shape_.numel(), fill) {}

  BasicTensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_.numel()) {
      throw ShapeError("Tensor", "size",
                       shape_.str() + " needs " + std::to_string(shape_.numel()) +
                           " values, got " + std::to_string(values_.size()));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  /// Element of a rank-5 tensor.
  T& at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
    return values_[offset(n, c, d, h, w)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
    return values_[offset(n, c, d, h, w)];
  }

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<T> grad() noexcept { return grad_; }
  std::span<const T> grad() const noexcept { return grad_; }
  /// Allocates the gradient buffer if absent and fills it with zeros.
  void zero_grad() { grad_.assign(values_.size(), T(0)); }
  void clear_grad() { grad_.clear(); grad_.shrink_to_fit(); }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

 private:
  std::size_t offset(std::size_t n, std::size_t c, std::size_t d, std::size_t h,
                     std::size_t w) const {
    const auto& s = shape_.dims();
    return (((n * s[1] + c) * s[2] + d) * s[3] + h) * s[4] + w;
  }

  Shape shape_;
  std::vector<T> values_;
  std::vector<T> grad_;
};

using Tensor = BasicTensor<float>;

/// Integer class map (segmentation labels, binary masks).
struct LabelVolume {
  Shape shape;
  std::vector<std::uint8_t> values;

  LabelVolume() = default;
  explicit LabelVolume(Shape s, std::uint8_t fill = 0) : shape(std::move(s)), values(shape.numel(), fill) {}
  LabelVolume(Shape s, std::vector<std::uint8_t> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != shape.numel()) {
      throw ShapeError("LabelVolume", "size", "value count does not match " + shape.str());
    }
  }

  std::size_t size() const noexcept { return values.size(); }
  bool operator==(const LabelVolume&) const = default;
};

}  // namespace resfuse

#endif  // RESFUSE_TENSOR_HPP_
