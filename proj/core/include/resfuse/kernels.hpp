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

// Graph-free forward and backward kernels over N,C,D,H,W volumes. The autodiff
// ops in graph.hpp are thin wrappers around these.

#ifndef RESFUSE_KERNELS_HPP_
#define RESFUSE_KERNELS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "resfuse/tensor.hpp"

namespace resfuse::kernels {

/// floor((in + 2*padding - kernel) / stride) + 1; throws ShapeError naming
/// `dimension` when that is < 1.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding, const char* dimension);

/// Cross-correlation with zero padding. `bias` may be null.
/// x: [N,Cin,D,H,W], weight: [Cout,Cin,k,k,k] with k odd.
template <typename T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                              const BasicTensor<T>* bias, std::size_t stride,
                              std::size_t padding);

/// Accumulates into dx, dweight, dbias; any of them may be empty to skip it.
template <typename T>
void conv3d_backward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                     std::span<const T> dy, std::size_t stride, std::size_t padding,
                     std::span<T> dx, std::span<T> dweight, std::span<T> dbias);

template <typename T>
struct InstanceNormCache {
  std::vector<T> xhat;     // normalized input, same layout as x
  std::vector<T> inv_std;  // one per (n, c)
  std::size_t slices = 0;
  std::size_t spatial = 0;
  std::size_t channels = 0;
};

/// gamma * (x - mean) / sqrt(var + eps) + beta per (n, c) slice, biased variance.
template <typename T>
BasicTensor<T> instance_norm_forward(const BasicTensor<T>& x, std::span<const T> gamma,
                                     std::span<const T> beta, T eps,
                                     InstanceNormCache<T>* cache);

template <typename T>
void instance_norm_backward(const InstanceNormCache<T>& cache, std::span<const T> gamma,
                            std::span<const T> dy, std::span<T> dx, std::span<T> dgamma,
                            std::span<T> dbeta);

/// 2x2x2 max pooling. argmax receives, per output voxel, the flat input index
/// that won; ties go to the first voxel in d,h,w scan order.
template <typename T>
BasicTensor<T> max_pool2_forward(const BasicTensor<T>& x, std::vector<std::size_t>* argmax);

template <typename T>
void max_pool2_backward(const std::vector<std::size_t>& argmax, std::span<const T> dy,
                        std::span<T> dx);

/// Nearest-neighbour doubling of D, H and W.
template <typename T>
BasicTensor<T> upsample2_forward(const BasicTensor<T>& x);

template <typename T>
void upsample2_backward(const Shape& x_shape, std::span<const T> dy, std::span<T> dx);

/// Softmax over the channel axis, per voxel.
template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& logits);

/// Per-voxel argmax over channels; ties go to the lowest class. Output [N,D,H,W].
template <typename T>
LabelVolume argmax_channels(const BasicTensor<T>& logits);

/// 1 - mean over classes 1..K-1 of (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps),
/// p = channel softmax of logits, g = one-hot of `target` ([N,D,H,W] class ids),
/// sums taken over the whole batch. If dlogits is non-empty it receives
/// d(loss)/d(logits) (overwritten, not accumulated).
template <typename T>
T soft_dice_loss(const BasicTensor<T>& logits, const LabelVolume& target, T eps,
                 std::span<T> dlogits);

}  // namespace resfuse::kernels

#endif  // RESFUSE_KERNELS_HPP_
