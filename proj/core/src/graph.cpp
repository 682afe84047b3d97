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

#include "resfuse/graph.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <memory>
#include <string>
#include <utility>

#include "resfuse/kernels.hpp"

namespace resfuse {

template <typename T>
BasicVar<T> BasicGraph<T>::constant(Tensor value) {
  return record("constant", std::move(value), {}, nullptr);
}

template <typename T>
BasicVar<T> BasicGraph<T>::parameter(BasicParameter<T>& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  if (!p.value.all_finite()) throw NonFiniteError("parameter " + p.name);
  Node n;
  n.op = "param:" + p.name;
  n.value = Tensor(p.value.shape(), std::vector<T>(p.value.values().begin(), p.value.values().end()));
  n.param = &p;
  n.requires_grad = record_ && p.trainable;
  nodes_.push_back(std::move(n));
  bound_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

template <typename T>
BasicVar<T> BasicGraph<T>::record(std::string_view op, Tensor value,
                                  std::vector<std::size_t> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NonFiniteError(std::string(op));
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  bool needs = false;
  for (auto i : inputs) {
    assert(i < nodes_.size() && "inputs must precede the node on the tape");
    needs = needs || nodes_[i].requires_grad;
  }
  n.inputs = std::move(inputs);
  n.requires_grad = record_ && needs;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

template <typename T>
std::span<T> BasicGraph<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

template <typename T>
void BasicGraph<T>::backward(const Var& loss) {
  if (!record_) throw Error("backward: graph was built without gradient recording");
  if (loss.graph_ != this) throw Error("backward: loss belongs to another graph");
  if (loss.value().size() != 1) {
    throw ShapeError("backward", "loss", "must be a scalar, got " + loss.shape().str());
  }
  if (backward_done_) throw Error("backward: already ran on this graph");
  backward_done_ = true;
  if (!nodes_[loss.id_].requires_grad) return;
  grad_buffer(loss.id_)[0] += T(1);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param != nullptr) {
      auto& pv = n.param->value;
      if (!pv.has_grad()) pv.zero_grad();
      auto dst = pv.grad();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

namespace ops {
namespace {

template <typename T>
BasicGraph<T>& same_graph(const char* op, std::initializer_list<const BasicVar<T>*> vars) {
  BasicGraph<T>* g = nullptr;
  for (const auto* v : vars) {
    if (v == nullptr) continue;
    if (!v->valid()) throw Error(std::string(op) + ": unbound variable");
    if (g == nullptr) g = &v->graph();
    if (&v->graph() != g) throw Error(std::string(op) + ": operands live on different graphs");
  }
  return *g;
}

template <typename T>
std::span<T> grad_if_needed(BasicGraph<T>& g, std::size_t id) {
  return g.requires_grad(id) ? g.grad_buffer(id) : std::span<T>{};
}

template <typename T>
BasicVar<T> conv_impl(const char* name, const BasicVar<T>& x, const BasicVar<T>& w,
                      const std::optional<BasicVar<T>>& bias, std::size_t stride,
                      std::size_t padding) {
  auto& g = same_graph<T>(name, {&x, &w, bias ? &*bias : nullptr});
  auto y = kernels::conv3d_forward(x.value(), w.value(), bias ? &bias->value() : nullptr, stride,
                                   padding);
  std::vector<std::size_t> in{x.id(), w.id()};
  if (bias) in.push_back(bias->id());
  return g.record(name, std::move(y), std::move(in),
                  [stride, padding](BasicGraph<T>& g, std::size_t self) {
                    const auto& ins = g.inputs(self);
                    auto dx = grad_if_needed(g, ins[0]);
                    auto dw = grad_if_needed(g, ins[1]);
                    auto db = ins.size() > 2 ? grad_if_needed(g, ins[2]) : std::span<T>{};
                    kernels::conv3d_backward(g.value(ins[0]), g.value(ins[1]), g.grad(self),
                                             stride, padding, dx, dw, db);
                  });
}

}  // namespace

template <typename T>
BasicVar<T> conv3d(const BasicVar<T>& x, const BasicVar<T>& weight,
                   const std::optional<BasicVar<T>>& bias, std::size_t stride,
                   std::size_t padding) {
  return conv_impl("conv3d", x, weight, bias, stride, padding);
}

template <typename T>
BasicVar<T> conv1x1x1(const BasicVar<T>& x, const BasicVar<T>& weight,
                      const std::optional<BasicVar<T>>& bias) {
  const auto& ws = weight.shape();
  if (ws.rank() != 5 || ws[2] != 1 || ws[3] != 1 || ws[4] != 1) {
    throw ShapeError("conv1x1x1", "kernel extent", "expected [Cout,C,1,1,1], got " + ws.str());
  }
  return conv_impl("conv1x1x1", x, weight, bias, 1, 0);
}

template <typename T>
BasicVar<T> relu(const BasicVar<T>& x) {
  auto& g = x.graph();
  BasicTensor<T> y(x.shape());
  const auto xv = x.value().values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > T(0) ? xv[i] : T(0);
  return g.record("relu", std::move(y), {x.id()}, [](BasicGraph<T>& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    if (!g.requires_grad(in)) return;
    auto dx = g.grad_buffer(in);
    const auto xv = g.value(in).values();
    const auto dy = g.grad(self);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] > T(0)) dx[i] += dy[i];
    }
  });
}

template <typename T>
BasicVar<T> sigmoid(const BasicVar<T>& x) {
  auto& g = x.graph();
  BasicTensor<T> y(x.shape());
  const auto xv = x.value().values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-xv[i]));
  return g.record("sigmoid", std::move(y), {x.id()}, [](BasicGraph<T>& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    if (!g.requires_grad(in)) return;
    auto dx = g.grad_buffer(in);
    const auto yv = g.value(self).values();
    const auto dy = g.grad(self);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * yv[i] * (T(1) - yv[i]);
  });
}

template <typename T>
BasicVar<T> add(const BasicVar<T>& a, const BasicVar<T>& b) {
  auto& g = same_graph<T>("add", {&a, &b});
  if (a.shape() != b.shape()) {
    throw ShapeError("add", "shape", a.shape().str() + " vs " + b.shape().str());
  }
  BasicTensor<T> y(a.shape());
  const auto av = a.value().values();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return g.record("add", std::move(y), {a.id(), b.id()}, [](BasicGraph<T>& g, std::size_t self) {
    const auto dy = g.grad(self);
    for (std::size_t in : g.inputs(self)) {
      if (!g.requires_grad(in)) continue;
      auto dx = g.grad_buffer(in);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    }
  });
}

template <typename T>
BasicVar<T> scale(const BasicVar<T>& x, T factor) {
  auto& g = x.graph();
  BasicTensor<T> y(x.shape());
  const auto xv = x.value().values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * factor;
  return g.record("scale", std::move(y), {x.id()}, [factor](BasicGraph<T>& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    if (!g.requires_grad(in)) return;
    auto dx = g.grad_buffer(in);
    const auto dy = g.grad(self);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * factor;
  });
}

template <typename T>
BasicVar<T> instance_norm(const BasicVar<T>& x, const BasicVar<T>& gamma,
                          const BasicVar<T>& beta, T eps) {
  auto& g = same_graph<T>("instance_norm", {&x, &gamma, &beta});
  auto cache = g.recording() ? std::make_shared<kernels::InstanceNormCache<T>>() : nullptr;
  auto y = kernels::instance_norm_forward(x.value(), gamma.value().values(), beta.value().values(),
                                          eps, cache.get());
  return g.record("instance_norm", std::move(y), {x.id(), gamma.id(), beta.id()},
                  [cache](BasicGraph<T>& g, std::size_t self) {
                    const auto& ins = g.inputs(self);
                    kernels::instance_norm_backward(*cache, g.value(ins[1]).values(), g.grad(self),
                                                    grad_if_needed(g, ins[0]),
                                                    grad_if_needed(g, ins[1]),
                                                    grad_if_needed(g, ins[2]));
                  });
}

template <typename T>
BasicVar<T> down2(const BasicVar<T>& x) {
  auto& g = x.graph();
  auto argmax = g.recording() ? std::make_shared<std::vector<std::size_t>>() : nullptr;
  auto y = kernels::max_pool2_forward(x.value(), argmax.get());
  return g.record("down2", std::move(y), {x.id()}, [argmax](BasicGraph<T>& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    if (!g.requires_grad(in)) return;
    kernels::max_pool2_backward(*argmax, g.grad(self), g.grad_buffer(in));
  });
}

template <typename T>
BasicVar<T> up2(const BasicVar<T>& x) {
  auto& g = x.graph();
  auto y = kernels::upsample2_forward(x.value());
  return g.record("up2", std::move(y), {x.id()}, [](BasicGraph<T>& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    if (!g.requires_grad(in)) return;
    kernels::upsample2_backward(g.value(in).shape(), g.grad(self), g.grad_buffer(in));
  });
}

template <typename T>
BasicVar<T> concat_channels(const BasicVar<T>& a, const BasicVar<T>& b) {
  auto& g = same_graph<T>("concat", {&a, &b});
  const auto va = VolumeDims::of(a.shape(), "concat");
  const auto vb = VolumeDims::of(b.shape(), "concat");
  if (va.n != vb.n) throw ShapeError("concat", "batch", a.shape().str() + " vs " + b.shape().str());
  if (va.d != vb.d || va.h != vb.h || va.w != vb.w) {
    throw ShapeError("concat", "spatial extent", a.shape().str() + " vs " + b.shape().str());
  }
  const std::size_t m = va.spatial();
  BasicTensor<T> y(Shape{va.n, va.c + vb.c, va.d, va.h, va.w});
  for (std::size_t n = 0; n < va.n; ++n) {
    std::copy_n(a.value().data() + n * va.c * m, va.c * m, y.data() + n * (va.c + vb.c) * m);
    std::copy_n(b.value().data() + n * vb.c * m, vb.c * m,
                y.data() + (n * (va.c + vb.c) + va.c) * m);
  }
  return g.record("concat", std::move(y), {a.id(), b.id()},
                  [va, vb, m](BasicGraph<T>& g, std::size_t self) {
                    const auto& ins = g.inputs(self);
                    const auto dy = g.grad(self);
                    const std::size_t ct = va.c + vb.c;
                    if (g.requires_grad(ins[0])) {
                      auto da = g.grad_buffer(ins[0]);
                      for (std::size_t n = 0; n < va.n; ++n) {
                        for (std::size_t i = 0; i < va.c * m; ++i) {
                          da[n * va.c * m + i] += dy[n * ct * m + i];
                        }
                      }
                    }
                    if (g.requires_grad(ins[1])) {
                      auto db = g.grad_buffer(ins[1]);
                      for (std::size_t n = 0; n < vb.n; ++n) {
                        for (std::size_t i = 0; i < vb.c * m; ++i) {
                          db[n * vb.c * m + i] += dy[(n * ct + va.c) * m + i];
                        }
                      }
                    }
                  });
}

template <typename T>
BasicVar<T> sum(const BasicVar<T>& x) {
  auto& g = x.graph();
  double acc = 0.0;
  for (T v : x.value().values()) acc += v;
  BasicTensor<T> y(Shape{1}, std::vector<T>{static_cast<T>(acc)});
  return g.record("sum", std::move(y), {x.id()}, [](BasicGraph<T>& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    if (!g.requires_grad(in)) return;
    auto dx = g.grad_buffer(in);
    const T dy = g.grad(self)[0];
    for (auto& v : dx) v += dy;
  });
}

template <typename T>
BasicVar<T> dot(const BasicVar<T>& x, const BasicTensor<T>& weights) {
  auto& g = x.graph();
  if (weights.shape() != x.shape()) {
    throw ShapeError("dot", "shape", x.shape().str() + " vs " + weights.shape().str());
  }
  double acc = 0.0;
  const auto xv = x.value().values();
  for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv[i]) * weights[i];
  BasicTensor<T> y(Shape{1}, std::vector<T>{static_cast<T>(acc)});
  return g.record("dot", std::move(y), {x.id()}, [weights](BasicGraph<T>& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    if (!g.requires_grad(in)) return;
    auto dx = g.grad_buffer(in);
    const T dy = g.grad(self)[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy * weights[i];
  });
}

template <typename T>
BasicVar<T> dice_loss(const BasicVar<T>& logits, const LabelVolume& target, T eps) {
  auto& g = logits.graph();
  const bool want_grad = g.recording() && g.requires_grad(logits.id());
  auto dlogits = want_grad ? std::make_shared<std::vector<T>>(logits.value().size()) : nullptr;
  const T loss = kernels::soft_dice_loss(logits.value(), target, eps,
                                         dlogits ? std::span<T>(*dlogits) : std::span<T>{});
  BasicTensor<T> y(Shape{1}, std::vector<T>{loss});
  return g.record("dice_loss", std::move(y), {logits.id()},
                  [dlogits](BasicGraph<T>& g, std::size_t self) {
                    const std::size_t in = g.inputs(self)[0];
                    auto dx = g.grad_buffer(in);
                    const T dy = g.grad(self)[0];
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy * (*dlogits)[i];
                  });
}

#define RESFUSE_INSTANTIATE_OPS(T)                                                             \
  template BasicVar<T> conv3d(const BasicVar<T>&, const BasicVar<T>&,                          \
                              const std::optional<BasicVar<T>>&, std::size_t, std::size_t);    \
  template BasicVar<T> conv1x1x1(const BasicVar<T>&, const BasicVar<T>&,                       \
                                 const std::optional<BasicVar<T>>&);                           \
  template BasicVar<T> relu(const BasicVar<T>&);                                               \
  template BasicVar<T> sigmoid(const BasicVar<T>&);                                            \
  template BasicVar<T> add(const BasicVar<T>&, const BasicVar<T>&);                            \
  template BasicVar<T> scale(const BasicVar<T>&, T);                                           \
  template BasicVar<T> instance_norm(const BasicVar<T>&, const BasicVar<T>&,                   \
                                     const BasicVar<T>&, T);                                   \
  template BasicVar<T> down2(const BasicVar<T>&);                                              \
  template BasicVar<T> up2(const BasicVar<T>&);                                                \
  template BasicVar<T> concat_channels(const BasicVar<T>&, const BasicVar<T>&);                \
  template BasicVar<T> sum(const BasicVar<T>&);                                                \
  template BasicVar<T> dot(const BasicVar<T>&, const BasicTensor<T>&);                         \
  template BasicVar<T> dice_loss(const BasicVar<T>&, const LabelVolume&, T);

RESFUSE_INSTANTIATE_OPS(float)
RESFUSE_INSTANTIATE_OPS(double)

#undef RESFUSE_INSTANTIATE_OPS

}  // namespace ops

template class BasicGraph<float>;
template class BasicGraph<double>;

}  // namespace resfuse
