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


#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "resfuse/kernels.hpp"
#include "resfuse/tensor.hpp"

namespace {

using resfuse::Shape;
using resfuse::Tensor;

Tensor random_tensor(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensor t(s);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// args: channels in, channels out, extent, stride
void BM_Conv3dForward(benchmark::State& state) {
  const auto cin = static_cast<std::size_t>(state.range(0));
  const auto cout = static_cast<std::size_t>(state.range(1));
  const auto e = static_cast<std::size_t>(state.range(2));
  const Tensor x = random_tensor(Shape{2, cin, e, e, e}, 1);
  const Tensor w = random_tensor(Shape{cout, cin, 3, 3, 3}, 2);
  const Tensor b = random_tensor(Shape{cout}, 3);
  for (auto _ : state) {
    auto y = resfuse::kernels::conv3d_forward(x, w, &b, 1, 1);
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(
      2.0 * 2 * cout * cin * 27 * e * e * e, benchmark::Counter::kIsIterationInvariantRate,
      benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Conv3dForward)->Args({1, 8, 32})->Args({8, 8, 32})->Args({16, 8, 32})->Args({16, 16, 16})->Args({32, 32, 8})->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const auto cin = static_cast<std::size_t>(state.range(0));
  const auto cout = static_cast<std::size_t>(state.range(1));
  const auto e = static_cast<std::size_t>(state.range(2));
  const Tensor x = random_tensor(Shape{2, cin, e, e, e}, 1);
  const Tensor w = random_tensor(Shape{cout, cin, 3, 3, 3}, 2);
  const Tensor dy = random_tensor(Shape{2, cout, e, e, e}, 3);
  std::vector<float> dx(x.size()), dw(w.size()), db(cout);
  for (auto _ : state) {
    resfuse::kernels::conv3d_backward<float>(x, w, dy.values(), 1, 1, dx, dw, db);
    benchmark::DoNotOptimize(dx.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(
      4.0 * 2 * cout * cin * 27 * e * e * e, benchmark::Counter::kIsIterationInvariantRate,
      benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Conv3dBackward)->Args({1, 8, 32})->Args({8, 8, 32})->Args({16, 8, 32})->Args({16, 16, 16})->Args({32, 32, 8})->Unit(benchmark::kMillisecond);

void BM_InstanceNorm(benchmark::State& state) {
  const Tensor x = random_tensor(Shape{2, 8, 32, 32, 32}, 1);
  const std::vector<float> g(8, 1.0f), b(8, 0.0f);
  for (auto _ : state) {
    auto y = resfuse::kernels::instance_norm_forward<float>(x, g, b, 1e-5f, nullptr);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_InstanceNorm)->Unit(benchmark::kMillisecond);

}  // namespace
