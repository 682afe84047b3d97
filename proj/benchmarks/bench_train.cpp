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

#include "resfuse/graph.hpp"
#include "resfuse/network.hpp"
#include "resfuse/optim.hpp"
#include "resfuse/phantom.hpp"
#include "resfuse/train.hpp"

namespace {

// args: levels, base channels, extent
void BM_TrainStep(benchmark::State& state) {
  resfuse::ModelConfig cfg;
  cfg.levels = static_cast<std::size_t>(state.range(0));
  cfg.base_channels = static_cast<std::size_t>(state.range(1));
  const auto e = static_cast<std::size_t>(state.range(2));
  resfuse::DualBranchSegNet net(cfg);
  resfuse::PhantomSpec spec;
  spec.size = {e, e, e};
  const auto a = resfuse::generate_phantom(spec, 1);
  const auto b = resfuse::generate_phantom(spec, 2);
  const auto batch = resfuse::make_batch({&a, &b}, false);
  resfuse::AdamState opt;
  for (auto _ : state) {
    resfuse::Graph g;
    auto loss = resfuse::ops::dice_loss(net.forward(g, batch.pre, batch.post), batch.target);
    g.backward(loss);
    resfuse::adam_step(net.parameters(), opt, {});
    net.parameters().zero_grad();
  }
  state.counters["samples/s"] = benchmark::Counter(2.0, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_TrainStep)->Args({3, 8, 32})->Args({3, 4, 32})->Args({2, 8, 32})->Unit(benchmark::kMillisecond);

void BM_Forward(benchmark::State& state) {
  resfuse::ModelConfig cfg;
  const resfuse::DualBranchSegNet net(cfg);
  resfuse::PhantomSpec spec;
  const auto a = resfuse::generate_phantom(spec, 1);
  const auto batch = resfuse::make_batch({&a}, false);
  for (auto _ : state) {
    auto y = net.infer(batch.pre, batch.post);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
