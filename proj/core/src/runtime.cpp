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

#include "resfuse/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace resfuse {
namespace {

std::size_t env_threads() {
  const char* v = std::getenv("RESFUSE_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  try {
    long n = std::stol(v);
    return n < 1 ? 1 : static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    return 1;
  }
}

std::atomic<std::size_t> g_override{0};

}  // namespace

std::size_t thread_count() {
  static const std::size_t from_env = env_threads();
  std::size_t o = g_override.load(std::memory_order_relaxed);
  return o ? o : from_env;
}

void set_thread_count(std::size_t n) { g_override.store(n, std::memory_order_relaxed); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    const std::size_t lo = n * t / workers;
    const std::size_t hi = n * (t + 1) / workers;
    pool.emplace_back([&, t, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace resfuse
