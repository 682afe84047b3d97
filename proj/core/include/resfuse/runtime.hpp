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

#ifndef RESFUSE_RUNTIME_HPP_
#define RESFUSE_RUNTIME_HPP_

#include <cstddef>
#include <functional>

namespace resfuse {

/// Worker threads available to kernels. Read once from RESFUSE_THREADS
/// (default 1). Work is only ever split over independent outputs, so results
/// are bit-identical for every thread count.
std::size_t thread_count();

/// Overrides RESFUSE_THREADS for the rest of the process. 0 restores the
/// environment value.
void set_thread_count(std::size_t n);

/// Runs fn(i) for i in [0, n), partitioned into contiguous ranges across
/// thread_count() threads. fn must not write to memory shared between indices.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace resfuse

#endif  // RESFUSE_RUNTIME_HPP_
