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

#ifndef RESFUSE_PARAMETER_HPP_
#define RESFUSE_PARAMETER_HPP_

#include <cstddef>
#include <map>
#include <string>
#include <utility>

#include "resfuse/errors.hpp"
#include "resfuse/tensor.hpp"

namespace resfuse {

template <typename T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> value;
  bool trainable = true;
};

/// Name-keyed parameter collection. Iteration is lexicographic by name, and
/// element addresses are stable for the lifetime of the set (including moves).
template <typename T>
class BasicParameterSet {
 public:
  using Parameter = BasicParameter<T>;
  using Map = std::map<std::string, Parameter>;

  BasicParameterSet() = default;
  BasicParameterSet(const BasicParameterSet&) = delete;
  BasicParameterSet& operator=(const BasicParameterSet&) = delete;
  BasicParameterSet(BasicParameterSet&&) noexcept = default;
  BasicParameterSet& operator=(BasicParameterSet&&) noexcept = default;

  Parameter& add(std::string name, BasicTensor<T> value, bool trainable = true) {
    auto [it, inserted] = params_.try_emplace(name, Parameter{name, std::move(value), trainable});
    if (!inserted) throw ConfigError("duplicate parameter name: " + name);
    return it->second;
  }

  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  Parameter* find(const std::string& name) {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
  }
  const Parameter* find(const std::string& name) const {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
  }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count(bool trainable_only) const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) {
      if (!trainable_only || p.trainable) n += p.value.size();
    }
    return n;
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.value.zero_grad();
  }

 private:
  Map params_;
};

using Parameter = BasicParameter<float>;
using ParameterSet = BasicParameterSet<float>;

}  // namespace resfuse

#endif  // RESFUSE_PARAMETER_HPP_
