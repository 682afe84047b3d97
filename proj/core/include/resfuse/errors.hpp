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

#ifndef RESFUSE_ERRORS_HPP_
#define RESFUSE_ERRORS_HPP_

#include <stdexcept>
#include <string>
#include <utility>

namespace resfuse {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A tensor did not have the shape an operation requires. `dimension()` names
/// the offending axis ("channels", "depth", "rank", ...).
class ShapeError : public Error {
 public:
  ShapeError(std::string op, std::string dimension, const std::string& detail)
      : Error(op + ": bad " + dimension + ": " + detail),
        op_(std::move(op)),
        dimension_(std::move(dimension)) {}

  const std::string& op() const noexcept { return op_; }
  const std::string& dimension() const noexcept { return dimension_; }

 private:
  std::string op_;
  std::string dimension_;
};

/// NaN or Inf appeared in an operation's input or output.
class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(std::string op)
      : Error(op + ": non-finite value"), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

/// Malformed file: bad magic, version, dtype, truncation or checksum.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid or incompatible configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Phantom object placement gave up after the attempt budget.
class PlacementError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace resfuse

#endif  // RESFUSE_ERRORS_HPP_
