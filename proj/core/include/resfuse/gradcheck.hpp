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


// Central finite-difference checks of analytic gradients, in double.

#ifndef RESFUSE_GRADCHECK_HPP_
#define RESFUSE_GRADCHECK_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "resfuse/graph.hpp"
#include "resfuse/parameter.hpp"

namespace resfuse {

/// |a - b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor = 1e-6);

/// A scalar function of a parameter set. `owner` keeps whatever holds the
/// set (a bare set, a network) alive.
struct GradProblem {
  std::shared_ptr<void> owner;
  BasicParameterSet<double>* params = nullptr;
  std::function<BasicVar<double>(BasicGraph<double>&)> loss;
};

/// Loss value with the current parameter values, no recording.
double evaluate_loss(GradProblem& problem);

/// (f(p + h) - f(p - h)) / 2h for element `index` of parameter `name`.
/// The parameter value is restored afterwards; gradient buffers are untouched.
double finite_difference(GradProblem& problem, const std::string& name, std::size_t index,
                         double h);

/// Derivative estimates for one parameter entry. forward and backward are
/// one-sided differences over [0, h] and [-h, 0], Richardson-extrapolated
/// from steps h and h/2; they agree to O(h^2) where f is smooth and differ by
/// the slope jump when a kink lies within h. central is (f(+h) - f(-h)) / 2h.
struct OneSided {
  double forward = 0.0;
  double backward = 0.0;
  double central = 0.0;
  double loss = 0.0;  // f at the unperturbed point
};
OneSided one_sided_differences(GradProblem& problem, const std::string& name, std::size_t index,
                               double h);

/// Analytic gradient of every trainable parameter (runs one backward pass;
/// leaves the results in the parameters' grad buffers).
void analytic_gradients(GradProblem& problem);

struct GradcheckOptions {
  std::size_t size = 6;  // spatial extent of op inputs
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  double h = 1e-5;        // op checks
  double net_h = 1e-6;    // end-to-end check
  double tolerance = 1e-3;
  double floor = 1e-6;
  std::size_t elements_per_tensor = 3;
};

struct GradcheckResult {
  std::string op;
  std::size_t trials = 0;
  std::size_t checked = 0;  // elements compared
  std::size_t kinks = 0;    // elements resampled because f is not smooth there
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Compares analytic gradients with central differences on up to `elements`
/// random entries of every trainable parameter. An entry whose forward and
/// backward one-sided estimates disagree by more than the tolerance sits
/// within h of a kink (relu, max-pool tie) and is redrawn, up to 8 times.
void check_problem(GradProblem& problem, std::mt19937_64& rng, std::size_t elements, double h,
                   const GradcheckOptions& options, GradcheckResult& result);

/// Every differentiable op plus a levels=2, base=2, 8^3 network.
std::vector<GradcheckResult> run_gradient_suite(const GradcheckOptions& options = {});

}  // namespace resfuse

#endif  // RESFUSE_GRADCHECK_HPP_
