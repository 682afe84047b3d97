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


#include "resfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "resfuse/fusion.hpp"
#include "resfuse/network.hpp"

namespace resfuse {
namespace {

using D = double;
using DGraph = BasicGraph<D>;
using DVar = BasicVar<D>;
using DTensor = BasicTensor<D>;
using DSet = BasicParameterSet<D>;

DTensor normal_tensor(const Shape& s, std::mt19937_64& rng, D sd = 1.0) {
  std::normal_distribution<D> n(0.0, sd);
  DTensor t(s);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

DTensor uniform_tensor(const Shape& s, std::mt19937_64& rng, D lo, D hi) {
  std::uniform_real_distribution<D> u(lo, hi);
  DTensor t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Values bounded away from zero, for relu.
DTensor off_kink_tensor(const Shape& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<D> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  DTensor t(s);
  for (auto& v : t.values()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

// Distinct values at least 0.01 apart, for max-pooling.
DTensor distinct_tensor(const Shape& s, std::mt19937_64& rng) {
  DTensor t(s);
  std::vector<std::size_t> perm(t.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < perm.size(); ++i) t[i] = 0.01 * static_cast<D>(perm[i]) - 0.5;
  return t;
}

LabelVolume random_labels(const Shape& s, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, static_cast<int>(classes) - 1);
  LabelVolume l(s);
  for (auto& v : l.values) v = static_cast<std::uint8_t>(u(rng));
  return l;
}

// Kernels He-normal, norm scales in [0.5, 1.5], everything else small uniform.
void randomize(DSet& set, std::mt19937_64& rng) {
  for (auto& [name, p] : set) {
    auto& v = p.value;
    const auto& s = v.shape();
    if (s.rank() == 5) {
      const D fan_in = static_cast<D>(s[1] * s[2] * s[3] * s[4]);
      v = normal_tensor(s, rng, std::sqrt(2.0 / fan_in));
    } else if (name.find("norm") != std::string::npos && name.ends_with(".weight")) {
      v = uniform_tensor(s, rng, 0.5, 1.5);
    } else {
      v = uniform_tensor(s, rng, -0.2, 0.2);
    }
  }
}

struct Holder {
  DSet set;
};

// loss = dot(op(params), r) for a fixed random r of the op's output shape,
// with r ~ N(0, 1/n) so the loss is O(1) like the dice loss.
GradProblem dot_problem(std::shared_ptr<Holder> h, std::mt19937_64& rng,
                        std::function<DVar(DGraph&, DSet&)> op) {
  DGraph probe(false);
  const Shape out = op(probe, h->set).shape();
  auto r = std::make_shared<DTensor>(normal_tensor(out, rng, 1.0 / std::sqrt(static_cast<D>(out.numel()))));
  GradProblem p;
  p.params = &h->set;
  p.owner = h;
  p.loss = [h, r, op](DGraph& g) { return ops::dot(op(g, h->set), *r); };
  return p;
}

BasicParameter<D>& add_param(DSet& set, const std::string& name, DTensor value) {
  return set.add(name, std::move(value));
}

using Builder = std::function<GradProblem(std::size_t trial, std::mt19937_64&)>;

struct OpSpec {
  std::string name;
  Builder build;
  bool network = false;
};

std::vector<OpSpec> op_specs(std::size_t S) {
  const std::size_t E = S + (S % 2);  // even extent for pooling
  std::vector<OpSpec> specs;

  specs.push_back({"conv3d", [S](std::size_t t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    add_param(h->set, "x", normal_tensor(Shape{2, 2, S, S, S}, rng));
    add_param(h->set, "w", normal_tensor(Shape{3, 2, 3, 3, 3}, rng, 0.3));
    add_param(h->set, "b", normal_tensor(Shape{3}, rng));
    const std::size_t stride = t % 2 ? 2 : 1;
    return dot_problem(h, rng, [stride](DGraph& g, DSet& s) {
      return ops::conv3d(g.parameter(s.at("x")), g.parameter(s.at("w")),
                         std::optional<DVar>(g.parameter(s.at("b"))), stride, 1);
    });
  }});

  specs.push_back({"conv1x1x1", [S](std::size_t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    add_param(h->set, "x", normal_tensor(Shape{2, 3, S, S, S}, rng));
    add_param(h->set, "w", normal_tensor(Shape{2, 3, 1, 1, 1}, rng));
    add_param(h->set, "b", normal_tensor(Shape{2}, rng));
    return dot_problem(h, rng, [](DGraph& g, DSet& s) {
      return ops::conv1x1x1(g.parameter(s.at("x")), g.parameter(s.at("w")),
                            std::optional<DVar>(g.parameter(s.at("b"))));
    });
  }});

  specs.push_back({"relu", [S](std::size_t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    add_param(h->set, "x", off_kink_tensor(Shape{1, 2, S, S, S}, rng));
    return dot_problem(h, rng, [](DGraph& g, DSet& s) { return ops::relu(g.parameter(s.at("x"))); });
  }});

  specs.push_back({"sigmoid", [S](std::size_t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    add_param(h->set, "x", normal_tensor(Shape{1, 2, S, S, S}, rng, 2.0));
    return dot_problem(h, rng, [](DGraph& g, DSet& s) { return ops::sigmoid(g.parameter(s.at("x"))); });
  }});

  specs.push_back({"add", [S](std::size_t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    add_param(h->set, "a", normal_tensor(Shape{1, 2, S, S, S}, rng));
    add_param(h->set, "b", normal_tensor(Shape{1, 2, S, S, S}, rng));
    return dot_problem(h, rng, [](DGraph& g, DSet& s) {
      return ops::add(g.parameter(s.at("a")), g.parameter(s.at("b")));
    });
  }});

  specs.push_back({"scale", [S](std::size_t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    add_param(h->set, "x", normal_tensor(Shape{1, 2, S, S, S}, rng));
    const D f = std::uniform_real_distribution<D>(-2.0, 2.0)(rng);
    return dot_problem(h, rng, [f](DGraph& g, DSet& s) { return ops::scale(g.parameter(s.at("x")), f); });
  }});

  specs.push_back({"instance_norm", [S](std::size_t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    add_param(h->set, "x", normal_tensor(Shape{2, 3, S, S, S}, rng));
    add_param(h->set, "gamma", uniform_tensor(Shape{3}, rng, 0.5, 1.5));
    add_param(h->set, "beta", normal_tensor(Shape{3}, rng));
    return dot_problem(h, rng, [](DGraph& g, DSet& s) {
      return ops::instance_norm(g.parameter(s.at("x")), g.parameter(s.at("gamma")),
                                g.parameter(s.at("beta")), D(1e-5));
    });
  }});

  specs.push_back({"down2", [E](std::size_t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    add_param(h->set, "x", distinct_tensor(Shape{1, 2, E, E, E}, rng));
    return dot_problem(h, rng, [](DGraph& g, DSet& s) { return ops::down2(g.parameter(s.at("x"))); });
  }});

  specs.push_back({"up2", [S](std::size_t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    add_param(h->set, "x", normal_tensor(Shape{1, 2, S, S, S}, rng));
    return dot_problem(h, rng, [](DGraph& g, DSet& s) { return ops::up2(g.parameter(s.at("x"))); });
  }});

  specs.push_back({"concat_channels", [S](std::size_t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    add_param(h->set, "a", normal_tensor(Shape{2, 2, S, S, S}, rng));
    add_param(h->set, "b", normal_tensor(Shape{2, 3, S, S, S}, rng));
    return dot_problem(h, rng, [](DGraph& g, DSet& s) {
      return ops::concat_channels(g.parameter(s.at("a")), g.parameter(s.at("b")));
    });
  }});

  specs.push_back({"sum", [S](std::size_t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    add_param(h->set, "x", normal_tensor(Shape{1, 2, S, S, S}, rng));
    return dot_problem(h, rng, [](DGraph& g, DSet& s) { return ops::sum(g.parameter(s.at("x"))); });
  }});

  specs.push_back({"dice_loss", [S](std::size_t t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    const std::size_t K = 2 + t % 3;
    add_param(h->set, "logits", normal_tensor(Shape{2, K, S, S, S}, rng, 2.0));
    auto target = std::make_shared<LabelVolume>(random_labels(Shape{2, S, S, S}, K, rng));
    GradProblem p;
    p.owner = h;
    p.params = &h->set;
    p.loss = [h, target](DGraph& g) { return ops::dice_loss(g.parameter(h->set.at("logits")), *target, D(1e-5)); };
    return p;
  }});

  specs.push_back({"fuse_direct", [S](std::size_t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    add_param(h->set, "e_main", normal_tensor(Shape{1, 3, S, S, S}, rng));
    add_param(h->set, "x_aux", normal_tensor(Shape{1, 3, S, S, S}, rng));
    return dot_problem(h, rng, [](DGraph& g, DSet& s) {
      return fuse_direct(g.parameter(s.at("e_main")), g.parameter(s.at("x_aux")));
    });
  }});

  specs.push_back({"fuse_weighted", [S](std::size_t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    add_param(h->set, "e_main", normal_tensor(Shape{1, 3, S, S, S}, rng));
    add_param(h->set, "x_aux", normal_tensor(Shape{1, 3, S, S, S}, rng));
    auto fw = std::make_shared<BasicFusionWeightBlock<D>>(BasicFusionWeightBlock<D>::create(h->set, "fuse", 3));
    randomize(h->set, rng);
    return dot_problem(h, rng, [fw](DGraph& g, DSet& s) {
      return fuse_weighted(g.parameter(s.at("e_main")), g.parameter(s.at("x_aux")), *fw);
    });
  }});

  specs.push_back({"residual_plain", [S](std::size_t t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    const std::size_t in = 2, out = t % 2 ? 3 : 2;
    add_param(h->set, "x", normal_tensor(Shape{1, in, S, S, S}, rng));
    auto block = std::make_shared<BasicEncodingBlock<D>>(BasicEncodingBlock<D>::create(h->set, "enc", in, out));
    std::shared_ptr<BasicProjection<D>> proj;
    if (in != out) proj = std::make_shared<BasicProjection<D>>(BasicProjection<D>::create(h->set, "proj", in, out));
    randomize(h->set, rng);
    return dot_problem(h, rng, [block, proj](DGraph& g, DSet& s) {
      return residual_plain(g.parameter(s.at("x")), *block, proj.get());
    });
  }});

  specs.push_back({"encode_level", [S](std::size_t t, std::mt19937_64& rng) {
    auto h = std::make_shared<Holder>();
    const auto variant = static_cast<FusionVariant>(t % 3);
    add_param(h->set, "main", normal_tensor(Shape{1, 2, S, S, S}, rng));
    add_param(h->set, "aux", normal_tensor(Shape{1, 2, S, S, S}, rng));
    auto block = std::make_shared<BasicEncodingBlock<D>>(BasicEncodingBlock<D>::create(h->set, "enc", 2, 2));
    auto fw = std::make_shared<BasicFusionWeightBlock<D>>(BasicFusionWeightBlock<D>::create(h->set, "fuse", 2));
    randomize(h->set, rng);
    // Both outputs feed the loss so the aux path is checked too.
    return dot_problem(h, rng, [block, fw, variant](DGraph& g, DSet& s) {
      const auto out = encode_level(g.parameter(s.at("main")), std::optional<DVar>(g.parameter(s.at("aux"))),
                                    *block, fw.get(), variant);
      return out.aux_out ? ops::concat_channels(out.main_out, *out.aux_out) : out.main_out;
    });
  }});

  specs.push_back({"network", [](std::size_t t, std::mt19937_64& rng) {
    ModelConfig cfg;
    cfg.levels = 2;
    cfg.base_channels = 2;
    cfg.variant = static_cast<FusionVariant>(t % 3);
    cfg.aux_descends_fused = (t / 3) % 2 == 1;
    cfg.seed = rng();
    auto net = std::make_shared<BasicDualBranchSegNet<D>>(cfg);
    randomize(net->parameters(), rng);
    auto pre = std::make_shared<DTensor>(uniform_tensor(Shape{1, 1, 8, 8, 8}, rng, 0.0, 1.0));
    auto post = std::make_shared<DTensor>(uniform_tensor(Shape{1, 1, 8, 8, 8}, rng, 0.0, 1.5));
    auto target = std::make_shared<LabelVolume>(random_labels(Shape{1, 8, 8, 8}, 2, rng));
    GradProblem p;
    p.owner = net;
    p.params = &net->parameters();
    p.loss = [net, pre, post, target](DGraph& g) {
      return ops::dice_loss(net->forward(g, *pre, *post), *target, D(1e-5));
    };
    return p;
  }, true});

  return specs;
}

}  // namespace

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

double evaluate_loss(GradProblem& problem) {
  DGraph g(false);
  return problem.loss(g).value()[0];
}

namespace {

double shifted_loss(GradProblem& problem, BasicTensor<D>& v, std::size_t index, D saved, double delta) {
  v[index] = saved + delta;
  return evaluate_loss(problem);
}

}  // namespace

double finite_difference(GradProblem& problem, const std::string& name, std::size_t index,
                         double h) {
  auto& v = problem.params->at(name).value;
  const D saved = v[index];
  const double up = shifted_loss(problem, v, index, saved, h);
  const double down = shifted_loss(problem, v, index, saved, -h);
  v[index] = saved;
  return (up - down) / (2.0 * h);
}

OneSided one_sided_differences(GradProblem& problem, const std::string& name, std::size_t index,
                               double h) {
  auto& v = problem.params->at(name).value;
  const D saved = v[index];
  const double f0 = shifted_loss(problem, v, index, saved, 0.0);
  const double fp = shifted_loss(problem, v, index, saved, h);
  const double fp2 = shifted_loss(problem, v, index, saved, h / 2);
  const double fm = shifted_loss(problem, v, index, saved, -h);
  const double fm2 = shifted_loss(problem, v, index, saved, -h / 2);
  v[index] = saved;
  OneSided r;
  r.loss = f0;
  r.forward = 2.0 * (fp2 - f0) / (h / 2) - (fp - f0) / h;
  r.backward = 2.0 * (f0 - fm2) / (h / 2) - (f0 - fm) / h;
  r.central = (fp - fm) / (2.0 * h);
  return r;
}

void analytic_gradients(GradProblem& problem) {
  for (auto& [name, p] : *problem.params) p.value.clear_grad();
  DGraph g;
  g.backward(problem.loss(g));
}

namespace {

// A kink is flagged when the one-sided estimates differ by more than this
// fraction of the tolerance, plus the evaluation roundoff of the differences.
constexpr double kKinkFraction = 0.1;
constexpr double kRoundoffFactor = 100.0;

}  // namespace

void check_problem(GradProblem& problem, std::mt19937_64& rng, std::size_t elements, double h,
                   const GradcheckOptions& options, GradcheckResult& result) {
  analytic_gradients(problem);
  for (auto& [name, p] : *problem.params) {
    if (!p.trainable) continue;
    const std::size_t n = p.value.size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t e = 0; e < std::min(elements, n); ++e) {
      for (int attempt = 0; attempt < 8; ++attempt) {
        const std::size_t i = pick(rng);
        const double analytic = p.value.has_grad() ? p.value.grad()[i] : 0.0;
        const auto d = one_sided_differences(problem, name, i, h);
        const double roundoff = kRoundoffFactor * std::numeric_limits<double>::epsilon() *
                                std::max(1.0, std::abs(d.loss)) / h;
        const double gap = std::abs(d.forward - d.backward);
        if (gap > kKinkFraction * options.tolerance *
                          std::max({std::abs(d.forward), std::abs(d.backward), options.floor}) +
                      roundoff) {
          ++result.kinks;
          continue;
        }
        result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic, d.central, options.floor));
        ++result.checked;
        break;
      }
    }
  }
}

std::vector<GradcheckResult> run_gradient_suite(const GradcheckOptions& options) {
  if (options.size < 2) throw ConfigError("gradcheck size must be at least 2");
  if (options.trials == 0) throw ConfigError("gradcheck trials must be positive");
  std::vector<GradcheckResult> results;
  std::mt19937_64 rng(options.seed);
  for (const auto& spec : op_specs(options.size)) {
    GradcheckResult r;
    r.op = spec.name;
    for (std::size_t t = 0; t < options.trials; ++t) {
      auto problem = spec.build(t, rng);
      check_problem(problem, rng, options.elements_per_tensor, spec.network ? options.net_h : options.h,
                    options, r);
      ++r.trials;
    }
    r.passed = r.checked > 0 && r.max_rel_error <= options.tolerance;
    results.push_back(r);
  }
  return results;
}

}  // namespace resfuse
