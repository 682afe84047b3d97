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


// Acceptance run: prints one "criterion N: PASS|FAIL ..." line per criterion
// and exits non-zero if any fails. Arguments select a subset, e.g. "1 4 8".

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>

#include "oracles.hpp"
#include "resfuse/checkpoint.hpp"
#include "resfuse/experiment.hpp"
#include "resfuse/fusion.hpp"
#include "resfuse/gradcheck.hpp"
#include "resfuse/kernels.hpp"
#include "resfuse/metrics.hpp"
#include "resfuse/network.hpp"
#include "resfuse/train.hpp"
#include "test_util.hpp"

namespace {

using namespace resfuse;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto results = run_gradient_suite(GradcheckOptions{});
  const double secs = seconds_since(t0);
  bool ok = secs < 120.0;
  double worst = 0.0;
  std::string worst_op, failed;
  for (const auto& r : results) {
    std::printf("  %-16s trials=%zu checked=%zu kinks=%zu max_rel_error=%.3e\n", r.op.c_str(), r.trials, r.checked,
                r.kinks, r.max_rel_error);
    ok = ok && r.passed && r.trials == 100;
    if (!r.passed) failed += " " + r.op;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_op = r.op;
    }
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu ops, worst %.3e (%s), %.1f s%s%s", results.size(), worst, worst_op.c_str(), secs,
                failed.empty() ? "" : ", failed:", failed.c_str());
  return {ok, buf};
}

double scaled(const Tensor& got, const oracle::Vol& want) { return testutil::max_scaled_error(got, want); }

Outcome oracle_equivalence() {
  std::mt19937_64 rng(2026);
  std::map<std::string, double> worst;
  std::map<std::string, int> count;
  auto note = [&](const std::string& op, double e) {
    worst[op] = std::max(worst[op], e);
    ++count[op];
  };
  for (int t = 0; t < 100; ++t) {
    const std::size_t cin = 1 + t % 3, cout = 1 + (t / 3) % 3;
    const Shape xs{1 + std::size_t(t % 2), cin, 3 + std::size_t(t % 4), 4, 4 + 4 * std::size_t(t % 3)};
    const auto x = testutil::random_tensor<float>(xs, rng);

    const std::size_t stride = t % 4 == 3 ? 2 : 1;
    const auto w = testutil::random_tensor<float>(Shape{cout, cin, 3, 3, 3}, rng);
    const auto b = testutil::random_tensor<float>(Shape{cout}, rng);
    const auto bv = testutil::to_vec(b);
    note("conv3d", scaled(kernels::conv3d_forward<float>(x, w, &b, stride, 1),
                          oracle::conv3d(testutil::to_vol(x), testutil::to_vec(w), cout, 3, &bv, stride, 1)));

    const auto w1 = testutil::random_tensor<float>(Shape{cout, cin, 1, 1, 1}, rng);
    note("conv1x1x1", scaled(kernels::conv3d_forward<float>(x, w1, &b, 1, 0),
                             oracle::matvec(testutil::to_vol(x), testutil::to_vec(w1), cout, &bv)));

    const auto g = testutil::random_tensor<float>(Shape{cin}, rng), be = testutil::random_tensor<float>(Shape{cin}, rng);
    note("instance_norm",
         scaled(kernels::instance_norm_forward<float>(x, g.values(), be.values(), 1e-5f, nullptr),
                oracle::instance_norm(testutil::to_vol(x), testutil::to_vec(g), testutil::to_vec(be), 1e-5)));

    const auto xe = testutil::random_tensor<float>(Shape{1, cin, 2 + 2 * std::size_t(t % 2), 4, 2}, rng);
    note("resample", std::max(scaled(kernels::max_pool2_forward<float>(xe, nullptr), oracle::max_pool2(testutil::to_vol(xe))),
                              scaled(kernels::upsample2_forward<float>(xe), oracle::upsample2(testutil::to_vol(xe)))));

    ParameterSet params;
    const auto fw = FusionWeightBlock::create(params, "fw", cin);
    testutil::randomize(params, rng);
    const auto em = testutil::random_tensor<float>(xs, rng);
    Graph graph;
    auto vm = graph.constant(em), va = graph.constant(x);
    oracle::Vol direct = testutil::to_vol(em);
    for (std::size_t i = 0; i < direct.v.size(); ++i) direct.v[i] += x[i];
    note("fuse_direct", scaled(fuse_direct(vm, va).value(), direct));
    const auto fb = testutil::to_vec(fw.bias->value);
    oracle::Vol weighted = oracle::matvec(testutil::to_vol(x), testutil::to_vec(fw.weight->value), cin, &fb);
    for (std::size_t i = 0; i < weighted.v.size(); ++i) weighted.v[i] += em[i];
    note("fuse_weighted", scaled(fuse_weighted(vm, va, fw).value(), weighted));

    const std::size_t classes = 2 + t % 3;
    const auto logits = testutil::random_tensor<float>(Shape{2, classes, 3, 4, 4}, rng, 2.0);
    LabelVolume target(Shape{2, 3, 4, 4});
    for (auto& v : target.values) v = static_cast<std::uint8_t>(rng() % classes);
    note("dice_loss", std::abs(kernels::soft_dice_loss<float>(logits, target, 1e-5f, {}) -
                               oracle::dice_loss(testutil::to_vol(logits), target.values, 1e-5)));
  }
  bool ok = true;
  std::string detail;
  for (const auto& [op, e] : worst) {
    std::printf("  %-14s instances=%d max_error=%.3e\n", op.c_str(), count[op], e);
    ok = ok && e <= 1e-5 && count[op] >= 100;
  }
  return {ok, std::to_string(worst.size()) + " ops x 100 instances, tolerance 1e-5"};
}

Outcome reduction_chain() {
  std::mt19937_64 rng(7);
  double identity_err = 0.0;
  bool zero_exact = true, plain_invariant = true;
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = 1 + t % 8;
    ParameterSet params;
    const auto block = EncodingBlock::create(params, "enc", c, c);
    testutil::randomize(params, rng);
    const auto ident = FusionWeightBlock::create(params, "id", c);
    const auto zero = FusionWeightBlock::create(params, "zero", c, true);
    const auto xm = testutil::random_tensor<float>(Shape{1, c, 4, 4, 4}, rng);
    const auto xa = testutil::random_tensor<float>(Shape{1, c, 4, 4, 4}, rng);
    Graph g;
    auto m = g.constant(xm), a = g.constant(xa);
    const auto w = encode_level<float>(m, a, block, &ident, FusionVariant::kWeightedAdd).main_out.value();
    const auto d = encode_level<float>(m, a, block, nullptr, FusionVariant::kDirectAdd).main_out.value();
    for (std::size_t i = 0; i < w.size(); ++i) identity_err = std::max(identity_err, double(std::abs(w[i] - d[i])));
    const auto z = encode_level<float>(m, a, block, &zero, FusionVariant::kWeightedAdd).main_out.value();
    const auto main_only = ops::relu(block.apply(m)).value();
    zero_exact = zero_exact && std::equal(z.values().begin(), z.values().end(), main_only.values().begin());
  }
  for (int t = 0; t < 20; ++t) {
    ModelConfig cfg;
    cfg.levels = 2 + t % 2;
    cfg.base_channels = 2;
    cfg.variant = FusionVariant::kPlainResidual;
    DualBranchSegNet net(cfg);
    testutil::randomize(net.parameters(), rng);
    const auto post = testutil::random_tensor<float>(Shape{1, 1, 8, 8, 8}, rng);
    const auto l1 = net.infer(testutil::random_tensor<float>(post.shape(), rng), post);
    const auto l2 = net.infer(testutil::random_tensor<float>(post.shape(), rng), post);
    plain_invariant = plain_invariant && std::equal(l1.values().begin(), l1.values().end(), l2.values().begin());
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "identity vs direct max |diff| %.3e; zero weights exact: %s; plain invariant: %s",
                identity_err, zero_exact ? "yes" : "no", plain_invariant ? "yes" : "no");
  return {identity_err <= 1e-6 && zero_exact && plain_invariant, buf};
}

Outcome parameter_overhead() {
  bool exact = true;
  for (std::size_t levels = 2; levels <= 5; ++levels) {
    for (std::size_t base : {1, 2, 4, 8, 16}) {
      ModelConfig cfg;
      cfg.levels = levels;
      cfg.base_channels = base;
      cfg.variant = FusionVariant::kPlainResidual;
      const auto plain = DualBranchSegNet(cfg).param_count();
      cfg.variant = FusionVariant::kWeightedAdd;
      const auto weighted = DualBranchSegNet(cfg).param_count();
      std::size_t expect = 0;
      for (std::size_t l = 0; l < levels; ++l) expect += cfg.channels(l) * cfg.channels(l) + cfg.channels(l);
      exact = exact && weighted - plain == expect;
    }
  }
  ModelConfig def;
  def.variant = FusionVariant::kPlainResidual;
  const auto plain = DualBranchSegNet(def).param_count();
  def.variant = FusionVariant::kWeightedAdd;
  const auto weighted = DualBranchSegNet(def).param_count();
  const double ratio = double(weighted - plain) / double(plain);
  char buf[200];
  std::snprintf(buf, sizeof buf, "default: weighted %zu, plain %zu, overhead %zu = %.3f%%; formula exact on 20 configs: %s",
                weighted, plain, weighted - plain, 100.0 * ratio, exact ? "yes" : "no");
  return {exact && ratio < 0.05, buf};
}

struct Experiment {
  bool ran = false;
  ComparisonReport report;
  double seconds = 0.0;
};

Experiment& experiment() {
  static Experiment e;
  if (e.ran) return e;
  const auto t0 = Clock::now();
  const PhantomSpec spec;  // default: 32^3
  auto cases = generate_cases(spec, 160, 0);
  TrainData data;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (i < 120) {
      data.train.push_back(std::move(cases[i]));
    } else {
      data.val.push_back(std::move(cases[i]));
      data.val_ids.push_back(i);
    }
  }
  const CompareConfig cfg;
  const auto clean = generate_cases(noiseless(spec), cfg.noiseless_cases, cfg.noiseless_seed);
  std::printf("  comparison: %s\n", cfg.to_json().c_str());
  e.report = run_comparison(cfg, data, clean, [](const CellResult& c) {
    std::printf("  %-9s seed=%llu val_dsc=%.4f recall=%.4f gland_fp=%.4f %.0f s\n", c.arm.c_str(),
                static_cast<unsigned long long>(c.seed), c.val_dsc, c.val_recall, c.gland_fp_rate, c.train_ms / 1000.0);
    std::fflush(stdout);
  });
  e.seconds = seconds_since(t0);
  e.ran = true;
  std::printf("%s", e.report.to_table().c_str());
  return e;
}

Outcome separation() {
  const auto& e = experiment();
  const double w = 100.0 * e.report.arm("weighted").dsc_median;
  const double p = 100.0 * e.report.arm("post-only").dsc_median;
  const double d = 100.0 * e.report.arm("direct").dsc_median;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "median val DSC weighted %.2f, post-only %.2f (gap %.2f, need >= 5.00), direct %.2f "
                "(weighted - direct %.2f, need >= -0.50); %.1f min (budget 30)",
                w, p, w - p, d, w - d, e.seconds / 60.0);
  return {w >= p + 5.0 && w >= d - 0.5 && e.seconds <= 1800.0, buf};
}

Outcome gland_false_positives() {
  const auto& e = experiment();
  const double p = e.report.arm("post-only").gland_fp_median;
  const double w = e.report.arm("weighted").gland_fp_median;
  char buf[200];
  std::snprintf(buf, sizeof buf, "median gland voxels marked lesion: post-only %.1f%% (need > 30%%), weighted %.1f%% (need < 10%%)",
                100.0 * p, 100.0 * w);
  return {p > 0.30 && w < 0.10, buf};
}

Outcome determinism() {
  const auto data = testutil::tiny_data(4, 2, 19);
  auto cfg = testutil::tiny_train_config(FusionVariant::kWeightedAdd);
  cfg.epochs = 10;
  auto snap = [](const TrainState& s) { return encode_checkpoint(s.net, s.optimizer, s.meta); };

  auto a = initial_state(cfg);
  train_in_memory(cfg, data, a);
  auto b = initial_state(cfg);
  train_in_memory(cfg, data, b);
  const bool same_seed = snap(a) == snap(b);

  const auto dir = testutil::temp_dir("acceptance");
  save_checkpoint(dir / "a.rfck", a.net, a.optimizer, a.meta);
  const auto loaded = load_checkpoint(dir / "a.rfck");
  save_checkpoint(dir / "b.rfck", loaded.net, loaded.optimizer, loaded.meta);
  const bool round_trip = snap(a) == encode_checkpoint(loaded.net, loaded.optimizer, loaded.meta) &&
                          std::filesystem::file_size(dir / "a.rfck") == std::filesystem::file_size(dir / "b.rfck") &&
                          encode_checkpoint(load_checkpoint(dir / "b.rfck").net, loaded.optimizer, loaded.meta) == snap(a);

  auto half_cfg = cfg;
  half_cfg.epochs = 5;
  auto half = initial_state(half_cfg);
  train_in_memory(half_cfg, data, half);
  save_checkpoint(dir / "half.rfck", half.net, half.optimizer, half.meta);
  auto resumed = initial_state(cfg);
  load_checkpoint_into(dir / "half.rfck", resumed.net, &resumed.optimizer, &resumed.meta);
  train_in_memory(cfg, data, resumed);
  const bool resume = snap(resumed) == snap(a);

  std::string detail = std::string("same-seed checkpoints identical: ") + (same_seed ? "yes" : "no") +
                       "; save/load byte-identical: " + (round_trip ? "yes" : "no") +
                       "; 5+5 == 10 epochs: " + (resume ? "yes" : "no");
  return {same_seed && round_trip && resume, detail};
}

Outcome metric_identities() {
  std::mt19937_64 rng(88);
  std::size_t violations = 0;
  for (int t = 0; t < 1000; ++t) {
    const Shape s{2 + rng() % 6, 2 + rng() % 6, 2 + rng() % 6};
    const auto p = testutil::random_mask(s, rng, t % 20 == 0 ? 0.0 : 0.3);
    const auto g = testutil::random_mask(s, rng, t % 25 == 0 ? 0.0 : 0.3);
    const double d = dice_coefficient(p, g), r = pixel_recall(p, g);
    violations += d < 0.0 || d > 1.0 || r < 0.0 || r > 1.0;
    violations += d != dice_coefficient(g, p);
    violations += std::abs(d - oracle::dice(p.values, g.values)) > 1e-12;
    violations += std::abs(r - oracle::recall(p.values, g.values)) > 1e-12;
    violations += dice_coefficient(p, p) != 1.0;

    // Half overlap: equal-size masks sharing half their voxels.
    const std::size_t n = s.numel() / 4 * 2;
    std::vector<std::size_t> idx(s.numel());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    LabelVolume hp(s), hg(s);
    for (std::size_t i = 0; i < n; ++i) hg.values[idx[i]] = 1;
    for (std::size_t i = n / 2; i < n + n / 2; ++i) hp.values[idx[i]] = 1;
    violations += n > 0 && dice_coefficient(hp, hg) != 0.5;

    LabelVolume labels(s);
    for (auto& v : labels.values) v = static_cast<std::uint8_t>(rng() % 4);
    const auto regions = compose_regions(labels);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      violations += regions.enhancing.values[i] > regions.tumor_core.values[i];
      violations += regions.tumor_core.values[i] > regions.whole_tumor.values[i];
      violations += bool(regions.whole_tumor.values[i]) != (labels.values[i] != 0);
    }
  }
  const LabelVolume empty(Shape{2, 2, 2}), full(Shape{2, 2, 2}, 1);
  violations += dice_coefficient(empty, empty) != 1.0;
  violations += dice_coefficient(full, empty) != 0.0;
  violations += pixel_recall(full, empty) != 1.0;
  violations += pixel_recall(empty, full) != 0.0;
  return {violations == 0, "1000 random masks and label maps, " + std::to_string(violations) + " violations"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"oracle equivalence", oracle_equivalence},
      {"reduction chain", reduction_chain},
      {"parameter overhead", parameter_overhead},
      {"phantom separation", separation},
      {"gland false positives", gland_false_positives},
      {"determinism and persistence", determinism},
      {"metric identities", metric_identities},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));
  int failures = 0;
  std::vector<std::string> lines;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!selected.empty() && !selected.count(k + 1)) continue;
    std::printf("== criterion %zu: %s\n", k + 1, criteria[k].first.c_str());
    std::fflush(stdout);
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    lines.push_back("criterion " + std::to_string(k + 1) + ": " + (o.pass ? "PASS" : "FAIL") + " " +
                    criteria[k].first + " -- " + o.detail);
    std::printf("%s\n", lines.back().c_str());
    std::fflush(stdout);
  }
  std::printf("\nsummary\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  return failures == 0 ? 0 : 1;
}
