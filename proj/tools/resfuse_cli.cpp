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


// resfuse: data generation, training, evaluation, prediction, gradient
// checking and the variant comparison.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error. Failures print one
// line to stderr:  error kind=<kind> message=<JSON string>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "resfuse/checkpoint.hpp"
#include "resfuse/dataset.hpp"
#include "resfuse/errors.hpp"
#include "resfuse/experiment.hpp"
#include "resfuse/gradcheck.hpp"
#include "resfuse/phantom.hpp"
#include "resfuse/train.hpp"
#include "resfuse/volume_io.hpp"

namespace {

using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void fail_line(const char* kind, const std::string& message) {
  std::cerr << "error kind=" << kind << " message=" << json(message).dump() << std::endl;
}

void echo(const json& j) { std::cout << j.dump() << std::endl; }

std::vector<std::size_t> parse_size(const std::string& text) {
  std::vector<std::size_t> dims;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != part.size() || part.empty() || v <= 0) throw UsageError("--size expects D,H,W positive integers");
    dims.push_back(static_cast<std::size_t>(v));
  }
  if (dims.size() != 3) throw UsageError("--size expects D,H,W");
  return dims;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw resfuse::Error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json metrics_json(const resfuse::MetricsRecord& rec) {
  json cases = json::array();
  for (const auto& c : rec.cases) {
    cases.push_back({{"case", c.case_id},
                     {"dsc", c.dsc},
                     {"recall", c.recall},
                     {"gland_voxels", c.gland_voxels},
                     {"gland_false_positives", c.gland_false_positives}});
  }
  return {{"split", rec.split},
          {"dsc", rec.dsc},
          {"recall", rec.recall},
          {"gland_fp_rate", rec.gland_false_positive_rate()},
          {"cases", cases}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-branch residual fusion segmentation on synthetic phantoms", "resfuse"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a phantom dataset directory");
  std::string gen_out, gen_size, gen_spec;
  std::size_t gen_cases = 0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--cases", gen_cases, "Number of cases")->required();
  gen->add_option("--seed", gen_seed, "Dataset seed");
  auto* gen_size_opt = gen->add_option("--size", gen_size, "Volume size D,H,W");
  gen->add_option("--spec", gen_spec, "Phantom spec JSON file")->check(CLI::ExistingFile);

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  resfuse::TrainConfig tc;
  std::string tr_data, tr_variant = "weighted", tr_out, tr_log, tr_resume;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  auto* tr_variant_opt = tr->add_option("--variant", tr_variant, "plain|direct|weighted")
                             ->check(CLI::IsMember({"plain", "direct", "weighted"}));
  tr->add_option("--epochs", tc.epochs, "Total epochs");
  tr->add_option("--lr", tc.lr, "Adam learning rate");
  tr->add_option("--seed", tc.seed, "Seed for init and shuffling");
  tr->add_option("--out", tr_out, "Checkpoint path (best goes to <out>.best)")->required();
  tr->add_option("--log", tr_log, "JSONL metrics log")->required();
  tr->add_flag("--post-only", tc.post_only, "Post volume in both branches of a plain model");
  tr->add_option("--batch-size", tc.batch_size, "Batch size");
  tr->add_option("--levels", tc.levels, "Encoder levels");
  tr->add_option("--base-channels", tc.base_channels, "Channels at level 0");
  tr->add_option("--resume", tr_resume, "Continue from this checkpoint")->check(CLI::ExistingFile);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string ev_ckpt, ev_data, ev_split, ev_export;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--split", ev_split, "train|val")->required()->check(CLI::IsMember({"train", "val"}));
  ev->add_option("--export-slices", ev_export, "Write mid-slice PGM/PPM images here");

  // predict
  auto* pr = app.add_subcommand("predict", "Predict a label volume");
  std::string pr_ckpt, pr_pre, pr_post, pr_out;
  pr->add_option("--ckpt", pr_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  pr->add_option("--pre", pr_pre, "Pre-contrast volume")->required()->check(CLI::ExistingFile);
  pr->add_option("--post", pr_post, "Post-contrast volume")->required()->check(CLI::ExistingFile);
  pr->add_option("--out", pr_out, "Output label volume")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  resfuse::GradcheckOptions go;
  gc->add_option("--size", go.size, "Spatial extent of op inputs");
  gc->add_option("--trials", go.trials, "Random trials per op");
  gc->add_option("--seed", go.seed, "Seed");

  // compare
  auto* cmp = app.add_subcommand("compare", "Post-only vs direct vs weighted across seeds");
  resfuse::CompareConfig cc;
  std::string cmp_data, cmp_seeds, cmp_json;
  cmp->add_option("--data", cmp_data, "Dataset directory")->required();
  cmp->add_option("--seeds", cmp_seeds, "Comma-separated seeds")->required();
  cmp->add_option("--epochs", cc.epochs, "Epochs per run");
  cmp->add_option("--levels", cc.levels, "Encoder levels");
  cmp->add_option("--base-channels", cc.base_channels, "Channels at level 0");
  cmp->add_option("--noiseless-cases", cc.noiseless_cases, "Cases in the noiseless gland set");
  cmp->add_option("--json", cmp_json, "Also write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("usage", e.what());
    return 1;
  }

  try {
    if (*gen) {
      resfuse::PhantomSpec spec;
      if (!gen_spec.empty()) spec = resfuse::PhantomSpec::from_json(read_text(gen_spec));
      if (gen_size_opt->count()) {
        const auto d = parse_size(gen_size);
        spec.size = {d[0], d[1], d[2]};
      }
      const auto manifest = resfuse::make_manifest(spec, gen_cases, gen_seed);
      echo({{"command", "gen-data"},
            {"out", gen_out},
            {"cases", gen_cases},
            {"seed", gen_seed},
            {"spec", json::parse(spec.to_json())}});
      resfuse::write_dataset(gen_out, manifest);
    } else if (*tr) {
      if (tc.post_only) {
        if (tr_variant_opt->count() && tr_variant != "plain") {
          throw UsageError("--post-only trains the plain variant");
        }
        tr_variant = "plain";
      }
      tc.variant = resfuse::parse_fusion_variant(tr_variant);
      tc.dataset = tr_data;
      tc.checkpoint = tr_out;
      tc.log = tr_log;
      if (!tr_resume.empty()) tc.resume = tr_resume;
      tc.validate();
      echo({{"command", "train"}, {"config", json::parse(tc.to_json())}});
      const auto state = resfuse::train(tc);
      echo({{"epochs", state.meta.progress.epoch},
            {"steps", state.meta.progress.step},
            {"best_val_dsc", state.meta.progress.best_val_dsc},
            {"best_epoch", state.meta.progress.best_epoch}});
    } else if (*ev) {
      auto ck = resfuse::load_checkpoint(ev_ckpt);
      echo({{"command", "eval"},
            {"ckpt", ev_ckpt},
            {"data", ev_data},
            {"split", ev_split},
            {"export_slices", ev_export.empty() ? json(nullptr) : json(ev_export)},
            {"model", json::parse(ck.net.config().to_json())},
            {"post_only", ck.meta.post_only}});
      const auto manifest = resfuse::read_manifest(ev_data);
      const auto split = resfuse::load_split(ev_data, manifest, ev_split);
      resfuse::EvalOptions opts;
      opts.post_only = ck.meta.post_only;
      if (!ev_export.empty()) opts.export_slices = ev_export;
      auto rec = resfuse::evaluate(ck.net, split.samples, split.ids, opts);
      rec.split = ev_split;
      rec.epoch = ck.meta.progress.epoch;
      echo(metrics_json(rec));
    } else if (*pr) {
      auto ck = resfuse::load_checkpoint(pr_ckpt);
      echo({{"command", "predict"},
            {"ckpt", pr_ckpt},
            {"pre", pr_pre},
            {"post", pr_post},
            {"out", pr_out},
            {"post_only", ck.meta.post_only}});
      const auto pre = resfuse::read_float_volume(pr_pre);
      const auto post = resfuse::read_float_volume(pr_post);
      const auto labels = resfuse::predict(ck.net, pre, post, ck.meta.post_only);
      resfuse::write_volume(pr_out, labels);
      std::size_t lesion = 0;
      for (auto v : labels.values) lesion += v == 1;
      echo({{"voxels", labels.size()}, {"lesion_voxels", lesion}});
    } else if (*gc) {
      echo({{"command", "gradcheck"},
            {"size", go.size},
            {"trials", go.trials},
            {"seed", go.seed},
            {"h", go.h},
            {"net_h", go.net_h},
            {"tolerance", go.tolerance},
            {"floor", go.floor}});
      const auto results = resfuse::run_gradient_suite(go);
      bool ok = true;
      std::printf("%-16s %7s %8s %6s %14s  %s\n", "op", "trials", "checked", "kinks", "max_rel_error", "status");
      for (const auto& r : results) {
        std::printf("%-16s %7zu %8zu %6zu %14.3e  %s\n", r.op.c_str(), r.trials, r.checked, r.kinks,
                    r.max_rel_error, r.passed ? "ok" : "FAIL");
        ok = ok && r.passed;
      }
      std::fflush(stdout);
      if (!ok) {
        fail_line("gradcheck", "analytic and numeric gradients disagree beyond tolerance");
        return 2;
      }
    } else if (*cmp) {
      cc.seeds.clear();
      std::stringstream ss(cmp_seeds);
      std::string part;
      while (std::getline(ss, part, ',')) {
        try {
          std::size_t used = 0;
          cc.seeds.push_back(std::stoull(part, &used));
          if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
          throw UsageError("--seeds expects comma-separated unsigned integers");
        }
      }
      cc.validate();
      const auto manifest = resfuse::read_manifest(cmp_data);
      echo({{"command", "compare"}, {"data", cmp_data}, {"config", json::parse(cc.to_json())}});
      const auto data = resfuse::load_train_data(cmp_data);
      const auto fp_set = resfuse::generate_cases(resfuse::noiseless(manifest.spec), cc.noiseless_cases,
                                                  cc.noiseless_seed);
      const auto report = resfuse::run_comparison(cc, data, fp_set, [](const resfuse::CellResult& c) {
        std::cerr << "cell arm=" << c.arm << " seed=" << c.seed << " val_dsc=" << c.val_dsc
                  << " gland_fp=" << c.gland_fp_rate << " ms=" << c.train_ms << std::endl;
      });
      std::cout << report.to_json() << "\n" << report.to_table() << std::flush;
      if (!cmp_json.empty()) {
        std::ofstream out(cmp_json);
        out << report.to_json() << "\n";
        if (!out) throw resfuse::Error("cannot write " + cmp_json);
      }
    }
  } catch (const UsageError& e) {
    fail_line("usage", e.what());
    return 1;
  } catch (const resfuse::ConfigError& e) {
    fail_line("config", e.what());
    return 2;
  } catch (const resfuse::FormatError& e) {
    fail_line("format", e.what());
    return 2;
  } catch (const resfuse::ShapeError& e) {
    fail_line("shape", e.what());
    return 2;
  } catch (const resfuse::DivergenceError& e) {
    fail_line("divergence", e.what());
    return 2;
  } catch (const resfuse::PlacementError& e) {
    fail_line("placement", e.what());
    return 2;
  } catch (const std::exception& e) {
    fail_line("runtime", e.what());
    return 2;
  }
  return 0;
}
