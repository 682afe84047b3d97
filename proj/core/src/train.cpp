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


#include "resfuse/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include "json.hpp"
#include "resfuse/graph.hpp"
#include "resfuse/kernels.hpp"
#include "resfuse/optim.hpp"

namespace resfuse {
namespace {

std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Tensor as_volume(const Tensor& t, const char* what) {
  const auto& s = t.shape();
  if (s.rank() == 3) return Tensor(Shape{1, 1, s[0], s[1], s[2]}, std::vector<float>(t.values().begin(), t.values().end()));
  if (s.rank() == 4 && s[0] == 1) return Tensor(Shape{1, 1, s[1], s[2], s[3]}, std::vector<float>(t.values().begin(), t.values().end()));
  throw ShapeError("predict", "rank", std::string(what) + " must be [D,H,W] or [1,D,H,W], got " + s.str());
}

void write_pgm(const std::filesystem::path& path, std::size_t w, std::size_t h,
               const std::vector<std::uint8_t>& gray) {
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!out) throw Error("cannot write " + path.string());
}

void write_ppm(const std::filesystem::path& path, std::size_t w, std::size_t h,
               const std::vector<std::uint8_t>& rgb) {
  std::ofstream out(path, std::ios::binary);
  out << "P6\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw Error("cannot write " + path.string());
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

// Mid-axial slice: post (gray), lesion probability (gray) and an overlay
// with the prediction in red and the ground-truth contour in green.
void export_slice(const std::filesystem::path& dir, std::size_t id, const Sample& s,
                  const Tensor& probs, const LabelVolume& pred) {
  const std::size_t D = s.labels.shape[0], H = s.labels.shape[1], W = s.labels.shape[2];
  const std::size_t z = D / 2, plane = H * W, base = z * plane;
  float hi = 0.0f;
  for (std::size_t i = 0; i < plane; ++i) hi = std::max(hi, s.post[base + i]);
  if (hi <= 0.0f) hi = 1.0f;

  std::vector<std::uint8_t> post(plane), prob(plane), rgb(3 * plane);
  auto gt = [&](std::size_t y, std::size_t x) { return s.labels.values[base + y * W + x] == kLesionTissue; };
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t i = y * W + x;
      post[i] = to_byte(s.post[base + i] / hi);
      prob[i] = to_byte(probs[plane * D + base + i]);  // channel 1 of [1,2,D,H,W]
      bool contour = false;
      if (gt(y, x)) {
        contour = y == 0 || x == 0 || y + 1 == H || x + 1 == W || !gt(y - 1, x) || !gt(y + 1, x) ||
                  !gt(y, x - 1) || !gt(y, x + 1);
      }
      const std::uint8_t g = post[i] / 2;
      rgb[3 * i + 0] = pred.values[base + i] == 1 ? 255 : g;
      rgb[3 * i + 1] = contour ? 255 : g;
      rgb[3 * i + 2] = g;
    }
  }
  const std::string stem = "case_" + std::to_string(id);
  write_pgm(dir / (stem + "_post.pgm"), W, H, post);
  write_pgm(dir / (stem + "_prob.pgm"), W, H, prob);
  write_ppm(dir / (stem + "_overlay.ppm"), W, H, rgb);
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0f) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (post_only && variant != FusionVariant::kPlainResidual) {
    throw ConfigError("post-only training uses the plain variant");
  }
  model_config().validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.levels = levels;
  m.base_channels = base_channels;
  m.variant = variant;
  m.seed = seed;
  m.num_classes = 2;
  return m;
}

std::string TrainConfig::to_json() const {
  nlohmann::json j = {{"epochs", epochs},
                      {"batch_size", batch_size},
                      {"lr", lr},
                      {"seed", seed},
                      {"variant", resfuse::to_string(variant)},
                      {"post_only", post_only},
                      {"levels", levels},
                      {"base_channels", base_channels},
                      {"dataset", dataset.string()},
                      {"checkpoint", checkpoint.string()},
                      {"log", log.string()}};
  j["resume"] = resume ? nlohmann::json(resume->string()) : nlohmann::json(nullptr);
  return j.dump();
}

TrainData load_train_data(const std::filesystem::path& dataset) {
  const auto manifest = read_manifest(dataset);
  auto tr = load_split(dataset, manifest, "train");
  auto va = load_split(dataset, manifest, "val");
  return {std::move(tr.samples), std::move(va.samples), std::move(va.ids)};
}

TrainState initial_state(const TrainConfig& config) {
  config.validate();
  TrainState s{DualBranchSegNet(config.model_config()), {}, {}};
  s.meta.adam.lr = config.lr;
  s.meta.post_only = config.post_only;
  return s;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(mix(mix(seed) + epoch));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Batch make_batch(const std::vector<const Sample*>& samples, bool post_only) {
  if (samples.empty()) throw ConfigError("empty batch");
  const Shape& s0 = samples.front()->post.shape();
  if (s0.rank() != 4 || s0[0] != 1) throw ShapeError("make_batch", "rank", "expected [1,D,H,W], got " + s0.str());
  const std::size_t B = samples.size(), vox = s0.numel();
  Batch b{Tensor(Shape{B, 1, s0[1], s0[2], s0[3]}), Tensor(Shape{B, 1, s0[1], s0[2], s0[3]}),
          LabelVolume(Shape{B, s0[1], s0[2], s0[3]})};
  for (std::size_t i = 0; i < B; ++i) {
    const Sample& s = *samples[i];
    if (s.post.shape() != s0 || s.pre.shape() != s0) {
      throw ShapeError("make_batch", "shape", "sample " + std::to_string(i) + " is " + s.post.shape().str());
    }
    const Tensor& pre = post_only ? s.post : s.pre;
    std::copy(pre.data(), pre.data() + vox, b.pre.data() + i * vox);
    std::copy(s.post.data(), s.post.data() + vox, b.post.data() + i * vox);
    for (std::size_t v = 0; v < vox; ++v) b.target.values[i * vox + v] = s.labels.values[v] == kLesionTissue;
  }
  return b;
}

std::vector<MetricsRecord> train_in_memory(const TrainConfig& config, const TrainData& data,
                                           TrainState& state, const TrainHooks& hooks) {
  config.validate();
  if (!(state.net.config() == config.model_config())) {
    throw ConfigError("training state does not match the configured model");
  }
  if (data.train.empty() && config.epochs > state.meta.progress.epoch) {
    throw ConfigError("no training cases");
  }
  state.meta.adam.lr = config.lr;
  state.meta.post_only = config.post_only;
  std::vector<std::size_t> val_ids = data.val_ids;
  if (val_ids.empty()) {
    for (std::size_t i = 0; i < data.val.size(); ++i) val_ids.push_back(i);
  }

  std::vector<MetricsRecord> history;
  auto& params = state.net.parameters();
  while (state.meta.progress.epoch < config.epochs) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t epoch = state.meta.progress.epoch + 1;
    const auto order = epoch_order(config.seed, epoch, data.train.size());
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
      std::vector<const Sample*> picked;
      for (std::size_t k = at; k < std::min(order.size(), at + config.batch_size); ++k) {
        picked.push_back(&data.train[order[k]]);
      }
      const Batch b = make_batch(picked, config.post_only);
      float loss_value = 0.0f;
      try {
        Graph g;
        auto logits = state.net.forward(g, b.pre, b.post);
        auto loss = ops::dice_loss(logits, b.target);
        loss_value = loss.value()[0];
        g.backward(loss);
      } catch (const NonFiniteError& e) {
        throw DivergenceError("epoch " + std::to_string(epoch) + " step " +
                              std::to_string(state.meta.progress.step + 1) + ": " + e.what());
      }
      if (!std::isfinite(loss_value)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
      }
      adam_step(params, state.optimizer, state.meta.adam);
      params.zero_grad();
      loss_sum += loss_value;
      ++steps;
      ++state.meta.progress.step;
    }
    state.meta.progress.epoch = epoch;

    auto rec = evaluate(state.net, data.val, val_ids, {config.post_only, std::nullopt});
    rec.epoch = epoch;
    rec.loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const bool improved = rec.dsc > state.meta.progress.best_val_dsc;
    if (improved) {
      state.meta.progress.best_val_dsc = rec.dsc;
      state.meta.progress.best_epoch = epoch;
    }
    if (hooks.on_epoch) hooks.on_epoch(state, rec);
    if (improved && hooks.on_best) hooks.on_best(state);
    history.push_back(std::move(rec));
  }
  for (auto& [name, p] : params) p.value.clear_grad();
  return history;
}

TrainState train(const TrainConfig& config) {
  config.validate();
  if (config.checkpoint.empty()) throw ConfigError("checkpoint path is required");
  const TrainData data = load_train_data(config.dataset);

  TrainState state = initial_state(config);
  if (config.resume) load_checkpoint_into(*config.resume, state.net, &state.optimizer, &state.meta);

  std::ofstream log;
  if (!config.log.empty()) {
    log.open(config.log, config.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw Error("cannot open log " + config.log.string());
  }
  auto best_path = config.checkpoint;
  best_path += ".best";

  if (!config.resume) save_checkpoint(config.checkpoint, state.net, state.optimizer, state.meta);
  TrainHooks hooks;
  hooks.on_epoch = [&](const TrainState& s, const MetricsRecord& rec) {
    if (log.is_open()) log << rec.to_json_line() << "\n" << std::flush;
    save_checkpoint(config.checkpoint, s.net, s.optimizer, s.meta);
  };
  hooks.on_best = [&](const TrainState& s) { save_checkpoint(best_path, s.net, s.optimizer, s.meta); };
  train_in_memory(config, data, state, hooks);
  return state;
}

MetricsRecord evaluate(const DualBranchSegNet& net, const std::vector<Sample>& samples,
                       const std::vector<std::size_t>& ids, const EvalOptions& options) {
  if (ids.size() != samples.size()) throw ConfigError("evaluate: ids and samples differ in length");
  if (options.export_slices) std::filesystem::create_directories(*options.export_slices);
  MetricsRecord rec;
  rec.split = "val";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const Batch b = make_batch({&s}, options.post_only);
    const Tensor logits = net.infer(b.pre, b.post);
    const LabelVolume pred = kernels::argmax_channels(logits);  // [1,D,H,W]
    LabelVolume pred_mask(s.labels.shape), gt_mask(s.labels.shape);
    CaseMetrics cm;
    cm.case_id = ids[i];
    for (std::size_t v = 0; v < s.labels.size(); ++v) {
      const bool p = pred.values[v] == 1;
      pred_mask.values[v] = p;
      gt_mask.values[v] = s.labels.values[v] == kLesionTissue;
      if (s.labels.values[v] == kGlandTissue) {
        ++cm.gland_voxels;
        cm.gland_false_positives += p;
      }
    }
    cm.dsc = dice_coefficient(pred_mask, gt_mask);
    cm.recall = pixel_recall(pred_mask, gt_mask);
    rec.cases.push_back(cm);
    if (options.export_slices) {
      export_slice(*options.export_slices, ids[i], s, kernels::softmax_channels(logits), pred_mask);
    }
  }
  aggregate(rec);
  return rec;
}

LabelVolume predict(const DualBranchSegNet& net, const Tensor& pre, const Tensor& post,
                    bool post_only) {
  const Tensor p = as_volume(post, "post");
  const Tensor q = post_only ? p : as_volume(pre, "pre");
  if (q.shape() != p.shape()) {
    throw ShapeError("predict", "shape", "pre " + pre.shape().str() + " vs post " + post.shape().str());
  }
  const LabelVolume lab = kernels::argmax_channels(net.infer(q, p));
  const auto& s = p.shape();
  return LabelVolume(Shape{s[2], s[3], s[4]}, lab.values);
}

}  // namespace resfuse
