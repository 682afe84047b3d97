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


#include "resfuse/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <string>

#include "binary_io.hpp"
#include "json.hpp"

namespace resfuse {
namespace {

constexpr char kMagic[4] = {'R', 'F', 'C', 'K'};
constexpr const char* kWhat = "checkpoint";

struct RawTensor {
  std::vector<std::size_t> dims;
  std::vector<float> data;
};

struct RawCheckpoint {
  ModelConfig model;
  CheckpointMeta meta;
  std::map<std::string, RawTensor> params;
  std::uint64_t step = 0;
  std::map<std::string, RawTensor> moments;  // "m:<name>" / "v:<name>"
};

void put_tensor(detail::ByteWriter& w, const std::string& name, const Shape& shape,
                std::span<const float> data) {
  w.str(name);
  if (shape.rank() > 255) throw FormatError("checkpoint: rank too large for " + name);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(shape.rank()));
  for (auto d : shape.dims()) {
    if (d > UINT32_MAX) throw FormatError("checkpoint: dimension too large for " + name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  }
  w.raw(data.data(), data.size() * sizeof(float));
}

std::pair<std::string, RawTensor> get_tensor(detail::ByteReader& r) {
  std::pair<std::string, RawTensor> out;
  out.first = r.str();
  const auto rank = r.get<std::uint8_t>();
  if (rank == 0) throw FormatError("checkpoint: zero rank for " + out.first);
  std::size_t n = 1;
  for (std::uint8_t i = 0; i < rank; ++i) {
    const auto d = r.get<std::uint32_t>();
    if (d == 0) throw FormatError("checkpoint: zero extent in " + out.first);
    out.second.dims.push_back(d);
    if (n > r.remaining() / d) throw FormatError("checkpoint: truncated");
    n *= d;
  }
  r.need(n * sizeof(float));
  out.second.data.resize(n);
  r.raw(out.second.data.data(), n * sizeof(float));
  return out;
}

nlohmann::json meta_json(const ModelConfig& model, const CheckpointMeta& meta) {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(model.to_json());
  j["adam"] = {{"lr", meta.adam.lr},
               {"beta1", meta.adam.beta1},
               {"beta2", meta.adam.beta2},
               {"eps", meta.adam.eps}};
  j["progress"] = {{"epoch", meta.progress.epoch},
                   {"step", meta.progress.step},
                   {"best_val_dsc", meta.progress.best_val_dsc},
                   {"best_epoch", meta.progress.best_epoch}};
  j["post_only"] = meta.post_only;
  return j;
}

RawCheckpoint parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto body = detail::check_crc(bytes, kWhat);
  detail::ByteReader r(body, kWhat);
  r.need(4);
  char magic[4];
  r.raw(magic, 4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointFormatVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }

  RawCheckpoint raw;
  try {
    const auto j = nlohmann::json::parse(r.str());
    raw.model = ModelConfig::from_json(j.at("model").dump());
    const auto& a = j.at("adam");
    raw.meta.adam = {a.at("lr").get<float>(), a.at("beta1").get<float>(),
                     a.at("beta2").get<float>(), a.at("eps").get<float>()};
    const auto& p = j.at("progress");
    raw.meta.progress = {p.at("epoch").get<std::size_t>(), p.at("step").get<std::uint64_t>(),
                         p.at("best_val_dsc").get<double>(), p.at("best_epoch").get<std::size_t>()};
    raw.meta.post_only = j.at("post_only").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad meta block: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: bad model config: ") + e.what());
  }

  const auto n_params = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    auto t = get_tensor(r);
    if (!raw.params.emplace(std::move(t)).second) {
      throw FormatError("checkpoint: duplicate parameter");
    }
  }
  raw.step = r.get<std::uint64_t>();
  const auto n_moments = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_moments; ++i) {
    auto t = get_tensor(r);
    if (!raw.moments.emplace(std::move(t)).second) {
      throw FormatError("checkpoint: duplicate optimizer entry");
    }
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return raw;
}

// Checks raw against net and the net's parameter shapes; throws before any
// mutation.
void validate_against(const RawCheckpoint& raw, const DualBranchSegNet& net) {
  const auto& cfg = net.config();
  if (!(raw.model == cfg)) {
    std::string field = "config";
    if (raw.model.levels != cfg.levels) field = "levels";
    else if (raw.model.base_channels != cfg.base_channels) field = "base_channels";
    else if (raw.model.variant != cfg.variant) field = "variant";
    else if (raw.model.num_classes != cfg.num_classes) field = "num_classes";
    throw ConfigError("checkpoint: model " + field + " differs from target net (stored " +
                      raw.model.to_json() + ", target " + cfg.to_json() + ")");
  }
  const auto& params = net.parameters();
  if (raw.params.size() != params.size()) {
    throw FormatError("checkpoint: stores " + std::to_string(raw.params.size()) +
                      " parameters, net has " + std::to_string(params.size()));
  }
  for (const auto& [name, t] : raw.params) {
    const auto* p = params.find(name);
    if (!p) throw ConfigError("checkpoint: unknown parameter " + name);
    if (p->value.shape().dims() != t.dims) {
      throw ConfigError("checkpoint: shape mismatch for " + name);
    }
  }
  for (const auto& [key, t] : raw.moments) {
    if (key.size() < 3 || (key[0] != 'm' && key[0] != 'v') || key[1] != ':') {
      throw FormatError("checkpoint: bad optimizer entry " + key);
    }
    const auto name = key.substr(2);
    const auto* p = params.find(name);
    if (!p) throw ConfigError("checkpoint: optimizer entry for unknown parameter " + name);
    if (p->value.shape().dims() != t.dims) {
      throw ConfigError("checkpoint: optimizer shape mismatch for " + name);
    }
    const std::string other = std::string(key[0] == 'm' ? "v:" : "m:") + name;
    if (!raw.moments.count(other)) throw FormatError("checkpoint: unpaired optimizer entry " + key);
  }
}

void apply(RawCheckpoint&& raw, DualBranchSegNet& net, AdamState* optimizer, CheckpointMeta* meta) {
  auto& params = net.parameters();
  for (auto& [name, t] : raw.params) {
    auto& v = params.at(name).value;
    std::copy(t.data.begin(), t.data.end(), v.data());
    v.clear_grad();
  }
  if (optimizer) {
    optimizer->step = raw.step;
    optimizer->moments.clear();
    for (auto& [key, t] : raw.moments) {
      auto& m = optimizer->moments[key.substr(2)];
      (key[0] == 'm' ? m.m : m.v) = std::move(t.data);
    }
  }
  if (meta) *meta = raw.meta;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const DualBranchSegNet& net, const AdamState& optimizer,
                                            const CheckpointMeta& meta) {
  detail::ByteWriter w;
  w.raw(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointFormatVersion);
  w.str(meta_json(net.config(), meta).dump());

  const auto& params = net.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) put_tensor(w, name, p.value.shape(), p.value.values());

  w.put<std::uint64_t>(optimizer.step);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(2 * optimizer.moments.size()));
  // "m:" sorts before "v:", so all first moments precede all second moments.
  for (const char* tag : {"m:", "v:"}) {
    for (const auto& [name, mom] : optimizer.moments) {
      const auto* p = params.find(name);
      if (!p) throw ConfigError("optimizer state names unknown parameter " + name);
      const auto& data = tag[0] == 'm' ? mom.m : mom.v;
      if (data.size() != p->value.size()) {
        throw ConfigError("optimizer moment size mismatch for " + name);
      }
      put_tensor(w, tag + name, p->value.shape(), data);
    }
  }
  w.finish_with_crc();
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  auto raw = parse(bytes);
  Checkpoint ck{DualBranchSegNet(raw.model), {}, {}};
  validate_against(raw, ck.net);
  apply(std::move(raw), ck.net, &ck.optimizer, &ck.meta);
  return ck;
}

void decode_checkpoint_into(std::span<const std::uint8_t> bytes, DualBranchSegNet& net,
                            AdamState* optimizer, CheckpointMeta* meta) {
  auto raw = parse(bytes);
  validate_against(raw, net);
  apply(std::move(raw), net, optimizer, meta);
}

void save_checkpoint(const std::filesystem::path& path, const DualBranchSegNet& net,
                     const AdamState& optimizer, const CheckpointMeta& meta) {
  detail::write_file(path, encode_checkpoint(net, optimizer, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

void load_checkpoint_into(const std::filesystem::path& path, DualBranchSegNet& net,
                          AdamState* optimizer, CheckpointMeta* meta) {
  decode_checkpoint_into(detail::read_file(path), net, optimizer, meta);
}

}  // namespace resfuse
