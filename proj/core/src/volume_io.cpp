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

#include "resfuse/volume_io.hpp"

#include <limits>
#include <string>

#include "binary_io.hpp"

namespace resfuse {
namespace {

constexpr char kMagic[4] = {'R', 'F', 'S', 'V'};
constexpr std::uint8_t kFloat32 = 0;
constexpr std::uint8_t kUint8 = 1;
constexpr std::size_t kMaxRank = 8;

void put_header(detail::ByteWriter& w, std::uint8_t dtype, const Shape& shape) {
  if (shape.rank() == 0 || shape.rank() > kMaxRank) {
    throw FormatError("volume: rank " + std::to_string(shape.rank()) + " not encodable");
  }
  w.raw(kMagic, 4);
  w.put<std::uint32_t>(kVolumeFormatVersion);
  w.put<std::uint8_t>(dtype);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(shape.rank()));
  for (auto d : shape.dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw FormatError("volume: dimension " + std::to_string(d) + " overflows u32");
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  }
}

}  // namespace

std::vector<std::uint8_t> encode_volume(const Tensor& t) {
  detail::ByteWriter w;
  put_header(w, kFloat32, t.shape());
  w.raw(t.data(), t.size() * sizeof(float));
  w.finish_with_crc();
  return w.take();
}

std::vector<std::uint8_t> encode_volume(const LabelVolume& labels) {
  detail::ByteWriter w;
  put_header(w, kUint8, labels.shape);
  w.raw(labels.values.data(), labels.values.size());
  w.finish_with_crc();
  return w.take();
}

Volume decode_volume(std::span<const std::uint8_t> bytes) {
  const std::string what = "volume";
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("volume: bad magic");
  }
  const auto body = detail::check_crc(bytes, what);
  detail::ByteReader r(body, what);
  char magic[4];
  r.raw(magic, 4);
  const auto version = r.get<std::uint32_t>();
  if (version != kVolumeFormatVersion) {
    throw FormatError("volume: unsupported version " + std::to_string(version));
  }
  const auto dtype = r.get<std::uint8_t>();
  if (dtype != kFloat32 && dtype != kUint8) {
    throw FormatError("volume: unknown dtype code " + std::to_string(dtype));
  }
  const auto rank = r.get<std::uint8_t>();
  if (rank == 0 || rank > kMaxRank) throw FormatError("volume: bad rank " + std::to_string(rank));
  std::vector<std::size_t> dims(rank);
  std::size_t count = 1;
  const std::size_t elem = dtype == kFloat32 ? sizeof(float) : 1;
  for (auto& d : dims) {
    d = r.get<std::uint32_t>();
    if (d == 0) throw FormatError("volume: zero extent");
    if (count > std::numeric_limits<std::size_t>::max() / elem / d) {
      throw FormatError("volume: dimension product overflows");
    }
    count *= d;
  }
  if (r.remaining() != count * elem) {
    throw FormatError(r.remaining() < count * elem ? "volume: truncated"
                                                   : "volume: trailing bytes after data");
  }
  Shape shape(std::move(dims));
  if (dtype == kFloat32) {
    std::vector<float> data(count);
    r.raw(data.data(), count * sizeof(float));
    return Tensor(std::move(shape), std::move(data));
  }
  std::vector<std::uint8_t> data(count);
  r.raw(data.data(), count);
  return LabelVolume(std::move(shape), std::move(data));
}

void write_volume(const std::filesystem::path& path, const Tensor& t) {
  detail::write_file(path, encode_volume(t));
}

void write_volume(const std::filesystem::path& path, const LabelVolume& labels) {
  detail::write_file(path, encode_volume(labels));
}

Volume read_volume(const std::filesystem::path& path) {
  return decode_volume(detail::read_file(path));
}

Tensor read_float_volume(const std::filesystem::path& path) {
  auto v = read_volume(path);
  if (auto* t = std::get_if<Tensor>(&v)) return std::move(*t);
  throw FormatError(path.string() + ": expected a float32 volume");
}

LabelVolume read_label_volume(const std::filesystem::path& path) {
  auto v = read_volume(path);
  if (auto* l = std::get_if<LabelVolume>(&v)) return std::move(*l);
  throw FormatError(path.string() + ": expected a uint8 label volume");
}

}  // namespace resfuse
