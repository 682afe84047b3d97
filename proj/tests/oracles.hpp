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


// Brute-force reference implementations used only by the tests. Written
// from the definitions, in double, with no shared code with the library.

#ifndef RESFUSE_TESTS_ORACLES_HPP_
#define RESFUSE_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

namespace oracle {

struct Vol {
  std::size_t n = 0, c = 0, d = 0, h = 0, w = 0;
  std::vector<double> v;

  Vol() = default;
  Vol(std::size_t n_, std::size_t c_, std::size_t d_, std::size_t h_, std::size_t w_)
      : n(n_), c(c_), d(d_), h(h_), w(w_), v(n_ * c_ * d_ * h_ * w_, 0.0) {}
  double& at(std::size_t a, std::size_t b, std::size_t z, std::size_t y, std::size_t x) {
    return v[(((a * c + b) * d + z) * h + y) * w + x];
  }
  double at(std::size_t a, std::size_t b, std::size_t z, std::size_t y, std::size_t x) const {
    return v[(((a * c + b) * d + z) * h + y) * w + x];
  }
};

// weight [co][ci][k][k][k] flattened; zero padding.
inline Vol conv3d(const Vol& x, const std::vector<double>& weight, std::size_t cout, std::size_t k,
                  const std::vector<double>* bias, std::size_t stride, std::size_t pad) {
  const std::size_t od = (x.d + 2 * pad - k) / stride + 1;
  const std::size_t oh = (x.h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (x.w + 2 * pad - k) / stride + 1;
  Vol y(x.n, cout, od, oh, ow);
  for (std::size_t n = 0; n < x.n; ++n)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t r = 0; r < oh; ++r)
          for (std::size_t q = 0; q < ow; ++q) {
            double acc = bias ? (*bias)[co] : 0.0;
            for (std::size_t ci = 0; ci < x.c; ++ci)
              for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = 0; b < k; ++b)
                  for (std::size_t e = 0; e < k; ++e) {
                    const long iz = static_cast<long>(z * stride + a) - static_cast<long>(pad);
                    const long iy = static_cast<long>(r * stride + b) - static_cast<long>(pad);
                    const long ix = static_cast<long>(q * stride + e) - static_cast<long>(pad);
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= static_cast<long>(x.d) ||
                        iy >= static_cast<long>(x.h) || ix >= static_cast<long>(x.w))
                      continue;
                    acc += weight[(((co * x.c + ci) * k + a) * k + b) * k + e] *
                           x.at(n, ci, static_cast<std::size_t>(iz), static_cast<std::size_t>(iy),
                                static_cast<std::size_t>(ix));
                  }
            y.at(n, co, z, r, q) = acc;
          }
  return y;
}

// Per-voxel matrix-vector product: y[:, voxel] = W x[:, voxel] + b.
inline Vol matvec(const Vol& x, const std::vector<double>& w, std::size_t cout,
                  const std::vector<double>* bias) {
  Vol y(x.n, cout, x.d, x.h, x.w);
  for (std::size_t n = 0; n < x.n; ++n)
    for (std::size_t z = 0; z < x.d; ++z)
      for (std::size_t r = 0; r < x.h; ++r)
        for (std::size_t q = 0; q < x.w; ++q)
          for (std::size_t o = 0; o < cout; ++o) {
            double acc = bias ? (*bias)[o] : 0.0;
            for (std::size_t i = 0; i < x.c; ++i) acc += w[o * x.c + i] * x.at(n, i, z, r, q);
            y.at(n, o, z, r, q) = acc;
          }
  return y;
}

// Two-pass mean / biased variance per (sample, channel).
inline Vol instance_norm(const Vol& x, const std::vector<double>& gamma,
                         const std::vector<double>& beta, double eps) {
  Vol y = x;
  const std::size_t m = x.d * x.h * x.w;
  for (std::size_t n = 0; n < x.n; ++n)
    for (std::size_t c = 0; c < x.c; ++c) {
      const double* s = &x.v[(n * x.c + c) * m];
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += s[i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) var += (s[i] - mean) * (s[i] - mean);
      var /= static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        y.v[(n * x.c + c) * m + i] = gamma[c] * (s[i] - mean) / std::sqrt(var + eps) + beta[c];
    }
  return y;
}

inline Vol max_pool2(const Vol& x) {
  Vol y(x.n, x.c, x.d / 2, x.h / 2, x.w / 2);
  for (std::size_t n = 0; n < x.n; ++n)
    for (std::size_t c = 0; c < x.c; ++c)
      for (std::size_t z = 0; z < y.d; ++z)
        for (std::size_t r = 0; r < y.h; ++r)
          for (std::size_t q = 0; q < y.w; ++q) {
            double best = -INFINITY;
            for (std::size_t a = 0; a < 2; ++a)
              for (std::size_t b = 0; b < 2; ++b)
                for (std::size_t e = 0; e < 2; ++e)
                  best = std::max(best, x.at(n, c, 2 * z + a, 2 * r + b, 2 * q + e));
            y.at(n, c, z, r, q) = best;
          }
  return y;
}

inline Vol upsample2(const Vol& x) {
  Vol y(x.n, x.c, x.d * 2, x.h * 2, x.w * 2);
  for (std::size_t n = 0; n < y.n; ++n)
    for (std::size_t c = 0; c < y.c; ++c)
      for (std::size_t z = 0; z < y.d; ++z)
        for (std::size_t r = 0; r < y.h; ++r)
          for (std::size_t q = 0; q < y.w; ++q) y.at(n, c, z, r, q) = x.at(n, c, z / 2, r / 2, q / 2);
  return y;
}

// 1 - mean_{k>=1} (2 sum p_k g_k + eps) / (sum p_k + sum g_k + eps), with p the
// channel softmax and sums over the batch.
inline double dice_loss(const Vol& logits, const std::vector<std::uint8_t>& labels, double eps) {
  const std::size_t m = logits.d * logits.h * logits.w;
  std::vector<double> inter(logits.c, 0.0), psum(logits.c, 0.0), gsum(logits.c, 0.0);
  for (std::size_t n = 0; n < logits.n; ++n)
    for (std::size_t i = 0; i < m; ++i) {
      double mx = -INFINITY;
      for (std::size_t c = 0; c < logits.c; ++c) mx = std::max(mx, logits.v[(n * logits.c + c) * m + i]);
      double z = 0.0;
      for (std::size_t c = 0; c < logits.c; ++c) z += std::exp(logits.v[(n * logits.c + c) * m + i] - mx);
      for (std::size_t c = 0; c < logits.c; ++c) {
        const double p = std::exp(logits.v[(n * logits.c + c) * m + i] - mx) / z;
        const double g = labels[n * m + i] == c ? 1.0 : 0.0;
        inter[c] += p * g;
        psum[c] += p;
        gsum[c] += g;
      }
    }
  double mean = 0.0;
  for (std::size_t c = 1; c < logits.c; ++c) mean += (2.0 * inter[c] + eps) / (psum[c] + gsum[c] + eps);
  return 1.0 - mean / static_cast<double>(logits.c - 1);
}

// Set-based mask metrics.
inline std::set<std::size_t> members(const std::vector<std::uint8_t>& mask) {
  std::set<std::size_t> s;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) s.insert(i);
  return s;
}

inline double dice(const std::vector<std::uint8_t>& p, const std::vector<std::uint8_t>& g) {
  const auto a = members(p), b = members(g);
  if (a.empty() && b.empty()) return 1.0;
  std::size_t both = 0;
  for (auto i : a) both += b.count(i);
  return 2.0 * static_cast<double>(both) / static_cast<double>(a.size() + b.size());
}

inline double recall(const std::vector<std::uint8_t>& p, const std::vector<std::uint8_t>& g) {
  const auto a = members(p), b = members(g);
  if (b.empty()) return 1.0;
  std::size_t both = 0;
  for (auto i : b) both += a.count(i);
  return static_cast<double>(both) / static_cast<double>(b.size());
}

}  // namespace oracle

#endif  // RESFUSE_TESTS_ORACLES_HPP_
