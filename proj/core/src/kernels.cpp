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

#include "resfuse/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "resfuse/runtime.hpp"

namespace resfuse::kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
// Row-major [r x c] buffers viewed as their column-major [c x r] transposes,
// so the long spatial axis becomes the GEMM row dimension.
template <typename T>
using TMap = Eigen::Map<ColMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstTMap = Eigen::Map<const ColMat<T>, 0, Eigen::OuterStride<>>;

// Upper bound on im2col scratch per task, in elements.
constexpr std::size_t kColumnBudget = std::size_t{1} << 16;

struct ConvPlan {
  VolumeDims in;
  std::size_t cout = 0;
  std::size_t k = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t od = 0, oh = 0, ow = 0;
  std::size_t rows = 0;  // Cin * k^3
  std::size_t cols = 0;  // od * oh * ow
  std::size_t chunk = 0;
  bool pointwise = false;

  std::size_t chunks() const { return (cols + chunk - 1) / chunk; }
};

ConvPlan make_plan(const Shape& xs, const Shape& ws, const Shape* bs, std::size_t stride,
                   std::size_t padding) {
  ConvPlan p;
  p.in = VolumeDims::of(xs, "conv3d");
  if (ws.rank() != 5) {
    throw ShapeError("conv3d", "weight rank", "expected Cout,Cin,k,k,k, got " + ws.str());
  }
  if (ws[1] != p.in.c) {
    throw ShapeError("conv3d", "input channels",
                     "weight expects " + std::to_string(ws[1]) + ", input has " +
                         std::to_string(p.in.c));
  }
  if (ws[3] != ws[2] || ws[4] != ws[2]) {
    throw ShapeError("conv3d", "kernel extent", "kernel must be cubic, got " + ws.str());
  }
  if (ws[2] % 2 == 0) {
    throw ShapeError("conv3d", "kernel extent", "kernel must be odd, got " + std::to_string(ws[2]));
  }
  if (stride == 0) throw ShapeError("conv3d", "stride", "must be positive");
  p.cout = ws[0];
  p.k = ws[2];
  p.stride = stride;
  p.pad = padding;
  p.od = conv_output_extent(p.in.d, p.k, stride, padding, "depth");
  p.oh = conv_output_extent(p.in.h, p.k, stride, padding, "height");
  p.ow = conv_output_extent(p.in.w, p.k, stride, padding, "width");
  if (bs != nullptr && bs->numel() != p.cout) {
    throw ShapeError("conv3d", "bias", "expected " + std::to_string(p.cout) + " values, got " +
                                           bs->str());
  }
  p.rows = p.in.c * p.k * p.k * p.k;
  p.cols = p.od * p.oh * p.ow;
  p.chunk = std::clamp<std::size_t>(kColumnBudget / p.rows, 64, p.cols);
  p.pointwise = p.k == 1 && stride == 1 && padding == 0;
  return p;
}

// Gathers the receptive fields of output columns [p0, p0 + len) of one sample
// into col, laid out [rows][len].
template <typename T>
void im2col(const T* x, const ConvPlan& pl, std::size_t p0, std::size_t len, T* col) {
  const std::size_t k = pl.k;
  const std::size_t plane = pl.oh * pl.ow;
  const long D = static_cast<long>(pl.in.d), H = static_cast<long>(pl.in.h),
             W = static_cast<long>(pl.in.w);
  const long s = static_cast<long>(pl.stride), pad = static_cast<long>(pl.pad);
  std::size_t r = 0;
  for (std::size_t ci = 0; ci < pl.in.c; ++ci) {
    const T* xc = x + ci * pl.in.spatial();
    for (std::size_t kd = 0; kd < k; ++kd) {
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw, ++r) {
          T* dst = col + r * len;
          std::size_t p = p0;
          const std::size_t end = p0 + len;
          while (p < end) {
            const std::size_t od = p / plane;
            const std::size_t rem = p - od * plane;
            const std::size_t oh = rem / pl.ow;
            const std::size_t ow0 = rem - oh * pl.ow;
            const std::size_t seg = std::min(end - p, pl.ow - ow0);
            const long id = static_cast<long>(od) * s - pad + static_cast<long>(kd);
            const long ih = static_cast<long>(oh) * s - pad + static_cast<long>(kh);
            T* out = dst + (p - p0);
            if (id < 0 || id >= D || ih < 0 || ih >= H) {
              std::fill(out, out + seg, T(0));
            } else {
              const T* row = xc + (id * H + ih) * W;
              long iw = static_cast<long>(ow0) * s - pad + static_cast<long>(kw);
              for (std::size_t j = 0; j < seg; ++j, iw += s) {
                out[j] = (iw >= 0 && iw < W) ? row[iw] : T(0);
              }
            }
            p += seg;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds col back into dx.
template <typename T>
void col2im(const T* col, const ConvPlan& pl, std::size_t p0, std::size_t len, T* dx) {
  const std::size_t k = pl.k;
  const std::size_t plane = pl.oh * pl.ow;
  const long D = static_cast<long>(pl.in.d), H = static_cast<long>(pl.in.h),
             W = static_cast<long>(pl.in.w);
  const long s = static_cast<long>(pl.stride), pad = static_cast<long>(pl.pad);
  std::size_t r = 0;
  for (std::size_t ci = 0; ci < pl.in.c; ++ci) {
    T* xc = dx + ci * pl.in.spatial();
    for (std::size_t kd = 0; kd < k; ++kd) {
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw, ++r) {
          const T* src = col + r * len;
          std::size_t p = p0;
          const std::size_t end = p0 + len;
          while (p < end) {
            const std::size_t od = p / plane;
            const std::size_t rem = p - od * plane;
            const std::size_t oh = rem / pl.ow;
            const std::size_t ow0 = rem - oh * pl.ow;
            const std::size_t seg = std::min(end - p, pl.ow - ow0);
            const long id = static_cast<long>(od) * s - pad + static_cast<long>(kd);
            const long ih = static_cast<long>(oh) * s - pad + static_cast<long>(kh);
            if (id >= 0 && id < D && ih >= 0 && ih < H) {
              T* row = xc + (id * H + ih) * W;
              const T* in = src + (p - p0);
              long iw = static_cast<long>(ow0) * s - pad + static_cast<long>(kw);
              for (std::size_t j = 0; j < seg; ++j, iw += s) {
                if (iw >= 0 && iw < W) row[iw] += in[j];
              }
            }
            p += seg;
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

// Direct 3x3x3, stride 1, padding 1 convolution. Each task owns one output
// depth slice of one block of CB output channels and keeps a CB x TW tile of
// accumulators in registers while walking the zero-padded input.

template <typename T>
constexpr std::size_t kMaxTile = 128 / sizeof(T);  // two 512-bit registers

bool direct_eligible(const ConvPlan& pl) {
  return pl.k == 3 && pl.stride == 1 && pl.pad == 1 && pl.in.w % 4 == 0;
}

// Copies `slices` volumes of D x H x W into zero-padded (D+2)(H+2)(W+2) ones.
template <typename T>
std::vector<T> pad1(const T* x, std::size_t slices, std::size_t D, std::size_t H, std::size_t W) {
  const std::size_t Hp = H + 2, Wp = W + 2, vol = (D + 2) * Hp * Wp;
  std::vector<T> xp(slices * vol, T(0));
  for (std::size_t s = 0; s < slices; ++s) {
    const T* src = x + s * D * H * W;
    T* dst = xp.data() + s * vol;
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t h = 0; h < H; ++h) {
        std::copy(src + (d * H + h) * W, src + (d * H + h + 1) * W,
                  dst + ((d + 1) * Hp + h + 1) * Wp + 1);
      }
    }
  }
  return xp;
}

template <typename T, std::size_t CB, std::size_t TW>
void direct_slice(const T* xp, const T* wp, std::size_t cin, std::size_t D, std::size_t H,
                  std::size_t W, std::size_t od, T* y) {
  using Row = Eigen::Array<T, TW, 1>;
  const std::size_t Wp = W + 2, plane = (H + 2) * Wp, vol = (D + 2) * plane;
  const std::size_t ospatial = D * H * W;
  for (std::size_t oh = 0; oh < H; ++oh) {
    for (std::size_t w0 = 0; w0 < W; w0 += TW) {
      Row acc[CB];
      for (auto& a : acc) a.setZero();
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xb = xp + ci * vol + od * plane + oh * Wp + w0;
        const T* wk = wp + ci * 27 * CB;
        for (std::size_t kd = 0; kd < 3; ++kd) {
          for (std::size_t kh = 0; kh < 3; ++kh) {
            const T* xr = xb + kd * plane + kh * Wp;
            for (std::size_t kw = 0; kw < 3; ++kw, wk += CB) {
              const Eigen::Map<const Row> xv(xr + kw);
              for (std::size_t co = 0; co < CB; ++co) acc[co] += wk[co] * xv;
            }
          }
        }
      }
      T* yo = y + (od * H + oh) * W + w0;
      for (std::size_t co = 0; co < CB; ++co) Eigen::Map<Row>(yo + co * ospatial) = acc[co];
    }
  }
}

template <typename T, std::size_t CB, std::size_t TW>
void direct_run(const T* xp, const T* wp, std::size_t n, std::size_t cin, std::size_t cout,
                std::size_t D, std::size_t H, std::size_t W, T* y) {
  const std::size_t blocks = cout / CB;
  const std::size_t vol = (D + 2) * (H + 2) * (W + 2);
  const std::size_t ospatial = D * H * W;
  parallel_for(n * blocks * D, [&](std::size_t task) {
    const std::size_t od = task % D;
    const std::size_t b = (task / D) % blocks;
    const std::size_t s = task / (D * blocks);
    direct_slice<T, CB, TW>(xp + s * cin * vol, wp + b * cin * 27 * CB, cin, D, H, W, od,
                            y + (s * cout + b * CB) * ospatial);
  });
}

template <typename T, std::size_t CB>
void direct_tile(const T* xp, const T* wp, std::size_t n, std::size_t cin, std::size_t cout,
                 std::size_t D, std::size_t H, std::size_t W, T* y) {
  constexpr std::size_t M = kMaxTile<T>;
  if (W % M == 0) return direct_run<T, CB, M>(xp, wp, n, cin, cout, D, H, W, y);
  if (W % (M / 2) == 0) return direct_run<T, CB, M / 2>(xp, wp, n, cin, cout, D, H, W, y);
  if (W % 8 == 0) return direct_run<T, CB, 8>(xp, wp, n, cin, cout, D, H, W, y);
  return direct_run<T, CB, 4>(xp, wp, n, cin, cout, D, H, W, y);
}

// y = conv(x, w) with x [n,cin,D,H,W], w laid out [cout][cin][27]; y is
// overwritten.
template <typename T>
void direct_conv3(const T* x, const T* w, std::size_t n, std::size_t cin, std::size_t cout,
                  std::size_t D, std::size_t H, std::size_t W, T* y) {
  const std::vector<T> xp = pad1(x, n * cin, D, H, W);
  const std::size_t cb = cout % 8 == 0 ? 8 : cout % 4 == 0 ? 4 : cout % 2 == 0 ? 2 : 1;
  // Pack as [block][cin][27][cb].
  std::vector<T> wp(cout * cin * 27);
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t k = 0; k < 27; ++k) {
        wp[((co / cb * cin + ci) * 27 + k) * cb + co % cb] = w[(co * cin + ci) * 27 + k];
      }
    }
  }
  switch (cb) {
    case 8: return direct_tile<T, 8>(xp.data(), wp.data(), n, cin, cout, D, H, W, y);
    case 4: return direct_tile<T, 4>(xp.data(), wp.data(), n, cin, cout, D, H, W, y);
    case 2: return direct_tile<T, 2>(xp.data(), wp.data(), n, cin, cout, D, H, W, y);
    default: return direct_tile<T, 1>(xp.data(), wp.data(), n, cin, cout, D, H, W, y);
  }
}

// dw[co][ci][27] += sum over samples and voxels of dy[co] * shifted x[ci].
// Each task owns one (output block, input channel) pair and keeps CB x 3
// row accumulators (one per kw) per (kd, kh).
template <typename T, std::size_t CB, std::size_t TW>
void direct_wgrad_run(const T* xp, const T* dy, std::size_t n, std::size_t cin, std::size_t cout,
                      std::size_t D, std::size_t H, std::size_t W, T* dw) {
  using Row = Eigen::Array<T, TW, 1>;
  const std::size_t Wp = W + 2, plane = (H + 2) * Wp, vol = (D + 2) * plane;
  const std::size_t ospatial = D * H * W;
  const std::size_t blocks = cout / CB;
  parallel_for(blocks * cin, [&](std::size_t task) {
    const std::size_t b = task / cin, ci = task % cin;
    for (std::size_t kd = 0; kd < 3; ++kd) {
      for (std::size_t kh = 0; kh < 3; ++kh) {
        Row acc[CB][3];
        for (auto& r : acc) {
          for (auto& a : r) a.setZero();
        }
        for (std::size_t s = 0; s < n; ++s) {
          const T* xs = xp + (s * cin + ci) * vol + kd * plane + kh * Wp;
          const T* ds = dy + (s * cout + b * CB) * ospatial;
          for (std::size_t od = 0; od < D; ++od) {
            for (std::size_t oh = 0; oh < H; ++oh) {
              const T* xr = xs + od * plane + oh * Wp;
              const T* dr = ds + (od * H + oh) * W;
              for (std::size_t w0 = 0; w0 < W; w0 += TW) {
                const Eigen::Map<const Row> x0(xr + w0), x1(xr + w0 + 1), x2(xr + w0 + 2);
                for (std::size_t co = 0; co < CB; ++co) {
                  const Eigen::Map<const Row> g(dr + co * ospatial + w0);
                  acc[co][0] += g * x0;
                  acc[co][1] += g * x1;
                  acc[co][2] += g * x2;
                }
              }
            }
          }
        }
        for (std::size_t co = 0; co < CB; ++co) {
          T* out = dw + ((b * CB + co) * cin + ci) * 27 + (kd * 3 + kh) * 3;
          for (std::size_t kw = 0; kw < 3; ++kw) out[kw] += acc[co][kw].sum();
        }
      }
    }
  });
}

template <typename T, std::size_t CB>
void direct_wgrad_tile(const T* xp, const T* dy, std::size_t n, std::size_t cin, std::size_t cout,
                       std::size_t D, std::size_t H, std::size_t W, T* dw) {
  constexpr std::size_t M = kMaxTile<T> / 2;
  if (W % M == 0) return direct_wgrad_run<T, CB, M>(xp, dy, n, cin, cout, D, H, W, dw);
  if (W % 8 == 0) return direct_wgrad_run<T, CB, 8>(xp, dy, n, cin, cout, D, H, W, dw);
  return direct_wgrad_run<T, CB, 4>(xp, dy, n, cin, cout, D, H, W, dw);
}

template <typename T>
void direct_wgrad(const T* x, const T* dy, std::size_t n, std::size_t cin, std::size_t cout,
                  std::size_t D, std::size_t H, std::size_t W, T* dw) {
  const std::vector<T> xp = pad1(x, n * cin, D, H, W);
  const std::size_t cb = cout % 8 == 0 ? 8 : cout % 4 == 0 ? 4 : cout % 2 == 0 ? 2 : 1;
  switch (cb) {
    case 8: return direct_wgrad_tile<T, 8>(xp.data(), dy, n, cin, cout, D, H, W, dw);
    case 4: return direct_wgrad_tile<T, 4>(xp.data(), dy, n, cin, cout, D, H, W, dw);
    case 2: return direct_wgrad_tile<T, 2>(xp.data(), dy, n, cin, cout, D, H, W, dw);
    default: return direct_wgrad_tile<T, 1>(xp.data(), dy, n, cin, cout, D, H, W, dw);
  }
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding, const char* dimension) {
  const long span = static_cast<long>(in + 2 * padding) - static_cast<long>(kernel);
  if (stride == 0 || span < 0) {
    throw ShapeError("conv3d", dimension,
                     "extent " + std::to_string(in) + " with padding " + std::to_string(padding) +
                         " is smaller than kernel " + std::to_string(kernel));
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

template <typename T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                              const BasicTensor<T>* bias, std::size_t stride,
                              std::size_t padding) {
  const ConvPlan pl =
      make_plan(x.shape(), weight.shape(), bias ? &bias->shape() : nullptr, stride, padding);
  if (!x.all_finite()) throw NonFiniteError("conv3d");
  BasicTensor<T> y(Shape{pl.in.n, pl.cout, pl.od, pl.oh, pl.ow});
  const ConstMatMap<T> wmat(weight.data(), pl.cout, pl.rows, Eigen::OuterStride<>(pl.rows));
  const ConstTMap<T> wmat_t(weight.data(), pl.rows, pl.cout, Eigen::OuterStride<>(pl.rows));
  const std::size_t in_stride = pl.in.c * pl.in.spatial();
  const std::size_t out_stride = pl.cout * pl.cols;

  if (direct_eligible(pl)) {
    direct_conv3(x.data(), weight.data(), pl.in.n, pl.in.c, pl.cout, pl.in.d, pl.in.h, pl.in.w,
                 y.data());
  } else if (pl.pointwise) {
    parallel_for(pl.in.n, [&](std::size_t n) {
      const ConstMatMap<T> xm(x.data() + n * in_stride, pl.in.c, pl.cols,
                              Eigen::OuterStride<>(pl.cols));
      MatMap<T> ym(y.data() + n * out_stride, pl.cout, pl.cols, Eigen::OuterStride<>(pl.cols));
      ym.noalias() = wmat * xm;
    });
  } else {
    const std::size_t nchunks = pl.chunks();
    parallel_for(pl.in.n * nchunks, [&](std::size_t task) {
      const std::size_t n = task / nchunks;
      const std::size_t p0 = (task % nchunks) * pl.chunk;
      const std::size_t len = std::min(pl.chunk, pl.cols - p0);
      auto& col = scratch<T>();
      col.resize(pl.rows * len);
      im2col(x.data() + n * in_stride, pl, p0, len, col.data());
      const ConstTMap<T> cmt(col.data(), len, pl.rows, Eigen::OuterStride<>(len));
      TMap<T> ymt(y.data() + n * out_stride + p0, len, pl.cout, Eigen::OuterStride<>(pl.cols));
      ymt.noalias() = cmt * wmat_t;
    });
  }
  if (bias != nullptr) {
    for (std::size_t n = 0; n < pl.in.n; ++n) {
      for (std::size_t o = 0; o < pl.cout; ++o) {
        T* row = y.data() + n * out_stride + o * pl.cols;
        const T b = (*bias)[o];
        for (std::size_t p = 0; p < pl.cols; ++p) row[p] += b;
      }
    }
  }
  return y;
}

template <typename T>
void conv3d_backward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                     std::span<const T> dy, std::size_t stride, std::size_t padding,
                     std::span<T> dx, std::span<T> dweight, std::span<T> dbias) {
  const ConvPlan pl = make_plan(x.shape(), weight.shape(), nullptr, stride, padding);
  const std::size_t in_stride = pl.in.c * pl.in.spatial();
  const std::size_t out_stride = pl.cout * pl.cols;
  if (dy.size() != pl.in.n * out_stride) {
    throw ShapeError("conv3d_backward", "gradient size", "does not match output");
  }
  const ConstMatMap<T> wmat(weight.data(), pl.cout, pl.rows, Eigen::OuterStride<>(pl.rows));

  if (!dbias.empty()) {
    for (std::size_t n = 0; n < pl.in.n; ++n) {
      for (std::size_t o = 0; o < pl.cout; ++o) {
        const T* row = dy.data() + n * out_stride + o * pl.cols;
        T acc = T(0);
        for (std::size_t p = 0; p < pl.cols; ++p) acc += row[p];
        dbias[o] += acc;
      }
    }
  }
  if (dx.empty() && dweight.empty()) return;

  if (direct_eligible(pl) && !dx.empty()) {
    // dx is the same convolution of dy with channel-swapped, flipped kernels.
    std::vector<T> wt(weight.size());
    for (std::size_t co = 0; co < pl.cout; ++co) {
      for (std::size_t ci = 0; ci < pl.in.c; ++ci) {
        for (std::size_t k = 0; k < 27; ++k) {
          wt[(ci * pl.cout + co) * 27 + (26 - k)] = weight[(co * pl.in.c + ci) * 27 + k];
        }
      }
    }
    std::vector<T> tmp(x.size());
    direct_conv3(dy.data(), wt.data(), pl.in.n, pl.cout, pl.in.c, pl.in.d, pl.in.h, pl.in.w,
                 tmp.data());
    for (std::size_t i = 0; i < tmp.size(); ++i) dx[i] += tmp[i];
    dx = {};
  }
  if (direct_eligible(pl) && !dweight.empty()) {
    direct_wgrad(x.data(), dy.data(), pl.in.n, pl.in.c, pl.cout, pl.in.d, pl.in.h, pl.in.w,
                 dweight.data());
    dweight = {};
  }
  if (dx.empty() && dweight.empty()) return;

  if (pl.pointwise) {
    for (std::size_t n = 0; n < pl.in.n; ++n) {
      const ConstMatMap<T> dym(dy.data() + n * out_stride, pl.cout, pl.cols,
                               Eigen::OuterStride<>(pl.cols));
      if (!dweight.empty()) {
        const ConstMatMap<T> xm(x.data() + n * in_stride, pl.in.c, pl.cols,
                                Eigen::OuterStride<>(pl.cols));
        MatMap<T> dw(dweight.data(), pl.cout, pl.rows, Eigen::OuterStride<>(pl.rows));
        dw.noalias() += dym * xm.transpose();
      }
      if (!dx.empty()) {
        MatMap<T> dxm(dx.data() + n * in_stride, pl.in.c, pl.cols, Eigen::OuterStride<>(pl.cols));
        dxm.noalias() += wmat.transpose() * dym;
      }
    }
    return;
  }

  auto& col = scratch<T>();
  std::vector<T> dcol;
  for (std::size_t n = 0; n < pl.in.n; ++n) {
    for (std::size_t p0 = 0; p0 < pl.cols; p0 += pl.chunk) {
      const std::size_t len = std::min(pl.chunk, pl.cols - p0);
      const ConstTMap<T> dymt(dy.data() + n * out_stride + p0, len, pl.cout,
                              Eigen::OuterStride<>(pl.cols));
      if (!dweight.empty()) {
        col.resize(pl.rows * len);
        im2col(x.data() + n * in_stride, pl, p0, len, col.data());
        const ConstMatMap<T> cm(col.data(), pl.rows, len, Eigen::OuterStride<>(len));
        TMap<T> dwt(dweight.data(), pl.rows, pl.cout, Eigen::OuterStride<>(pl.rows));
        dwt.noalias() += cm * dymt;
      }
      if (!dx.empty()) {
        dcol.resize(pl.rows * len);
        TMap<T> dcmt(dcol.data(), len, pl.rows, Eigen::OuterStride<>(len));
        dcmt.noalias() = dymt * wmat;
        col2im(dcol.data(), pl, p0, len, dx.data() + n * in_stride);
      }
    }
  }
}

template <typename T>
BasicTensor<T> instance_norm_forward(const BasicTensor<T>& x, std::span<const T> gamma,
                                     std::span<const T> beta, T eps,
                                     InstanceNormCache<T>* cache) {
  const auto v = VolumeDims::of(x.shape(), "instance_norm");
  if (v.spatial() < 2) {
    throw ShapeError("instance_norm", "spatial volume", "needs at least 2 voxels per slice");
  }
  if (gamma.size() != v.c || beta.size() != v.c) {
    throw ShapeError("instance_norm", "channels",
                     "affine parameters must have " + std::to_string(v.c) + " entries");
  }
  BasicTensor<T> y(x.shape());
  const std::size_t m = v.spatial();
  if (cache != nullptr) {
    cache->xhat.resize(x.size());
    cache->inv_std.resize(v.n * v.c);
    cache->slices = v.n * v.c;
    cache->spatial = m;
    cache->channels = v.c;
  }
  for (std::size_t s = 0; s < v.n * v.c; ++s) {
    const std::size_t c = s % v.c;
    const T* xs = x.data() + s * m;
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) sum += xs[i];
    const double mean = sum / static_cast<double>(m);
    double sq = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = xs[i] - mean;
      sq += d * d;
    }
    const double var = sq / static_cast<double>(m);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    const T mu = static_cast<T>(mean);
    T* ys = y.data() + s * m;
    T* xh = cache ? cache->xhat.data() + s * m : nullptr;
    for (std::size_t i = 0; i < m; ++i) {
      const T h = (xs[i] - mu) * inv;
      if (xh) xh[i] = h;
      ys[i] = gamma[c] * h + beta[c];
    }
    if (cache) cache->inv_std[s] = inv;
  }
  return y;
}

template <typename T>
void instance_norm_backward(const InstanceNormCache<T>& cache, std::span<const T> gamma,
                            std::span<const T> dy, std::span<T> dx, std::span<T> dgamma,
                            std::span<T> dbeta) {
  const std::size_t m = cache.spatial;
  const T inv_m = T(1) / static_cast<T>(m);
  for (std::size_t s = 0; s < cache.slices; ++s) {
    const std::size_t c = s % cache.channels;
    const T* g = dy.data() + s * m;
    const T* xh = cache.xhat.data() + s * m;
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sum_dy += g[i];
      sum_dy_xh += static_cast<double>(g[i]) * xh[i];
    }
    if (!dgamma.empty()) dgamma[c] += static_cast<T>(sum_dy_xh);
    if (!dbeta.empty()) dbeta[c] += static_cast<T>(sum_dy);
    if (dx.empty()) continue;
    const T mean_dy = static_cast<T>(sum_dy) * inv_m;
    const T mean_dy_xh = static_cast<T>(sum_dy_xh) * inv_m;
    const T scale = gamma[c] * cache.inv_std[s];
    T* out = dx.data() + s * m;
    for (std::size_t i = 0; i < m; ++i) {
      out[i] += scale * (g[i] - mean_dy - xh[i] * mean_dy_xh);
    }
  }
}

template <typename T>
BasicTensor<T> max_pool2_forward(const BasicTensor<T>& x, std::vector<std::size_t>* argmax) {
  const auto v = VolumeDims::of(x.shape(), "down2");
  if (v.d % 2) throw ShapeError("down2", "depth", "extent " + std::to_string(v.d) + " is odd");
  if (v.h % 2) throw ShapeError("down2", "height", "extent " + std::to_string(v.h) + " is odd");
  if (v.w % 2) throw ShapeError("down2", "width", "extent " + std::to_string(v.w) + " is odd");
  const std::size_t D = v.d / 2, H = v.h / 2, W = v.w / 2;
  BasicTensor<T> y(Shape{v.n, v.c, D, H, W});
  if (argmax) argmax->resize(y.size());
  std::size_t o = 0;
  for (std::size_t s = 0; s < v.n * v.c; ++s) {
    const std::size_t base = s * v.spatial();
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w, ++o) {
          std::size_t best = base + ((2 * d) * v.h + 2 * h) * v.w + 2 * w;
          T best_v = x[best];
          for (std::size_t dd = 0; dd < 2; ++dd) {
            for (std::size_t hh = 0; hh < 2; ++hh) {
              for (std::size_t ww = 0; ww < 2; ++ww) {
                const std::size_t i = base + ((2 * d + dd) * v.h + 2 * h + hh) * v.w + 2 * w + ww;
                if (x[i] > best_v) {
                  best_v = x[i];
                  best = i;
                }
              }
            }
          }
          y[o] = best_v;
          if (argmax) (*argmax)[o] = best;
        }
      }
    }
  }
  return y;
}

template <typename T>
void max_pool2_backward(const std::vector<std::size_t>& argmax, std::span<const T> dy,
                        std::span<T> dx) {
  if (dy.size() != argmax.size()) throw ShapeError("down2", "gradient size", "dy does not match forward output");
  for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[o];
}

template <typename T>
BasicTensor<T> upsample2_forward(const BasicTensor<T>& x) {
  const auto v = VolumeDims::of(x.shape(), "up2");
  const std::size_t D = 2 * v.d, H = 2 * v.h, W = 2 * v.w;
  BasicTensor<T> y(Shape{v.n, v.c, D, H, W});
  std::size_t o = 0;
  for (std::size_t s = 0; s < v.n * v.c; ++s) {
    const T* xs = x.data() + s * v.spatial();
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t h = 0; h < H; ++h) {
        const T* row = xs + ((d / 2) * v.h + h / 2) * v.w;
        for (std::size_t w = 0; w < W; ++w, ++o) y[o] = row[w / 2];
      }
    }
  }
  return y;
}

template <typename T>
void upsample2_backward(const Shape& x_shape, std::span<const T> dy, std::span<T> dx) {
  const auto v = VolumeDims::of(x_shape, "up2");
  const std::size_t D = 2 * v.d, H = 2 * v.h, W = 2 * v.w;
  if (dx.size() != x_shape.numel() || dy.size() != 8 * dx.size()) {
    throw ShapeError("up2", "gradient size", "dx/dy do not match input and output shapes");
  }
  std::size_t o = 0;
  for (std::size_t s = 0; s < v.n * v.c; ++s) {
    T* xs = dx.data() + s * v.spatial();
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t h = 0; h < H; ++h) {
        T* row = xs + ((d / 2) * v.h + h / 2) * v.w;
        for (std::size_t w = 0; w < W; ++w, ++o) row[w / 2] += dy[o];
      }
    }
  }
}

template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& logits) {
  const auto v = VolumeDims::of(logits.shape(), "softmax");
  BasicTensor<T> p(logits.shape());
  const std::size_t m = v.spatial();
  for (std::size_t n = 0; n < v.n; ++n) {
    const T* z = logits.data() + n * v.c * m;
    T* out = p.data() + n * v.c * m;
    for (std::size_t i = 0; i < m; ++i) {
      T mx = z[i];
      for (std::size_t c = 1; c < v.c; ++c) mx = std::max(mx, z[c * m + i]);
      T sum = T(0);
      for (std::size_t c = 0; c < v.c; ++c) {
        const T e = std::exp(z[c * m + i] - mx);
        out[c * m + i] = e;
        sum += e;
      }
      for (std::size_t c = 0; c < v.c; ++c) out[c * m + i] /= sum;
    }
  }
  return p;
}

template <typename T>
LabelVolume argmax_channels(const BasicTensor<T>& logits) {
  const auto v = VolumeDims::of(logits.shape(), "argmax");
  LabelVolume out(Shape{v.n, v.d, v.h, v.w});
  const std::size_t m = v.spatial();
  for (std::size_t n = 0; n < v.n; ++n) {
    const T* z = logits.data() + n * v.c * m;
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < v.c; ++c) {
        if (z[c * m + i] > z[best * m + i]) best = c;
      }
      out.values[n * m + i] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

template <typename T>
T soft_dice_loss(const BasicTensor<T>& logits, const LabelVolume& target, T eps,
                 std::span<T> dlogits) {
  const auto v = VolumeDims::of(logits.shape(), "dice_loss");
  if (v.c < 2) throw ShapeError("dice_loss", "classes", "need at least 2, got " + std::to_string(v.c));
  const std::size_t m = v.spatial();
  if (target.size() != v.n * m) {
    throw ShapeError("dice_loss", "target", "expected " + std::to_string(v.n * m) +
                                                " labels, got " + std::to_string(target.size()));
  }
  for (auto t : target.values) {
    if (t >= v.c) throw Error("dice_loss: label " + std::to_string(t) + " out of range");
  }
  const BasicTensor<T> p = softmax_channels(logits);
  const std::size_t fg = v.c - 1;
  std::vector<double> inter(v.c, 0.0), denom(v.c, 0.0);
  for (std::size_t n = 0; n < v.n; ++n) {
    for (std::size_t c = 1; c < v.c; ++c) {
      const T* pc = p.data() + (n * v.c + c) * m;
      const std::uint8_t* t = target.values.data() + n * m;
      double i_acc = 0.0, d_acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const bool g = t[i] == c;
        d_acc += pc[i] + (g ? 1.0 : 0.0);
        if (g) i_acc += pc[i];
      }
      inter[c] += i_acc;
      denom[c] += d_acc;
    }
  }
  double dice_sum = 0.0;
  for (std::size_t c = 1; c < v.c; ++c) {
    dice_sum += (2.0 * inter[c] + eps) / (denom[c] + eps);
  }
  const T loss = static_cast<T>(1.0 - dice_sum / static_cast<double>(fg));

  if (!dlogits.empty()) {
    // d(loss)/dp, then through the per-voxel softmax Jacobian.
    std::vector<T> a(v.c, T(0)), b(v.c, T(0));
    for (std::size_t c = 1; c < v.c; ++c) {
      const double s = denom[c] + eps;
      a[c] = static_cast<T>(-2.0 / (s * static_cast<double>(fg)));
      b[c] = static_cast<T>((2.0 * inter[c] + eps) / (s * s * static_cast<double>(fg)));
    }
    std::vector<T> dp(v.c);
    for (std::size_t n = 0; n < v.n; ++n) {
      const T* pn = p.data() + n * v.c * m;
      T* gn = dlogits.data() + n * v.c * m;
      const std::uint8_t* t = target.values.data() + n * m;
      for (std::size_t i = 0; i < m; ++i) {
        T dot = T(0);
        dp[0] = T(0);
        for (std::size_t c = 1; c < v.c; ++c) {
          dp[c] = (t[i] == c ? a[c] : T(0)) + b[c];
        }
        for (std::size_t c = 0; c < v.c; ++c) dot += pn[c * m + i] * dp[c];
        for (std::size_t c = 0; c < v.c; ++c) {
          gn[c * m + i] = pn[c * m + i] * (dp[c] - dot);
        }
      }
    }
  }
  return loss;
}

#define RESFUSE_INSTANTIATE_KERNELS(T)                                                          \
  template BasicTensor<T> conv3d_forward(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                         const BasicTensor<T>*, std::size_t, std::size_t);      \
  template void conv3d_backward(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                std::span<const T>, std::size_t, std::size_t, std::span<T>,     \
                                std::span<T>, std::span<T>);                                    \
  template BasicTensor<T> instance_norm_forward(const BasicTensor<T>&, std::span<const T>,      \
                                                std::span<const T>, T, InstanceNormCache<T>*);  \
  template void instance_norm_backward(const InstanceNormCache<T>&, std::span<const T>,         \
                                       std::span<const T>, std::span<T>, std::span<T>,          \
                                       std::span<T>);                                           \
  template BasicTensor<T> max_pool2_forward(const BasicTensor<T>&, std::vector<std::size_t>*);  \
  template void max_pool2_backward(const std::vector<std::size_t>&, std::span<const T>,         \
                                   std::span<T>);                                               \
  template BasicTensor<T> upsample2_forward(const BasicTensor<T>&);                             \
  template void upsample2_backward<T>(const Shape&, std::span<const T>, std::span<T>);          \
  template BasicTensor<T> softmax_channels(const BasicTensor<T>&);                              \
  template LabelVolume argmax_channels(const BasicTensor<T>&);                                  \
  template T soft_dice_loss(const BasicTensor<T>&, const LabelVolume&, T, std::span<T>);

RESFUSE_INSTANTIATE_KERNELS(float)
RESFUSE_INSTANTIATE_KERNELS(double)

#undef RESFUSE_INSTANTIATE_KERNELS

}  // namespace resfuse::kernels
