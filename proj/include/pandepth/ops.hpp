// Copyright 2026 The PanDepth Authors.
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

#ifndef PANDEPTH_OPS_HPP_
#define PANDEPTH_OPS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pandepth/autograd.hpp"

// Differentiable tensor operations. Feature maps are laid out as
// [N, C, H, W]; matrices as [rows, cols].
namespace pandepth::ops {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct Pair {
  int h = 0;
  int w = 0;
  Pair() = default;
  Pair(int both) : h(both), w(both) {}  // NOLINT: implicit by intent
  Pair(int hh, int ww) : h(hh), w(ww) {}
};

inline int conv_out_size(int in, int k, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  PANDEPTH_CHECK_ARG(a.shape() == b.shape(),
                     "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  out += b.value();
  return make_op<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    if (auto* ga = grad_of(a)) *ga += g;
    if (auto* gb = grad_of(b)) *gb += g;
  });
}

template <typename T>
Var<T> add_n(const std::vector<Var<T>>& xs) {
  PANDEPTH_CHECK_ARG(!xs.empty(), "add_n: empty input");
  Tensor<T> out(xs[0].shape());
  for (const auto& x : xs) out += x.value();
  return make_op<T>(std::move(out), xs, [xs](const Tensor<T>& g) {
    for (const auto& x : xs)
      if (auto* gx = grad_of(x)) *gx += g;
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  PANDEPTH_CHECK_ARG(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<T> out(a.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [a, b, n](const Tensor<T>& g) {
    if (auto* ga = grad_of(a))
      for (int64_t i = 0; i < n; ++i) (*ga)[i] += g[i] * b.value()[i];
    if (auto* gb = grad_of(b))
      for (int64_t i = 0; i < n; ++i) (*gb)[i] += g[i] * a.value()[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return make_op<T>(std::move(out), {a}, [a, s](const Tensor<T>& g) {
    if (auto* ga = grad_of(a))
      for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += s * g[i];
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v += s;
  return make_op<T>(std::move(out), {a}, [a](const Tensor<T>& g) {
    if (auto* ga = grad_of(a)) *ga += g;
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.01)) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > 0 ? v : slope * v;
  return make_op<T>(std::move(out), {a}, [a, slope](const Tensor<T>& g) {
    if (auto* ga = grad_of(a)) {
      const auto& x = a.value();
      for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += x[i] > 0 ? g[i] : slope * g[i];
    }
  });
}

template <typename T>
T sigmoid_scalar(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
T softplus_scalar(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = sigmoid_scalar(v);
  Tensor<T> y = out;
  return make_op<T>(std::move(out), {a}, [a, y](const Tensor<T>& g) {
    if (auto* ga = grad_of(a))
      for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = softplus_scalar(v);
  return make_op<T>(std::move(out), {a}, [a](const Tensor<T>& g) {
    if (auto* ga = grad_of(a)) {
      const auto& x = a.value();
      for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * sigmoid_scalar(x[i]);
    }
  });
}

// min(x, hi); gradient is zero where the bound is active.
template <typename T>
Var<T> clamp_max(const Var<T>& a, T hi) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::min(v, hi);
  return make_op<T>(std::move(out), {a}, [a, hi](const Tensor<T>& g) {
    if (auto* ga = grad_of(a)) {
      const auto& x = a.value();
      for (int64_t i = 0; i < g.numel(); ++i)
        if (x[i] < hi) (*ga)[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  return make_op<T>(Tensor<T>::scalar(s), {a}, [a](const Tensor<T>& g) {
    if (auto* ga = grad_of(a))
      for (auto& v : ga->values()) v += g[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  PANDEPTH_CHECK_ARG(a.numel() > 0, "mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// Global average over H, W: [N, C, H, W] -> [N, C, 1, 1].
template <typename T>
Var<T> spatial_mean(const Var<T>& x) {
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{n, c, 1, 1});
  for (int64_t p = 0; p < n * c; ++p) {
    T s = 0;
    for (int64_t i = 0; i < hw; ++i) s += x.value()[p * hw + i];
    out[p] = s / static_cast<T>(hw);
  }
  return make_op<T>(std::move(out), {x}, [x, n, c, hw](const Tensor<T>& g) {
    if (auto* gx = grad_of(x))
      for (int64_t p = 0; p < n * c; ++p)
        for (int64_t i = 0; i < hw; ++i) (*gx)[p * hw + i] += g[p] / static_cast<T>(hw);
  });
}

// Per-channel scaling: x [N, C, H, W] * s [N, C, 1, 1].
template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& s) {
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  PANDEPTH_CHECK_ARG(s.numel() == n * c, "channel_scale: shape mismatch");
  Tensor<T> out(x.shape());
  for (int64_t p = 0; p < n * c; ++p)
    for (int64_t i = 0; i < hw; ++i) out[p * hw + i] = x.value()[p * hw + i] * s.value()[p];
  return make_op<T>(std::move(out), {x, s}, [x, s, n, c, hw](const Tensor<T>& g) {
    auto* gx = grad_of(x);
    auto* gs = grad_of(s);
    for (int64_t p = 0; p < n * c; ++p)
      for (int64_t i = 0; i < hw; ++i) {
        if (gx) (*gx)[p * hw + i] += g[p * hw + i] * s.value()[p];
        if (gs) (*gs)[p] += g[p * hw + i] * x.value()[p * hw + i];
      }
  });
}

// ---------------------------------------------------------------- structure

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_op<T>(std::move(out), {a}, [a](const Tensor<T>& g) {
    if (auto* ga = grad_of(a))
      for (int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
  });
}

// Concatenation along `axis`.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  PANDEPTH_CHECK_ARG(!xs.empty(), "concat: empty input");
  const Shape& s0 = xs[0].shape();
  const int rank = static_cast<int>(s0.size());
  if (axis < 0) axis += rank;
  int64_t outer = 1, inner = 1, total = 0;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (int i = axis + 1; i < rank; ++i) inner *= s0[i];
  for (const auto& x : xs) {
    PANDEPTH_CHECK_ARG(static_cast<int>(x.shape().size()) == rank, "concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis)
        PANDEPTH_CHECK_ARG(x.shape()[i] == s0[i], "concat: shape mismatch " +
                                                      shape_str(x.shape()) + " vs " +
                                                      shape_str(s0));
    total += x.shape()[axis];
  }
  Shape os = s0;
  os[axis] = total;
  Tensor<T> out(os);
  int64_t off = 0;
  std::vector<int64_t> offsets;
  for (const auto& x : xs) {
    const int64_t len = x.shape()[axis] * inner;
    offsets.push_back(off);
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(x.value().data() + o * len, len, out.data() + o * total * inner + off);
    off += len;
  }
  return make_op<T>(std::move(out), xs, [xs, offsets, outer, inner, total, axis](const Tensor<T>& g) {
    for (size_t k = 0; k < xs.size(); ++k) {
      auto* gx = grad_of(xs[k]);
      if (!gx) continue;
      const int64_t len = xs[k].shape()[axis] * inner;
      for (int64_t o = 0; o < outer; ++o) {
        const T* src = g.data() + o * total * inner + offsets[k];
        T* dst = gx->data() + o * len;
        for (int64_t i = 0; i < len; ++i) dst[i] += src[i];
      }
    }
  });
}

// Flat gather: out[i] = a.flat[idx[i]].
template <typename T>
Var<T> take(const Var<T>& a, std::vector<int64_t> idx) {
  Tensor<T> out(Shape{static_cast<int64_t>(idx.size())});
  for (size_t i = 0; i < idx.size(); ++i) out[i] = a.value()[idx[i]];
  return make_op<T>(std::move(out), {a}, [a, idx = std::move(idx)](const Tensor<T>& g) {
    if (auto* ga = grad_of(a))
      for (size_t i = 0; i < idx.size(); ++i) (*ga)[idx[i]] += g[i];
  });
}

// Selects slices along axis 0.
template <typename T>
Var<T> index_rows(const Var<T>& a, std::vector<int64_t> rows) {
  const int64_t row = a.dim(0) ? a.numel() / a.dim(0) : 0;
  Shape os = a.shape();
  os[0] = static_cast<int64_t>(rows.size());
  Tensor<T> out(os);
  for (size_t r = 0; r < rows.size(); ++r)
    std::copy_n(a.value().data() + rows[r] * row, row, out.data() + r * row);
  return make_op<T>(std::move(out), {a}, [a, rows = std::move(rows), row](const Tensor<T>& g) {
    if (auto* ga = grad_of(a))
      for (size_t r = 0; r < rows.size(); ++r)
        for (int64_t i = 0; i < row; ++i) (*ga)[rows[r] * row + i] += g[r * row + i];
  });
}

// Top-left aligned crop or zero-pad of the two trailing axes to (h, w).
template <typename T>
Var<T> crop_or_pad(const Var<T>& a, int64_t h, int64_t w) {
  const auto& s = a.shape();
  PANDEPTH_CHECK_ARG(s.size() >= 2, "crop_or_pad: rank < 2");
  const int64_t ih = s[s.size() - 2], iw = s[s.size() - 1];
  if (ih == h && iw == w) return a;
  const int64_t planes = a.numel() / (ih * iw);
  Shape os = s;
  os[os.size() - 2] = h;
  os[os.size() - 1] = w;
  Tensor<T> out(os);
  const int64_t ch = std::min(ih, h), cw = std::min(iw, w);
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < ch; ++y)
      std::copy_n(a.value().data() + (p * ih + y) * iw, cw, out.data() + (p * h + y) * w);
  return make_op<T>(std::move(out), {a}, [a, planes, ih, iw, h, w, ch, cw](const Tensor<T>& g) {
    if (auto* ga = grad_of(a))
      for (int64_t p = 0; p < planes; ++p)
        for (int64_t y = 0; y < ch; ++y)
          for (int64_t x = 0; x < cw; ++x) (*ga)[(p * ih + y) * iw + x] += g[(p * h + y) * w + x];
  });
}

// Softmax over axis 1 of [N, C, H, W].
template <typename T>
Var<T> channel_softmax(const Var<T>& a) {
  const int64_t n = a.dim(0), c = a.dim(1), hw = a.numel() / (n * c);
  Tensor<T> out(a.shape());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t p = 0; p < hw; ++p) {
      const T* x = a.value().data() + b * c * hw + p;
      T* y = out.data() + b * c * hw + p;
      T mx = x[0];
      for (int64_t k = 1; k < c; ++k) mx = std::max(mx, x[k * hw]);
      T z = 0;
      for (int64_t k = 0; k < c; ++k) z += (y[k * hw] = std::exp(x[k * hw] - mx));
      for (int64_t k = 0; k < c; ++k) y[k * hw] /= z;
    }
  Tensor<T> y = out;
  return make_op<T>(std::move(out), {a}, [a, y, n, c, hw](const Tensor<T>& g) {
    auto* ga = grad_of(a);
    if (!ga) return;
    for (int64_t b = 0; b < n; ++b)
      for (int64_t p = 0; p < hw; ++p) {
        const int64_t base = b * c * hw + p;
        T dot = 0;
        for (int64_t k = 0; k < c; ++k) dot += g[base + k * hw] * y[base + k * hw];
        for (int64_t k = 0; k < c; ++k)
          (*ga)[base + k * hw] += y[base + k * hw] * (g[base + k * hw] - dot);
      }
  });
}

namespace detail {

struct BilinearTap {
  int64_t i0, i1;
  double w0, w1;
};

// Half-pixel-centre source taps (align_corners = false).
inline std::vector<BilinearTap> bilinear_taps(int64_t in, int64_t out) {
  std::vector<BilinearTap> taps(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int64_t i0 = std::min<int64_t>(static_cast<int64_t>(src), in - 1);
    int64_t i1 = std::min<int64_t>(i0 + 1, in - 1);
    double l = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - l, l};
  }
  return taps;
}

}  // namespace detail

// Bilinear resize of [N, C, H, W] to (oh, ow).
template <typename T>
Var<T> resize_bilinear(const Var<T>& a, int64_t oh, int64_t ow) {
  const int64_t n = a.dim(0), c = a.dim(1), ih = a.dim(2), iw = a.dim(3);
  if (ih == oh && iw == ow) return a;
  auto ty = detail::bilinear_taps(ih, oh);
  auto tx = detail::bilinear_taps(iw, ow);
  Tensor<T> out(Shape{n, c, oh, ow});
  for (int64_t p = 0; p < n * c; ++p) {
    const T* src = a.value().data() + p * ih * iw;
    T* dst = out.data() + p * oh * ow;
    for (int64_t y = 0; y < oh; ++y) {
      const auto& vy = ty[y];
      for (int64_t x = 0; x < ow; ++x) {
        const auto& vx = tx[x];
        dst[y * ow + x] = static_cast<T>(
            vy.w0 * (vx.w0 * src[vy.i0 * iw + vx.i0] + vx.w1 * src[vy.i0 * iw + vx.i1]) +
            vy.w1 * (vx.w0 * src[vy.i1 * iw + vx.i0] + vx.w1 * src[vy.i1 * iw + vx.i1]));
      }
    }
  }
  return make_op<T>(std::move(out), {a}, [a, ty, tx, n, c, ih, iw, oh, ow](const Tensor<T>& g) {
    auto* ga = grad_of(a);
    if (!ga) return;
    for (int64_t p = 0; p < n * c; ++p) {
      T* dst = ga->data() + p * ih * iw;
      const T* src = g.data() + p * oh * ow;
      for (int64_t y = 0; y < oh; ++y) {
        const auto& vy = ty[y];
        for (int64_t x = 0; x < ow; ++x) {
          const auto& vx = tx[x];
          const T gv = src[y * ow + x];
          dst[vy.i0 * iw + vx.i0] += static_cast<T>(vy.w0 * vx.w0) * gv;
          dst[vy.i0 * iw + vx.i1] += static_cast<T>(vy.w0 * vx.w1) * gv;
          dst[vy.i1 * iw + vx.i0] += static_cast<T>(vy.w1 * vx.w0) * gv;
          dst[vy.i1 * iw + vx.i1] += static_cast<T>(vy.w1 * vx.w1) * gv;
        }
      }
    }
  });
}

// ---------------------------------------------------------------- linear algebra

// x [R, F], w [O, F], b [O] (optional) -> [R, O].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>()) {
  PANDEPTH_CHECK_ARG(x.shape().size() == 2 && w.shape().size() == 2 && x.dim(1) == w.dim(1),
                     "linear: shape mismatch " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()));
  const int64_t r = x.dim(0), f = x.dim(1), o = w.dim(0);
  Tensor<T> out(Shape{r, o});
  MatMap<T> y(out.data(), r, o);
  ConstMatMap<T> xm(x.value().data(), r, f);
  ConstMatMap<T> wm(w.value().data(), o, f);
  y.noalias() = xm * wm.transpose();
  if (b.defined())
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < o; ++j) out[i * o + j] += b.value()[j];
  std::vector<Var<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_op<T>(std::move(out), parents, [x, w, b, r, f, o](const Tensor<T>& g) {
    ConstMatMap<T> gm(g.data(), r, o);
    if (auto* gx = grad_of(x)) {
      MatMap<T> gxm(gx->data(), r, f);
      gxm.noalias() += gm * ConstMatMap<T>(w.value().data(), o, f);
    }
    if (auto* gw = grad_of(w)) {
      MatMap<T> gwm(gw->data(), o, f);
      gwm.noalias() += gm.transpose() * ConstMatMap<T>(x.value().data(), r, f);
    }
    if (b.defined())
      if (auto* gb = grad_of(b))
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < o; ++j) (*gb)[j] += g[i * o + j];
  });
}

// ---------------------------------------------------------------- convolution

namespace detail {

struct ConvGeom {
  int64_t c, h, w, kh, kw, oh, ow;
  int sh, sw, ph, pw, dh, dw;
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const int64_t ohw = g.oh * g.ow;
  for (int64_t c = 0; c < g.c; ++c)
    for (int64_t i = 0; i < g.kh; ++i)
      for (int64_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * ohw;
        for (int64_t oy = 0; oy < g.oh; ++oy) {
          const int64_t iy = oy * g.sh - g.ph + i * g.dh;
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.ow, T(0));
            continue;
          }
          const T* src = x + (c * g.h + iy) * g.w;
          for (int64_t ox = 0; ox < g.ow; ++ox) {
            const int64_t ix = ox * g.sw - g.pw + j * g.dw;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* x) {
  const int64_t ohw = g.oh * g.ow;
  for (int64_t c = 0; c < g.c; ++c)
    for (int64_t i = 0; i < g.kh; ++i)
      for (int64_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * ohw;
        for (int64_t oy = 0; oy < g.oh; ++oy) {
          const int64_t iy = oy * g.sh - g.ph + i * g.dh;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = x + (c * g.h + iy) * g.w;
          const T* src = row + oy * g.ow;
          for (int64_t ox = 0; ox < g.ow; ++ox) {
            const int64_t ix = ox * g.sw - g.pw + j * g.dw;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

// Dense convolution. x [N, C, H, W], w [O, C, kh, kw], b [O] optional.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, Pair stride, Pair pad,
              Pair dilation) {
  PANDEPTH_CHECK_ARG(x.shape().size() == 4 && w.shape().size() == 4 && x.dim(1) == w.dim(1),
                     "conv2d: shape mismatch " + shape_str(x.shape()) + " * " +
                         shape_str(w.shape()));
  detail::ConvGeom geo{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), 0, 0,
                       stride.h, stride.w, pad.h, pad.w, dilation.h, dilation.w};
  geo.oh = conv_out_size(static_cast<int>(geo.h), static_cast<int>(geo.kh), geo.sh, geo.ph, geo.dh);
  geo.ow = conv_out_size(static_cast<int>(geo.w), static_cast<int>(geo.kw), geo.sw, geo.pw, geo.dw);
  PANDEPTH_CHECK_ARG(geo.oh > 0 && geo.ow > 0, "conv2d: empty output");
  const int64_t n = x.dim(0), o = w.dim(0), ckk = geo.c * geo.kh * geo.kw, ohw = geo.oh * geo.ow;
  const bool pointwise = geo.kh == 1 && geo.kw == 1 && geo.sh == 1 && geo.sw == 1 &&
                         geo.ph == 0 && geo.pw == 0;
  Tensor<T> out(Shape{n, o, geo.oh, geo.ow});
  std::vector<T> cols(pointwise ? 0 : static_cast<size_t>(ckk * ohw));
  ConstMatMap<T> wm(w.value().data(), o, ckk);
  for (int64_t b_i = 0; b_i < n; ++b_i) {
    const T* xin = x.value().data() + b_i * geo.c * geo.h * geo.w;
    const T* colp = xin;
    if (!pointwise) {
      detail::im2col(xin, geo, cols.data());
      colp = cols.data();
    }
    MatMap<T> om(out.data() + b_i * o * ohw, o, ohw);
    om.noalias() = wm * ConstMatMap<T>(colp, ckk, ohw);
    if (b.defined())
      for (int64_t k = 0; k < o; ++k) om.row(k).array() += b.value()[k];
  }
  std::vector<Var<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_op<T>(std::move(out), parents, [x, w, b, geo, n, o, ckk, ohw, pointwise](const Tensor<T>& g) {
    auto* gx = grad_of(x);
    auto* gw = grad_of(w);
    Tensor<T>* gb = b.defined() ? grad_of(b) : nullptr;
    std::vector<T> cols(pointwise ? 0 : static_cast<size_t>(ckk * ohw));
    ConstMatMap<T> wm(w.value().data(), o, ckk);
    for (int64_t b_i = 0; b_i < n; ++b_i) {
      ConstMatMap<T> gm(g.data() + b_i * o * ohw, o, ohw);
      const T* xin = x.value().data() + b_i * geo.c * geo.h * geo.w;
      if (gw) {
        const T* colp = xin;
        if (!pointwise) {
          detail::im2col(xin, geo, cols.data());
          colp = cols.data();
        }
        MatMap<T>(gw->data(), o, ckk).noalias() += gm * ConstMatMap<T>(colp, ckk, ohw).transpose();
      }
      if (gx) {
        T* gxin = gx->data() + b_i * geo.c * geo.h * geo.w;
        if (pointwise) {
          MatMap<T>(gxin, ckk, ohw).noalias() += wm.transpose() * gm;
        } else {
          MatMap<T> cm(cols.data(), ckk, ohw);
          cm.noalias() = wm.transpose() * gm;
          detail::col2im(cols.data(), geo, gxin);
        }
      }
      if (gb)
        for (int64_t k = 0; k < o; ++k) (*gb)[k] += gm.row(k).sum();
    }
  });
}

// Depthwise convolution (one filter per channel). w [C, 1, kh, kw].
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& w, Pair stride, Pair pad, Pair dilation) {
  PANDEPTH_CHECK_ARG(x.shape().size() == 4 && w.shape().size() == 4 && x.dim(1) == w.dim(0) &&
                         w.dim(1) == 1,
                     "depthwise_conv2d: shape mismatch " + shape_str(x.shape()) + " * " +
                         shape_str(w.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t kh = w.dim(2), kw = w.dim(3);
  const int64_t oh = conv_out_size(static_cast<int>(h), static_cast<int>(kh), stride.h, pad.h, dilation.h);
  const int64_t ow = conv_out_size(static_cast<int>(wd), static_cast<int>(kw), stride.w, pad.w, dilation.w);
  PANDEPTH_CHECK_ARG(oh > 0 && ow > 0, "depthwise_conv2d: empty output");
  Tensor<T> out(Shape{n, c, oh, ow});
  const T* xv = x.value().data();
  const T* wv = w.value().data();
  for (int64_t p = 0; p < n * c; ++p) {
    const int64_t ch = p % c;
    const T* src = xv + p * h * wd;
    T* dst = out.data() + p * oh * ow;
    for (int64_t i = 0; i < kh; ++i)
      for (int64_t j = 0; j < kw; ++j) {
        const T wt = wv[(ch * kh + i) * kw + j];
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * stride.h - pad.h + i * dilation.h;
          if (iy < 0 || iy >= h) continue;
          const T* row = src + iy * wd;
          T* drow = dst + oy * ow;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * stride.w - pad.w + j * dilation.w;
            if (ix >= 0 && ix < wd) drow[ox] += wt * row[ix];
          }
        }
      }
  }
  return make_op<T>(std::move(out), {x, w}, [x, w, n, c, h, wd, kh, kw, oh, ow, stride, pad, dilation](const Tensor<T>& g) {
    auto* gx = grad_of(x);
    auto* gw = grad_of(w);
    const T* xv = x.value().data();
    const T* wv = w.value().data();
    for (int64_t p = 0; p < n * c; ++p) {
      const int64_t ch = p % c;
      const T* src = xv + p * h * wd;
      const T* gsrc = g.data() + p * oh * ow;
      for (int64_t i = 0; i < kh; ++i)
        for (int64_t j = 0; j < kw; ++j) {
          const T wt = wv[(ch * kh + i) * kw + j];
          T acc = 0;
          for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t iy = oy * stride.h - pad.h + i * dilation.h;
            if (iy < 0 || iy >= h) continue;
            const T* grow = gsrc + oy * ow;
            for (int64_t ox = 0; ox < ow; ++ox) {
              const int64_t ix = ox * stride.w - pad.w + j * dilation.w;
              if (ix < 0 || ix >= wd) continue;
              acc += grow[ox] * src[iy * wd + ix];
              if (gx) (*gx)[p * h * wd + iy * wd + ix] += wt * grow[ox];
            }
          }
          if (gw) (*gw)[(ch * kh + i) * kw + j] += acc;
        }
    }
  });
}

// Depthwise transposed convolution without padding. w [C, 1, k, k].
// Output size is (H - 1) * stride + k.
template <typename T>
Var<T> depthwise_conv_transpose2d(const Var<T>& x, const Var<T>& w, int stride) {
  PANDEPTH_CHECK_ARG(x.shape().size() == 4 && w.shape().size() == 4 && x.dim(1) == w.dim(0),
                     "depthwise_conv_transpose2d: shape mismatch");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t kh = w.dim(2), kw = w.dim(3);
  const int64_t oh = (h - 1) * stride + kh, ow = (wd - 1) * stride + kw;
  Tensor<T> out(Shape{n, c, oh, ow});
  for (int64_t p = 0; p < n * c; ++p) {
    const int64_t ch = p % c;
    const T* src = x.value().data() + p * h * wd;
    T* dst = out.data() + p * oh * ow;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < wd; ++xx) {
        const T v = src[y * wd + xx];
        for (int64_t i = 0; i < kh; ++i)
          for (int64_t j = 0; j < kw; ++j)
            dst[(y * stride + i) * ow + xx * stride + j] += v * w.value()[(ch * kh + i) * kw + j];
      }
  }
  return make_op<T>(std::move(out), {x, w}, [x, w, n, c, h, wd, kh, kw, oh, ow, stride](const Tensor<T>& g) {
    auto* gx = grad_of(x);
    auto* gw = grad_of(w);
    for (int64_t p = 0; p < n * c; ++p) {
      const int64_t ch = p % c;
      const T* src = x.value().data() + p * h * wd;
      const T* gsrc = g.data() + p * oh * ow;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t xx = 0; xx < wd; ++xx) {
          T acc = 0;
          for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j) {
              const T gv = gsrc[(y * stride + i) * ow + xx * stride + j];
              acc += gv * w.value()[(ch * kh + i) * kw + j];
              if (gw) (*gw)[(ch * kh + i) * kw + j] += gv * src[y * wd + xx];
            }
          if (gx) (*gx)[p * h * wd + y * wd + xx] += acc;
        }
    }
  });
}

// ---------------------------------------------------------------- normalisation

// Batch normalisation over (N, H, W). In training mode batch statistics are
// used and the running estimates updated in place.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum,
                  T eps) {
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.numel() / (n * c), m = n * hw;
  std::vector<T> mu(c), inv_std(c);
  const T* xv = x.value().data();
  for (int64_t k = 0; k < c; ++k) {
    if (training) {
      double s = 0, ss = 0;
      for (int64_t b = 0; b < n; ++b) {
        const T* p = xv + (b * c + k) * hw;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
      }
      const double mean = s / static_cast<double>(m);
      for (int64_t b = 0; b < n; ++b) {
        const T* p = xv + (b * c + k) * hw;
        for (int64_t i = 0; i < hw; ++i) ss += (p[i] - mean) * (p[i] - mean);
      }
      const double var = ss / static_cast<double>(m);
      mu[k] = static_cast<T>(mean);
      inv_std[k] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
      running_mean[k] = (T(1) - momentum) * running_mean[k] + momentum * static_cast<T>(mean);
      running_var[k] = (T(1) - momentum) * running_var[k] + momentum * static_cast<T>(unbiased);
    } else {
      mu[k] = running_mean[k];
      inv_std[k] = T(1) / std::sqrt(running_var[k] + eps);
    }
  }
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t k = 0; k < c; ++k) {
      const int64_t base = (b * c + k) * hw;
      const T gk = gamma.value()[k], bk = beta.value()[k];
      for (int64_t i = 0; i < hw; ++i) {
        const T xh = (xv[base + i] - mu[k]) * inv_std[k];
        xhat[base + i] = xh;
        out[base + i] = gk * xh + bk;
      }
    }
  return make_op<T>(std::move(out), {x, gamma, beta},
                    [x, gamma, beta, xhat = std::move(xhat), inv_std, n, c, hw, m, training](const Tensor<T>& g) {
    auto* gx = grad_of(x);
    auto* gg = grad_of(gamma);
    auto* gbeta = grad_of(beta);
    for (int64_t k = 0; k < c; ++k) {
      T sum_g = 0, sum_gx = 0;
      for (int64_t b = 0; b < n; ++b) {
        const int64_t base = (b * c + k) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          sum_g += g[base + i];
          sum_gx += g[base + i] * xhat[base + i];
        }
      }
      if (gg) (*gg)[k] += sum_gx;
      if (gbeta) (*gbeta)[k] += sum_g;
      if (!gx) continue;
      const T gk = gamma.value()[k];
      const T mm = static_cast<T>(m);
      for (int64_t b = 0; b < n; ++b) {
        const int64_t base = (b * c + k) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          if (training)
            (*gx)[base + i] +=
                gk * inv_std[k] * (g[base + i] - sum_g / mm - xhat[base + i] * sum_gx / mm);
          else
            (*gx)[base + i] += gk * inv_std[k] * g[base + i];
        }
      }
    }
  });
}

// ---------------------------------------------------------------- point features

// Gathers per-pixel feature vectors. x [1, C, H, W] -> [P, C].
template <typename T>
Var<T> gather_pixels(const Var<T>& x, std::vector<int64_t> pixels) {
  const int64_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const int64_t p = static_cast<int64_t>(pixels.size());
  Tensor<T> out(Shape{p, c});
  for (int64_t i = 0; i < p; ++i)
    for (int64_t k = 0; k < c; ++k) out[i * c + k] = x.value()[k * hw + pixels[i]];
  return make_op<T>(std::move(out), {x}, [x, pixels = std::move(pixels), c, hw](const Tensor<T>& g) {
    if (auto* gx = grad_of(x))
      for (size_t i = 0; i < pixels.size(); ++i)
        for (int64_t k = 0; k < c; ++k) (*gx)[k * hw + pixels[i]] += g[i * c + k];
  });
}

// Inverse of gather_pixels: writes rows of f [P, C] to their pixels, zeros
// elsewhere. Pixels must be distinct.
template <typename T>
Var<T> scatter_pixels(const Var<T>& f, std::vector<int64_t> pixels, int64_t h, int64_t w) {
  const int64_t c = f.dim(1), hw = h * w;
  Tensor<T> out(Shape{1, c, h, w});
  for (size_t i = 0; i < pixels.size(); ++i)
    for (int64_t k = 0; k < c; ++k) out[k * hw + pixels[i]] = f.value()[i * c + k];
  return make_op<T>(std::move(out), {f}, [f, pixels = std::move(pixels), c, hw](const Tensor<T>& g) {
    if (auto* gf = grad_of(f))
      for (size_t i = 0; i < pixels.size(); ++i)
        for (int64_t k = 0; k < c; ++k) (*gf)[i * c + k] += g[k * hw + pixels[i]];
  });
}

// Neighbourhood outer-product aggregation used by the continuous convolution:
//   out[p, h*C + c] = sum_j a[p*K + j, h] * f[nbr[p*K + j], c]   for h < M
//   out[p, M*C + c] = sum_j f[nbr[p*K + j], c]
// with a [P*K, M], f [P, C], nbr [P*K]. Output is [P, (M+1)*C].
template <typename T>
Var<T> neighbor_outer(const Var<T>& a, const Var<T>& f, std::vector<int64_t> nbr, int64_t k) {
  const int64_t p = f.dim(0), c = f.dim(1), m = a.dim(1);
  PANDEPTH_CHECK_ARG(a.dim(0) == p * k && static_cast<int64_t>(nbr.size()) == p * k,
                     "neighbor_outer: shape mismatch");
  const int64_t row = (m + 1) * c;
  Tensor<T> out(Shape{p, row});
  const T* av = a.value().data();
  const T* fv = f.value().data();
  for (int64_t i = 0; i < p; ++i) {
    T* o = out.data() + i * row;
    for (int64_t j = 0; j < k; ++j) {
      const T* ar = av + (i * k + j) * m;
      const T* fr = fv + nbr[i * k + j] * c;
      for (int64_t hh = 0; hh < m; ++hh) {
        const T s = ar[hh];
        T* oh = o + hh * c;
        for (int64_t cc = 0; cc < c; ++cc) oh[cc] += s * fr[cc];
      }
      T* ob = o + m * c;
      for (int64_t cc = 0; cc < c; ++cc) ob[cc] += fr[cc];
    }
  }
  return make_op<T>(std::move(out), {a, f}, [a, f, nbr = std::move(nbr), p, c, m, k, row](const Tensor<T>& g) {
    auto* ga = grad_of(a);
    auto* gf = grad_of(f);
    const T* av = a.value().data();
    const T* fv = f.value().data();
    for (int64_t i = 0; i < p; ++i) {
      const T* go = g.data() + i * row;
      for (int64_t j = 0; j < k; ++j) {
        const int64_t q = nbr[i * k + j];
        const T* ar = av + (i * k + j) * m;
        const T* fr = fv + q * c;
        for (int64_t hh = 0; hh < m; ++hh) {
          const T* gh = go + hh * c;
          if (ga) {
            T acc = 0;
            for (int64_t cc = 0; cc < c; ++cc) acc += gh[cc] * fr[cc];
            (*ga)[(i * k + j) * m + hh] += acc;
          }
          if (gf) {
            T* gfr = gf->data() + q * c;
            for (int64_t cc = 0; cc < c; ++cc) gfr[cc] += ar[hh] * gh[cc];
          }
        }
        if (gf) {
          T* gfr = gf->data() + q * c;
          const T* gb = go + m * c;
          for (int64_t cc = 0; cc < c; ++cc) gfr[cc] += gb[cc];
        }
      }
    }
  });
}

}  // namespace pandepth::ops

#endif  // PANDEPTH_OPS_HPP_
