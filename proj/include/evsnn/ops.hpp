#pragma once

// Differentiable primitives. Each op computes its forward value eagerly and,
// when recording, registers an adjoint that accumulates into input gradients.

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <optional>

#include "evsnn/tensor.hpp"

namespace evsnn {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(t.shape()));
}

template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  require_same_shape(a, b, name);
  const auto n = a.numel();
  std::vector<double> out(n);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i], bd[i]);
  return make_result(a.shape(), std::move(out), {&a, &b}, [a, b, da, db](const TensorImpl& o) {
    auto ad = a.data();
    auto bd = b.data();
    if (double* ga = grad_of(a))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * da(ad[i], bd[i]);
    if (double* gb = grad_of(b))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i] * db(ad[i], bd[i]);
  });
}

template <class F, class D>
Tensor unary_op(const Tensor& a, F f, D d) {
  const auto n = a.numel();
  std::vector<double> out(n);
  auto ad = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i]);
  return make_result(a.shape(), std::move(out), {&a}, [a, d](const TensorImpl& o) {
    auto ad = a.data();
    double* ga = grad_of(a);
    for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * d(ad[i], o.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary_op(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
  return detail::unary_op(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor square(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// |x| with subgradient 0 at the origin.
inline Tensor abs(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

/// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return detail::unary_op(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return x > lo && x < hi ? 1.0 : 0.0; });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor reciprocal(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

/// Multiplies every element of `a` by the single value held in `s`.
inline Tensor mul_by_scalar_tensor(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("mul_by_scalar_tensor: scale must hold one value");
  const double k = s[0];
  std::vector<double> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * k;
  return detail::make_result(a.shape(), std::move(out), {&a, &s}, [a, s](const detail::TensorImpl& o) {
    const double k = s[0];
    auto ad = a.data();
    if (double* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * k;
    if (double* gs = detail::grad_of(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * ad[i];
      gs[0] += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result({1}, {s}, {&a}, [a](const detail::TensorImpl& o) {
    double* ga = detail::grad_of(a);
    const double g = o.grad[0];
    for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g;
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// Structural

/// Concatenates tensors of equal rank along `axis`.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: empty input list");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s0.size(); ++d)
      if (d != axis && p.dim(d) != s0[d]) throw ShapeError("concat: incompatible shapes");
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
  const std::size_t out_axis = out_shape[axis];

  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis) * inner;
    auto pd = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pd.begin() + o * len, len, out.begin() + (o * out_axis * inner + offset));
    offset += len;
  }
  return detail::make_result_multi(out_shape, std::move(out), parts,
                                   [parts, outer, inner, out_axis, axis](const detail::TensorImpl& o) {
                                     std::size_t offset = 0;
                                     for (const auto& p : parts) {
                                       const std::size_t len = p.dim(axis) * inner;
                                       if (double* gp = detail::grad_of(p))
                                         for (std::size_t q = 0; q < outer; ++q)
                                           for (std::size_t i = 0; i < len; ++i)
                                             gp[q * len + i] += o.grad[q * out_axis * inner + offset + i];
                                       offset += len;
                                     }
                                   });
}

/// Circular shift on the two trailing axes: out[.., y, x] = in[.., y - dy, x - dx].
inline Tensor roll2d(const Tensor& a, long dy, long dx) {
  if (a.rank() < 2) throw ShapeError("roll2d: rank must be >= 2");
  const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  const std::size_t planes = a.numel() / (h * w);
  auto wrap = [](long v, std::size_t n) {
    long m = v % static_cast<long>(n);
    return static_cast<std::size_t>(m < 0 ? m + static_cast<long>(n) : m);
  };
  std::vector<std::size_t> src(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      src[y * w + x] = wrap(static_cast<long>(y) - dy, h) * w + wrap(static_cast<long>(x) - dx, w);
  std::vector<double> out(a.numel());
  auto ad = a.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h * w; ++i) out[p * h * w + i] = ad[p * h * w + src[i]];
  return detail::make_result(a.shape(), std::move(out), {&a},
                             [a, src = std::move(src), planes, hw = h * w](const detail::TensorImpl& o) {
                               double* ga = detail::grad_of(a);
                               for (std::size_t p = 0; p < planes; ++p)
                                 for (std::size_t i = 0; i < hw; ++i) ga[p * hw + src[i]] += o.grad[p * hw + i];
                             });
}

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

namespace detail {

struct ConvGeometry {
  std::size_t n, c_in, h, w, c_out, k, stride, pad, groups, h_out, w_out;
  std::size_t cin_g() const { return c_in / groups; }
  std::size_t cout_g() const { return c_out / groups; }
  std::size_t col_rows() const { return cin_g() * k * k; }
  std::size_t col_cols() const { return h_out * w_out; }
};

inline ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, const Conv2dOptions& opt) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (opt.stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (opt.groups < 1) throw ShapeError("conv2d: groups must be >= 1");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c_in = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.c_out = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = opt.stride;
  g.pad = opt.padding;
  g.groups = opt.groups;
  if (weight.dim(3) != g.k) throw ShapeError("conv2d: only square kernels are supported");
  if (g.c_in % g.groups || g.c_out % g.groups) throw ShapeError("conv2d: channels not divisible by groups");
  if (weight.dim(1) != g.cin_g())
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1) * g.groups) + " input channels, got " +
                     std::to_string(g.c_in));
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) throw ShapeError("conv2d: kernel larger than padded input");
  g.h_out = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.w_out = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  return g;
}

/// Gathers one (sample, group) slice of the input into a col matrix.
inline void im2col(const double* in, const ConvGeometry& g, double* col) {
  const std::size_t hw_out = g.col_cols();
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    const double* plane = in + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((c * g.k + ky) * g.k + kx) * hw_out;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          double* dst = row + oy * g.w_out;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.w_out, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
  }
}

inline void col2im(const double* col, const ConvGeometry& g, double* in_grad) {
  const std::size_t hw_out = g.col_cols();
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    double* plane = in_grad + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((c * g.k + ky) * g.k + kx) * hw_out;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const double* src = row + oy * g.w_out;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
  }
}

}  // namespace detail

/// Cross-correlation, N×C_in×H×W with C_out×(C_in/groups)×k×k weights.
/// `bias` may be undefined.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt = {}) {
  using namespace detail;
  const ConvGeometry g = conv_geometry(input, weight, opt);
  if (bias.defined() && bias.numel() != g.c_out) throw ShapeError("conv2d: bias size mismatch");

  const std::size_t rows = g.col_rows(), cols = g.col_cols();
  std::vector<double> out(g.n * g.c_out * cols);
  std::vector<double> col(rows * cols);
  auto in = input.data();
  auto wd = weight.data();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t gr = 0; gr < g.groups; ++gr) {
      im2col(in.data() + (n * g.c_in + gr * g.cin_g()) * g.h * g.w, g, col.data());
      CMapMat wm(wd.data() + gr * g.cout_g() * rows, g.cout_g(), rows);
      CMapMat cm(col.data(), rows, cols);
      MapMat om(out.data() + (n * g.c_out + gr * g.cout_g()) * cols, g.cout_g(), cols);
      om.noalias() = wm * cm;
    }
  if (bias.defined()) {
    auto bd = bias.data();
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t c = 0; c < g.c_out; ++c) {
        double* o = out.data() + (n * g.c_out + c) * cols;
        for (std::size_t i = 0; i < cols; ++i) o[i] += bd[c];
      }
  }

  return make_result({g.n, g.c_out, g.h_out, g.w_out}, std::move(out), {&input, &weight, &bias},
                     [input, weight, bias, g](const TensorImpl& o) {
                       const std::size_t rows = g.col_rows(), cols = g.col_cols();
                       double* gin = grad_of(input);
                       double* gw = grad_of(weight);
                       double* gb = grad_of(bias);
                       auto in = input.data();
                       auto wd = weight.data();
                       std::vector<double> col(rows * cols);
                       std::vector<double> dcol(gin ? rows * cols : 0);
                       for (std::size_t n = 0; n < g.n; ++n)
                         for (std::size_t gr = 0; gr < g.groups; ++gr) {
                           CMapMat dout(o.grad.data() + (n * g.c_out + gr * g.cout_g()) * cols, g.cout_g(), cols);
                           if (gw) {
                             im2col(in.data() + (n * g.c_in + gr * g.cin_g()) * g.h * g.w, g, col.data());
                             MapMat gwm(gw + gr * g.cout_g() * rows, g.cout_g(), rows);
                             gwm.noalias() += dout * CMapMat(col.data(), rows, cols).transpose();
                           }
                           if (gin) {
                             CMapMat wm(wd.data() + gr * g.cout_g() * rows, g.cout_g(), rows);
                             MapMat(dcol.data(), rows, cols).noalias() = wm.transpose() * dout;
                             col2im(dcol.data(), g, gin + (n * g.c_in + gr * g.cin_g()) * g.h * g.w);
                           }
                         }
                       if (gb)
                         for (std::size_t n = 0; n < g.n; ++n)
                           for (std::size_t c = 0; c < g.c_out; ++c) {
                             const double* d = o.grad.data() + (n * g.c_out + c) * cols;
                             double acc = 0.0;
                             for (std::size_t i = 0; i < cols; ++i) acc += d[i];
                             gb[c] += acc;
                           }
                     });
}

/// Nearest-neighbour ×2 upsampling of the two trailing axes of an N×C×H×W tensor.
inline Tensor upsample_nearest2x(const Tensor& input) {
  detail::require_rank(input, 4, "upsample_nearest2x");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t h2 = 2 * h, w2 = 2 * w;
  std::vector<double> out(n * c * h2 * w2);
  auto in = input.data();
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < h2; ++y)
      for (std::size_t x = 0; x < w2; ++x) out[(p * h2 + y) * w2 + x] = in[(p * h + y / 2) * w + x / 2];
  return detail::make_result({n, c, h2, w2}, std::move(out), {&input},
                             [input, n, c, h, w](const detail::TensorImpl& o) {
                               double* gi = detail::grad_of(input);
                               const std::size_t h2 = 2 * h, w2 = 2 * w;
                               for (std::size_t p = 0; p < n * c; ++p)
                                 for (std::size_t y = 0; y < h2; ++y)
                                   for (std::size_t x = 0; x < w2; ++x)
                                     gi[(p * h + y / 2) * w + x / 2] += o.grad[(p * h2 + y) * w2 + x];
                             });
}

/// y = x Wᵀ + b with x: N×F_in, W: F_out×F_in. `bias` may be undefined.
inline Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  detail::require_rank(input, 2, "linear input");
  detail::require_rank(weight, 2, "linear weight");
  const std::size_t n = input.dim(0), fin = input.dim(1), fout = weight.dim(0);
  if (weight.dim(1) != fin) throw ShapeError("linear: weight expects " + std::to_string(weight.dim(1)) + " features");
  if (bias.defined() && bias.numel() != fout) throw ShapeError("linear: bias size mismatch");
  std::vector<double> out(n * fout);
  auto x = input.data();
  auto wd = weight.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < fout; ++o) {
      double acc = bias.defined() ? bias[o] : 0.0;
      for (std::size_t f = 0; f < fin; ++f) acc += x[i * fin + f] * wd[o * fin + f];
      out[i * fout + o] = acc;
    }
  return detail::make_result({n, fout}, std::move(out), {&input, &weight, &bias},
                             [input, weight, bias, n, fin, fout](const detail::TensorImpl& o) {
                               auto x = input.data();
                               auto wd = weight.data();
                               double* gx = detail::grad_of(input);
                               double* gw = detail::grad_of(weight);
                               double* gb = detail::grad_of(bias);
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t q = 0; q < fout; ++q) {
                                   const double g = o.grad[i * fout + q];
                                   if (gb) gb[q] += g;
                                   for (std::size_t f = 0; f < fin; ++f) {
                                     if (gx) gx[i * fin + f] += g * wd[q * fin + f];
                                     if (gw) gw[q * fin + f] += g * x[i * fin + f];
                                   }
                                 }
                             });
}

// ---------------------------------------------------------------------------
// Pooling

/// Mean over H×W per (sample, channel): N×C×H×W → N×C.
inline Tensor global_avg_pool(const Tensor& input) {
  detail::require_rank(input, 4, "global_avg_pool");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  std::vector<double> out(n * c);
  auto in = input.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += in[p * hw + i];
    out[p] = acc / static_cast<double>(hw);
  }
  return detail::make_result({n, c}, std::move(out), {&input}, [input, n, c, hw](const detail::TensorImpl& o) {
    double* gi = detail::grad_of(input);
    for (std::size_t p = 0; p < n * c; ++p) {
      const double g = o.grad[p] / static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) gi[p * hw + i] += g;
    }
  });
}

/// Max over H×W per (sample, channel). The adjoint goes to the first argmax.
inline Tensor global_max_pool(const Tensor& input) {
  detail::require_rank(input, 4, "global_max_pool");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  std::vector<double> out(n * c);
  std::vector<std::size_t> arg(n * c);
  auto in = input.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < hw; ++i)
      if (in[p * hw + i] > in[p * hw + best]) best = i;
    arg[p] = best;
    out[p] = in[p * hw + best];
  }
  return detail::make_result({n, c}, std::move(out), {&input},
                             [input, arg = std::move(arg), hw](const detail::TensorImpl& o) {
                               double* gi = detail::grad_of(input);
                               for (std::size_t p = 0; p < arg.size(); ++p) gi[p * hw + arg[p]] += o.grad[p];
                             });
}

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

enum class BnMode { kTrain, kEval };

/// Per-channel normalization of N×C×H×W. Train mode normalizes with biased
/// batch statistics and, when `update` is set, blends the unbiased variance
/// and mean into the running buffers. Eval mode uses the running buffers.
inline Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, const BatchNormStats& stats,
                           BnMode mode, BatchNormStats* update = nullptr) {
  detail::require_rank(input, 4, "batch_norm2d");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (gamma.numel() != c || beta.numel() != c || stats.running_mean.size() != c || stats.running_var.size() != c)
    throw ShapeError("batch_norm2d: parameter size mismatch");
  const double eps = stats.eps;
  const double count = static_cast<double>(n * hw);
  auto in = input.data();

  std::vector<double> mu(c), inv_std(c);
  if (mode == BnMode::kTrain) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) s += in[(b * c + ch) * hw + i];
      mu[ch] = s / count;
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = in[(b * c + ch) * hw + i] - mu[ch];
          v += d * d;
        }
      v /= count;
      inv_std[ch] = 1.0 / std::sqrt(v + eps);
      if (update) {
        const double unbiased = count > 1.0 ? v * count / (count - 1.0) : v;
        update->running_mean[ch] = (1.0 - update->momentum) * update->running_mean[ch] + update->momentum * mu[ch];
        update->running_var[ch] = (1.0 - update->momentum) * update->running_var[ch] + update->momentum * unbiased;
      }
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = stats.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.running_var[ch] + eps);
    }
  }

  std::vector<double> xhat(input.numel()), out(input.numel());
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t idx = (b * c + ch) * hw + i;
        xhat[idx] = (in[idx] - mu[ch]) * inv_std[ch];
        out[idx] = gd[ch] * xhat[idx] + bd[ch];
      }

  return detail::make_result(
      input.shape(), std::move(out), {&input, &gamma, &beta},
      [input, gamma, beta, mode, n, c, hw, count, xhat = std::move(xhat), inv_std](const detail::TensorImpl& o) {
        double* gi = detail::grad_of(input);
        double* gg = detail::grad_of(gamma);
        double* gb = detail::grad_of(beta);
        auto gd = gamma.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t idx = (b * c + ch) * hw + i;
              sum_g += o.grad[idx];
              sum_gx += o.grad[idx] * xhat[idx];
            }
          if (gg) gg[ch] += sum_gx;
          if (gb) gb[ch] += sum_g;
          if (!gi) continue;
          const double scale = gd[ch] * inv_std[ch];
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t idx = (b * c + ch) * hw + i;
              if (mode == BnMode::kTrain)
                gi[idx] += scale * (o.grad[idx] - sum_g / count - xhat[idx] * sum_gx / count);
              else
                gi[idx] += scale * o.grad[idx];
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Robust percentile rescale

/// Linear-interpolated percentile (q in [0,100]) of unsorted values.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ShapeError("percentile of empty range");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double f = pos - static_cast<double>(lo);
  return values[lo] + f * (values[hi] - values[lo]);
}

/// Per-sample rescale mapping the `q_lo`/`q_hi` percentiles to 0/1 with
/// clamping. A sample whose percentiles coincide maps to 0.5 everywhere.
/// The adjoint includes the dependence of both percentiles on the elements
/// they interpolate.
inline Tensor percentile_rescale(const Tensor& input, double q_lo = 1.0, double q_hi = 99.0) {
  if (input.rank() < 1 || input.numel() == 0) throw ShapeError("percentile_rescale: empty input");
  const std::size_t n = input.dim(0);
  const std::size_t m = input.numel() / n;
  auto in = input.data();

  struct Pick {
    std::size_t lo_a, lo_b, hi_a, hi_b;
    double lo_f, hi_f, p_lo, p_hi;
    bool degenerate;
  };
  std::vector<Pick> picks(n);
  std::vector<double> out(input.numel());
  std::vector<std::size_t> idx(m);
  for (std::size_t s = 0; s < n; ++s) {
    const double* x = in.data() + s * m;
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [x](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    auto locate = [&](double q, std::size_t& a, std::size_t& b, double& f) {
      const double pos = q / 100.0 * static_cast<double>(m - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      a = idx[lo];
      b = idx[std::min(lo + 1, m - 1)];
      f = pos - static_cast<double>(lo);
    };
    Pick& p = picks[s];
    locate(q_lo, p.lo_a, p.lo_b, p.lo_f);
    locate(q_hi, p.hi_a, p.hi_b, p.hi_f);
    p.p_lo = x[p.lo_a] + p.lo_f * (x[p.lo_b] - x[p.lo_a]);
    p.p_hi = x[p.hi_a] + p.hi_f * (x[p.hi_b] - x[p.hi_a]);
    p.degenerate = !(p.p_hi > p.p_lo);
    double* y = out.data() + s * m;
    for (std::size_t i = 0; i < m; ++i) {
      if (p.degenerate) {
        y[i] = 0.5;
      } else {
        const double r = (x[i] - p.p_lo) / (p.p_hi - p.p_lo);
        y[i] = std::clamp(r, 0.0, 1.0);
      }
    }
  }
  return detail::make_result(input.shape(), std::move(out), {&input},
                             [input, picks = std::move(picks), m](const detail::TensorImpl& o) {
                               double* gi = detail::grad_of(input);
                               auto in = input.data();
                               for (std::size_t s = 0; s < picks.size(); ++s) {
                                 const Pick& p = picks[s];
                                 if (p.degenerate) continue;
                                 const double* x = in.data() + s * m;
                                 const double* g = o.grad.data() + s * m;
                                 double* gx = gi + s * m;
                                 const double span = p.p_hi - p.p_lo;
                                 double d_lo = 0.0, d_hi = 0.0;
                                 for (std::size_t i = 0; i < m; ++i) {
                                   const double r = (x[i] - p.p_lo) / span;
                                   if (r <= 0.0 || r >= 1.0) continue;  // clamped
                                   gx[i] += g[i] / span;
                                   // dr/dp_lo = (r - 1)/span, dr/dp_hi = -r/span
                                   d_lo += g[i] * (r - 1.0) / span;
                                   d_hi += g[i] * (-r) / span;
                                 }
                                 gx[p.lo_a] += d_lo * (1.0 - p.lo_f);
                                 gx[p.lo_b] += d_lo * p.lo_f;
                                 gx[p.hi_a] += d_hi * (1.0 - p.hi_f);
                                 gx[p.hi_b] += d_hi * p.hi_f;
                               }
                             });
}

}  // namespace evsnn
