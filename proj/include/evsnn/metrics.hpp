#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "evsnn/ops.hpp"
#include "evsnn/tensor.hpp"

namespace evsnn::metrics {

/// Maps the 1st/99th percentiles of `img` to 0/1 and clamps. A constant
/// image maps to 0.5 everywhere. Output has the input's shape.
inline Tensor histogram_normalize(const Tensor& img, double q_lo = 1.0, double q_hi = 99.0) {
  NoGradGuard ng;
  Tensor flat = Tensor(Shape{1, img.numel()}, std::vector<double>(img.data().begin(), img.data().end()));
  return percentile_rescale(flat, q_lo, q_hi).reshape(img.shape());
}

inline void require_image_pair(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.rank() < 2 || a.numel() == 0) throw ShapeError(std::string(op) + ": expected an image");
}

inline double mse(const Tensor& a, const Tensor& b) {
  require_image_pair(a, b, "mse");
  auto x = a.data();
  auto y = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Normalized 1-D Gaussian taps.
inline std::vector<double> gaussian_taps(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = static_cast<double>(size - 1) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

/// Largest odd window not exceeding the requested size or the image.
inline std::size_t effective_window(std::size_t requested, std::size_t h, std::size_t w) {
  std::size_t win = std::min({requested, h, w});
  if (win % 2 == 0) --win;
  return std::max<std::size_t>(win, 1);
}

/// Mean SSIM over the valid region of Gaussian-weighted local windows.
/// Leading dimensions (if any) are treated as separate images and averaged.
inline double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt = {}) {
  require_image_pair(a, b, "ssim");
  const std::size_t h = a.dim(a.rank() - 2);
  const std::size_t w = a.dim(a.rank() - 1);
  const std::size_t images = a.numel() / (h * w);
  const std::size_t win = effective_window(opt.window, h, w);
  const auto g = gaussian_taps(win, opt.sigma);
  const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
  const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);
  const std::size_t oh = h - win + 1, ow = w - win + 1;

  double total = 0.0;
  for (std::size_t n = 0; n < images; ++n) {
    const double* x = a.data().data() + n * h * w;
    const double* y = b.data().data() + n * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (std::size_t u = 0; u < win; ++u)
          for (std::size_t v = 0; v < win; ++v) {
            const double wt = g[u] * g[v];
            const double px = x[(i + u) * w + (j + v)];
            const double py = y[(i + u) * w + (j + v)];
            mx += wt * px;
            my += wt * py;
            xx += wt * px * px;
            yy += wt * py * py;
            xy += wt * px * py;
          }
        const double vx = xx - mx * mx;
        const double vy = yy - my * my;
        const double cxy = xy - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
  }
  return total / static_cast<double>(images * oh * ow);
}

}  // namespace evsnn::metrics
