#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "evsnn/metrics.hpp"
#include "evsnn/ops.hpp"
#include "evsnn/synthetic.hpp"
#include "evsnn/tensor.hpp"

namespace evsnn {

/// Per-sample differentiable histogram normalization of N×1×H×W images.
inline Tensor normalize_prediction(const Tensor& pred) { return percentile_rescale(pred, 1.0, 99.0); }

inline Tensor l1_loss(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "l1_loss");
  return mean(abs(sub(a, b)));
}

/// Differentiable mean SSIM of N×1×H×W images, same window rule as metrics::ssim.
inline Tensor ssim_tensor(const Tensor& a, const Tensor& b, const metrics::SsimOptions& opt = {}) {
  detail::require_same_shape(a, b, "ssim_tensor");
  if (a.rank() != 4 || a.dim(1) != 1) throw ShapeError("ssim_tensor: expected N×1×H×W, got " + shape_str(a.shape()));
  const std::size_t win = metrics::effective_window(opt.window, a.dim(2), a.dim(3));
  const auto g = metrics::gaussian_taps(win, opt.sigma);
  std::vector<double> k(win * win);
  for (std::size_t u = 0; u < win; ++u)
    for (std::size_t v = 0; v < win; ++v) k[u * win + v] = g[u] * g[v];
  const Tensor kernel({1, 1, win, win}, std::move(k));
  const Tensor none;
  auto blur = [&](const Tensor& t) { return conv2d(t, kernel, none); };
  const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
  const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);
  const Tensor mx = blur(a), my = blur(b);
  const Tensor mxx = mul(mx, mx), myy = mul(my, my), mxy = mul(mx, my);
  const Tensor vx = sub(blur(mul(a, a)), mxx);
  const Tensor vy = sub(blur(mul(b, b)), myy);
  const Tensor cxy = sub(blur(mul(a, b)), mxy);
  const Tensor num = mul(add_scalar(mul_scalar(mxy, 2.0), c1), add_scalar(mul_scalar(cxy, 2.0), c2));
  const Tensor den = mul(add_scalar(add(mxx, myy), c1), add_scalar(add(vx, vy), c2));
  return mean(div(num, den));
}

/// L1 + 0.5·(1 - SSIM) between the histogram-normalized prediction and `gt`.
inline Tensor reconstruction_loss(const Tensor& pred, const Tensor& gt) {
  detail::require_same_shape(pred, gt, "reconstruction_loss");
  const Tensor p = normalize_prediction(pred);
  return add(l1_loss(p, gt), mul_scalar(add_scalar(neg(ssim_tensor(p, gt)), 1.0), 0.5));
}

/// Mean |I_k - warp(I_{k-1}, flow)|, where the warp is the generator's
/// wrap-around integer translation (every pixel is valid).
inline Tensor temporal_consistency_loss(const Tensor& current, const Tensor& previous, Shift flow) {
  detail::require_same_shape(current, previous, "temporal_consistency_loss");
  return mean(abs(sub(current, roll2d(previous, flow.dy, flow.dx))));
}

struct LossWeights {
  double lambda = 1.0;
  std::size_t l0 = 2;
};

/// Σ_k L_R(pred_k, gt_k) + λ Σ_{k >= L0} L_TC(hn(pred_k), hn(pred_{k-1})).
/// `first_index` is the global frame index of preds[0]; `previous` is the
/// (normalized) prediction for frame first_index - 1 when one exists.
inline Tensor total_loss(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                         const std::vector<Shift>& flows, const LossWeights& w, std::size_t first_index = 0,
                         const std::optional<Tensor>& previous = std::nullopt) {
  if (preds.size() != gts.size() || preds.size() != flows.size())
    throw ContractError("total_loss: preds, gts and flows must have equal length");
  if (preds.empty()) throw ContractError("total_loss: empty segment");
  Tensor total = Tensor::scalar(0.0);
  std::vector<Tensor> normed;
  normed.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    detail::require_same_shape(preds[i], gts[i], "total_loss");
    normed.push_back(normalize_prediction(preds[i]));
    const Tensor& p = normed.back();
    total = add(total, add(l1_loss(p, gts[i]), mul_scalar(add_scalar(neg(ssim_tensor(p, gts[i])), 1.0), 0.5)));
  }
  if (w.lambda != 0.0) {
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const std::size_t k = first_index + i;
      if (k < w.l0 || k == 0) continue;
      const Tensor* prev = i > 0 ? &normed[i - 1] : (previous ? &*previous : nullptr);
      if (!prev) continue;
      total = add(total, mul_scalar(temporal_consistency_loss(normed[i], *prev, flows[i]), w.lambda));
    }
  }
  return total;
}

}  // namespace evsnn
