#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "evsnn/neurons.hpp"
#include "evsnn/ops.hpp"
#include "evsnn/tensor.hpp"

namespace evsnn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Compares the recorded gradient of scalar `f` at leaf `x` with central
/// differences of step `h`. Error per coordinate is
/// |g_analytic - g_fd| / max(|g_fd|, 1e-8). When `coords` is given only those
/// coordinates are probed.
inline GradCheckResult finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                               double h = 1e-3,
                                               std::optional<std::vector<std::size_t>> coords = std::nullopt) {
  if (!x.is_leaf()) throw ContractError("finite_difference_check: x must be a leaf tensor");
  const bool had_rg = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  {
    Tensor y = f(x);
    y.backward();
  }
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  x.zero_grad();

  std::vector<std::size_t> probe;
  if (coords) {
    probe = *coords;
  } else {
    probe.resize(x.numel());
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = i;
  }

  GradCheckResult res;
  res.analytic.reserve(probe.size());
  res.numeric.reserve(probe.size());
  NoGradGuard ng;
  auto data = x.mutable_data();
  for (std::size_t i : probe) {
    const double orig = data[i];
    data[i] = orig + h;
    const double fp = f(x).item();
    data[i] = orig - h;
    const double fm = f(x).item();
    data[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double err = std::fabs(analytic[i] - fd) / std::max(std::fabs(fd), 1e-8);
    res.analytic.push_back(analytic[i]);
    res.numeric.push_back(fd);
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_index = i;
    }
  }
  x.set_requires_grad(had_rg);
  return res;
}


struct NamedCheck {
  std::string name;
  double error = 0.0;
  double tolerance = 1e-4;
  bool passed() const { return error < tolerance; }
};

namespace detail {

inline Tensor random_tensor(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(shape_numel(shape));
  for (double& v : d) v = lo + (hi - lo) * static_cast<double>(gen() >> 11) * 0x1.0p-53;
  return Tensor(std::move(shape), std::move(d));
}

/// Values at least `gap` apart in random order (no sorting ties, distinct maxima).
inline Tensor spaced_tensor(Shape shape, std::mt19937_64& gen, double gap = 0.1) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = gap * (static_cast<double>(i) - static_cast<double>(n) / 2.0);
  for (std::size_t i = n; i > 1; --i) std::swap(d[i - 1], d[gen() % i]);
  return Tensor(std::move(shape), std::move(d));
}

}  // namespace detail

/// Central-difference checks of every differentiable primitive. Each check
/// reduces the op output with fixed random weights so no gradient vanishes
/// by symmetry.
inline std::vector<NamedCheck> primitive_gradchecks(std::uint64_t seed = 7, double h = 1e-5) {
  std::mt19937_64 gen(seed);
  std::vector<NamedCheck> out;
  auto reduce = [](const Tensor& y, const Tensor& c) { return sum(mul(y, c)); };
  auto check = [&](const std::string& name, Tensor x, const std::function<Tensor(const Tensor&)>& op) {
    Tensor probe;
    {
      NoGradGuard ng;
      probe = op(x);
    }
    const Tensor c = detail::random_tensor(probe.shape(), gen, 0.5, 1.5);
    auto f = [&](const Tensor& t) { return reduce(op(t), c); };
    out.push_back({name, finite_difference_check(f, x, h).max_rel_error});
  };
  auto rnd = [&](Shape s, double lo = -1.0, double hi = 1.0) { return detail::random_tensor(std::move(s), gen, lo, hi); };

  const Tensor other = rnd({3, 4});
  const Tensor positive = rnd({3, 4}, 0.5, 2.0);
  check("add", rnd({3, 4}), [&](const Tensor& t) { return add(t, other); });
  check("sub", rnd({3, 4}), [&](const Tensor& t) { return sub(other, t); });
  check("mul", rnd({3, 4}), [&](const Tensor& t) { return mul(t, other); });
  check("div.numerator", rnd({3, 4}), [&](const Tensor& t) { return div(t, positive); });
  check("div.denominator", rnd({3, 4}, 0.5, 2.0), [&](const Tensor& t) { return div(other, t); });
  check("add_scalar", rnd({5}), [](const Tensor& t) { return add_scalar(t, 0.3); });
  check("mul_scalar", rnd({5}), [](const Tensor& t) { return mul_scalar(t, -1.7); });
  check("square", rnd({5}), [](const Tensor& t) { return square(t); });
  check("abs", detail::spaced_tensor({6}, gen), [](const Tensor& t) { return abs(add_scalar(t, 0.05)); });
  check("clamp", detail::spaced_tensor({8}, gen), [](const Tensor& t) { return clamp(add_scalar(t, 0.05), -0.2, 0.2); });
  check("sigmoid", rnd({6}, -3, 3), [](const Tensor& t) { return sigmoid(t); });
  check("reciprocal", rnd({6}, 0.5, 2.0), [](const Tensor& t) { return reciprocal(t); });
  {
    const Tensor a = rnd({2, 3});
    check("mul_by_scalar_tensor.scale", rnd({1}), [&](const Tensor& t) { return mul_by_scalar_tensor(a, t); });
  }
  check("sum", rnd({2, 3}), [](const Tensor& t) { return sum(t); });
  check("mean", rnd({2, 3}), [](const Tensor& t) { return mean(t); });
  check("reshape", rnd({2, 3}), [](const Tensor& t) { return t.reshape({3, 2}); });
  {
    const Tensor b = rnd({2, 2, 3, 3});
    check("concat.axis1", rnd({2, 1, 3, 3}), [&](const Tensor& t) { return concat({t, b}, 1); });
    check("concat.axis0", rnd({1, 2, 3, 3}), [&](const Tensor& t) { return concat({b, t}, 0); });
  }
  check("roll2d", rnd({1, 2, 4, 5}), [](const Tensor& t) { return roll2d(t, 1, -2); });
  {
    const Tensor w = rnd({3, 2, 3, 3}), b = rnd({3});
    const Tensor x = rnd({2, 2, 6, 6});
    check("conv2d.input", x, [&](const Tensor& t) { return conv2d(t, w, b, {1, 1, 1}); });
    check("conv2d.weight", w, [&](const Tensor& t) { return conv2d(x, t, b, {2, 1, 1}); });
    check("conv2d.bias", b, [&](const Tensor& t) { return conv2d(x, w, t, {1, 0, 1}); });
    const Tensor dw = rnd({2, 1, 3, 3});
    check("conv2d.depthwise", x, [&](const Tensor& t) { return conv2d(t, dw, Tensor{}, {1, 1, 2}); });
  }
  check("upsample_nearest2x", rnd({1, 2, 3, 3}), [](const Tensor& t) { return upsample_nearest2x(t); });
  {
    const Tensor w = rnd({4, 6}), b = rnd({4}), x = rnd({2, 6});
    check("linear.input", x, [&](const Tensor& t) { return linear(t, w, b); });
    check("linear.weight", w, [&](const Tensor& t) { return linear(x, t, b); });
    check("linear.bias", b, [&](const Tensor& t) { return linear(x, w, t); });
  }
  check("global_avg_pool", rnd({2, 3, 4, 4}), [](const Tensor& t) { return global_avg_pool(t); });
  check("global_max_pool", detail::spaced_tensor({2, 3, 3, 3}, gen), [](const Tensor& t) { return global_max_pool(t); });
  {
    BatchNormStats st;
    st.running_mean = {0.1, -0.2, 0.3};
    st.running_var = {1.5, 0.7, 1.1};
    const Tensor gamma = rnd({3}, 0.5, 1.5), beta = rnd({3});
    const Tensor x = rnd({2, 3, 3, 3});
    check("batch_norm2d.train.input", x,
          [&](const Tensor& t) { return batch_norm2d(t, gamma, beta, st, BnMode::kTrain, nullptr); });
    check("batch_norm2d.train.gamma", gamma,
          [&](const Tensor& t) { return batch_norm2d(x, t, beta, st, BnMode::kTrain, nullptr); });
    check("batch_norm2d.train.beta", beta,
          [&](const Tensor& t) { return batch_norm2d(x, gamma, t, st, BnMode::kTrain, nullptr); });
    check("batch_norm2d.eval.input", x,
          [&](const Tensor& t) { return batch_norm2d(t, gamma, beta, st, BnMode::kEval, nullptr); });
  }
  check("percentile_rescale", detail::spaced_tensor({2, 30}, gen), [](const Tensor& t) { return percentile_rescale(t); });
  {
    const Tensor x = rnd({2, 3, 2, 2}), v = rnd({2, 3, 2, 2});
    const Tensor kc = rnd({2, 3}, 0.2, 0.8);
    check("membrane_update.leak.v", v, [&](const Tensor& t) { return membrane_update(t, x, InvTau{0.5}, 0.1, UpdateForm::kLeak); });
    check("membrane_update.leak.x", x, [&](const Tensor& t) { return membrane_update(v, t, InvTau{0.3}, 0.0, UpdateForm::kLeak); });
    check("membrane_update.ema.k", kc, [&](const Tensor& t) { return membrane_update(v, x, InvTau{t}, 0.0, UpdateForm::kEma); });
    check("membrane_update.leak.k", kc, [&](const Tensor& t) { return membrane_update(v, x, InvTau{t}, 0.2, UpdateForm::kLeak); });
    const Tensor spikes = Tensor({4}, {0.0, 1.0, 0.0, 1.0});
    check("hard_reset", rnd({4}), [&](const Tensor& t) { return hard_reset(t, spikes, 0.0); });
  }
  return out;
}

}  // namespace evsnn
