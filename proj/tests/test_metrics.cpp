#include <gtest/gtest.h>

#include <random>

#include "evsnn/losses.hpp"
#include "evsnn/metrics.hpp"

using namespace evsnn;

namespace {

Tensor random_image(std::size_t h, std::size_t w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(h * w);
  for (double& x : v) x = d(gen);
  return Tensor({h, w}, std::move(v));
}

Tensor checkerboard(std::size_t n, bool invert = false) {
  std::vector<double> v(n * n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) v[y * n + x] = ((x + y) % 2 == 0) != invert ? 1.0 : 0.0;
  return Tensor({n, n}, std::move(v));
}

// Textbook SSIM with an explicit 2-D Gaussian window, written independently
// of the library: per-window means, variances and covariance, then the
// luminance-contrast-structure product, averaged over valid windows.
double reference_ssim(const Tensor& a, const Tensor& b, std::size_t win = 11, double sigma = 1.5) {
  const std::size_t h = a.dim(0), w = a.dim(1);
  std::vector<double> k(win * win);
  double z = 0.0;
  const double c = (static_cast<double>(win) - 1.0) / 2.0;
  for (std::size_t u = 0; u < win; ++u)
    for (std::size_t v = 0; v < win; ++v) {
      const double du = static_cast<double>(u) - c, dv = static_cast<double>(v) - c;
      k[u * win + v] = std::exp(-(du * du + dv * dv) / (2 * sigma * sigma));
      z += k[u * win + v];
    }
  for (double& x : k) x /= z;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + win <= h; ++i)
    for (std::size_t j = 0; j + win <= w; ++j) {
      double ma = 0, mb = 0;
      for (std::size_t u = 0; u < win; ++u)
        for (std::size_t v = 0; v < win; ++v) {
          ma += k[u * win + v] * a[(i + u) * w + j + v];
          mb += k[u * win + v] * b[(i + u) * w + j + v];
        }
      double va = 0, vb = 0, cov = 0;
      for (std::size_t u = 0; u < win; ++u)
        for (std::size_t v = 0; v < win; ++v) {
          const double da = a[(i + u) * w + j + v] - ma, db = b[(i + u) * w + j + v] - mb;
          va += k[u * win + v] * da * da;
          vb += k[u * win + v] * db * db;
          cov += k[u * win + v] * da * db;
        }
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

}  // namespace

TEST(HistogramNormalize, UniformRampOnlyClipsTails) {
  const std::size_t n = 101;
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i) / 100.0;  // spans [0,1]
  Tensor img({1, n}, v);
  Tensor out = metrics::histogram_normalize(img);
  const double p1 = 0.01, p99 = 0.99;  // exact percentiles of the ramp
  for (std::size_t i = 0; i < n; ++i) {
    const double expect = std::clamp((v[i] - p1) / (p99 - p1), 0.0, 1.0);
    EXPECT_NEAR(out[i], expect, 1e-12);
  }
}

TEST(HistogramNormalize, ConstantImageIsHalf) {
  Tensor out = metrics::histogram_normalize(Tensor::full({6, 7}, -3.2));
  for (double v : out.data()) EXPECT_EQ(v, 0.5);
  EXPECT_EQ(out.shape(), (Shape{6, 7}));
}

TEST(HistogramNormalize, AffineInvariant) {
  Tensor img = random_image(12, 9, 3, -5.0, 5.0);
  Tensor a = metrics::histogram_normalize(img);
  for (auto [s, o] : {std::pair{2.0, 1.0}, std::pair{0.01, -7.0}, std::pair{1e3, 4.0}}) {
    std::vector<double> t(img.numel());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = s * img[i] + o;
    Tensor b = metrics::histogram_normalize(Tensor(img.shape(), t));
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(Mse, Examples) {
  Tensor a = random_image(8, 8, 5);
  EXPECT_EQ(metrics::mse(a, a), 0.0);
  EXPECT_EQ(metrics::mse(checkerboard(6), checkerboard(6, true)), 1.0);
  Tensor b = random_image(8, 8, 6);
  double ref = 0.0;
  for (std::size_t i = 0; i < 64; ++i) ref += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(metrics::mse(a, b), ref / 64.0, 1e-15);
  EXPECT_GE(metrics::mse(a, b), 0.0);
  EXPECT_THROW(metrics::mse(a, random_image(8, 7, 1)), ShapeError);
}

TEST(Ssim, IdentityAndSymmetry) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor a = random_image(20, 17, seed), b = random_image(20, 17, seed + 50);
    EXPECT_EQ(metrics::ssim(a, a), 1.0);
    EXPECT_LT(std::fabs(metrics::ssim(a, b) - metrics::ssim(b, a)), 1e-12);
  }
  EXPECT_THROW(metrics::ssim(random_image(4, 4, 1), random_image(4, 5, 1)), ShapeError);
}

TEST(Ssim, MatchesDirectFormula) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Tensor a = random_image(24, 20, seed + 10);
    Tensor b = random_image(24, 20, seed + 20);
    // correlated pair so the structure term is far from zero
    std::vector<double> mix(a.numel());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.7 * a[i] + 0.3 * b[i];
    Tensor c(a.shape(), mix);
    EXPECT_NEAR(metrics::ssim(a, b), reference_ssim(a, b), 1e-10);
    EXPECT_NEAR(metrics::ssim(a, c), reference_ssim(a, c), 1e-10);
  }
}

TEST(Ssim, SmallImagesShrinkWindow) {
  Tensor a = random_image(7, 9, 1), b = random_image(7, 9, 2);
  EXPECT_EQ(metrics::effective_window(11, 7, 9), 7u);
  EXPECT_EQ(metrics::effective_window(11, 8, 9), 7u);
  EXPECT_NEAR(metrics::ssim(a, b), reference_ssim(a, b, 7), 1e-10);
}

TEST(Ssim, TensorVersionAgreesAndIsDifferentiable) {
  Tensor a = random_image(16, 16, 31), b = random_image(16, 16, 32);
  Tensor a4 = a.reshape({1, 1, 16, 16}), b4 = b.reshape({1, 1, 16, 16});
  EXPECT_NEAR(ssim_tensor(a4, b4).item(), metrics::ssim(a, b), 1e-12);
  EXPECT_THROW(ssim_tensor(Tensor::zeros({1, 2, 16, 16}), Tensor::zeros({1, 2, 16, 16})), ShapeError);
}
