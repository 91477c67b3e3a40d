#pragma once

// Masked photometric loss: (1 - w) * L1 + w * (1 - SSIM), evaluated on
// key-region pixels only. Both terms read the images through the mask, so
// the loss (and its gradient) is independent of unmasked pixels.

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "orthosplat/errors.hpp"
#include "orthosplat/key_region.hpp"
#include "orthosplat/raster.hpp"

namespace orthosplat {

struct LossResult {
  double loss = 0.0;
  double l1 = 0.0;
  double ssim = 1.0;
  RgbImage grad;  // dL/d(render)
};

namespace detail {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

inline const std::array<double, kSsimWindow>& ssim_weights() {
  static const std::array<double, kSsimWindow> w = [] {
    std::array<double, kSsimWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double d = i - kSsimWindow / 2;
      k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
      sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
  }();
  return w;
}

// Separable Gaussian filter with zero padding, one channel of a w x h plane.
inline std::vector<double> gauss_blur(const std::vector<double>& in, int w, int h) {
  const auto& k = ssim_weights();
  constexpr int r = kSsimWindow / 2;
  std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) {
        const int sx = x + d;
        if (sx >= 0 && sx < w) acc += k[d + r] * in[static_cast<std::size_t>(y) * w + sx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) {
        const int sy = y + d;
        if (sy >= 0 && sy < h) acc += k[d + r] * tmp[static_cast<std::size_t>(sy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

// Pixels whose SSIM window touches the mask.
inline BitMask ssim_support(const BitMask& mask) {
  constexpr int r = kSsimWindow / 2;
  const int w = mask.width(), h = mask.height();
  BitMask rows(w, h, 0), out(w, h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int d = -r; d <= r && !rows.at(x, y); ++d)
        if (x + d >= 0 && x + d < w && mask.at(x + d, y)) rows.at(x, y) = 1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int d = -r; d <= r && !out.at(x, y); ++d)
        if (y + d >= 0 && y + d < h && rows.at(x, y + d)) out.at(x, y) = 1;
  return out;
}

}  // namespace detail

// Returns nullopt when the mask is empty (the view is skipped).
inline std::optional<LossResult> masked_loss(const RgbImage& render, const RgbImage& target, const KeyRegionMask& mask,
                                             double ssim_weight) {
  if (!render.same_size(target) || !render.same_size(mask.bits)) {
    throw DimensionMismatchError("masked_loss: render, target and mask sizes differ");
  }
  const std::size_t masked = mask.count();
  if (masked == 0) return std::nullopt;
  const int w = render.width(), h = render.height();
  const std::size_t n = render.pixel_count();

  LossResult res;
  res.grad = RgbImage(w, h, 0.0);
  const double l1_norm = 1.0 / (3.0 * static_cast<double>(masked));
  double l1 = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    if (!mask.bits.data()[p]) continue;
    for (int c = 0; c < 3; ++c) {
      const double d = render.data()[p * 3 + c] - target.data()[p * 3 + c];
      l1 += std::abs(d);
      res.grad.data()[p * 3 + c] = (1.0 - ssim_weight) * l1_norm * ((d > 0) - (d < 0));
    }
  }
  res.l1 = l1 * l1_norm;

  if (ssim_weight > 0.0) {
    const BitMask support = detail::ssim_support(mask.bits);
    const std::size_t n_support = count_set(support);
    const double dS = -ssim_weight / (3.0 * static_cast<double>(n_support));
    double ssim_sum = 0.0;
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (int c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < n; ++p) {
        const double m = mask.bits.data()[p] ? 1.0 : 0.0;
        x[p] = m * render.data()[p * 3 + c];
        y[p] = m * target.data()[p * 3 + c];
        xx[p] = x[p] * x[p];
        yy[p] = y[p] * y[p];
        xy[p] = x[p] * y[p];
      }
      const auto mx = detail::gauss_blur(x, w, h);
      const auto my = detail::gauss_blur(y, w, h);
      const auto exx = detail::gauss_blur(xx, w, h);
      const auto eyy = detail::gauss_blur(yy, w, h);
      const auto exy = detail::gauss_blur(xy, w, h);
      std::vector<double> a(n, 0.0), b(n, 0.0), cc(n, 0.0);
      for (std::size_t p = 0; p < n; ++p) {
        if (!support.data()[p]) continue;
        const double l = 2.0 * mx[p] * my[p] + detail::kSsimC1;
        const double n2 = 2.0 * (exy[p] - mx[p] * my[p]) + detail::kSsimC2;
        const double d1 = mx[p] * mx[p] + my[p] * my[p] + detail::kSsimC1;
        const double d2 = (exx[p] - mx[p] * mx[p]) + (eyy[p] - my[p] * my[p]) + detail::kSsimC2;
        const double s = l * n2 / (d1 * d2);
        ssim_sum += s;
        a[p] = dS * s * (2.0 * my[p] / l - 2.0 * my[p] / n2 - 2.0 * mx[p] / d1 + 2.0 * mx[p] / d2);
        b[p] = dS * (-s / d2);
        cc[p] = dS * s * 2.0 / n2;
      }
      const auto ga = detail::gauss_blur(a, w, h);
      const auto gb = detail::gauss_blur(b, w, h);
      const auto gc = detail::gauss_blur(cc, w, h);
      for (std::size_t p = 0; p < n; ++p) {
        if (!mask.bits.data()[p]) continue;
        res.grad.data()[p * 3 + c] += ga[p] + 2.0 * x[p] * gb[p] + y[p] * gc[p];
      }
    }
    res.ssim = ssim_sum / (3.0 * static_cast<double>(n_support));
  }
  res.loss = (1.0 - ssim_weight) * res.l1 + ssim_weight * (1.0 - res.ssim);
  return res;
}

// PSNR over masked pixels, for [0,1] images. Infinity on a perfect match;
// NaN with an empty mask.
inline double masked_psnr(const RgbImage& a, const RgbImage& b, const BitMask& mask) {
  if (!a.same_size(b) || !a.same_size(mask)) throw DimensionMismatchError("masked_psnr: size mismatch");
  double se = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < a.pixel_count(); ++p) {
    if (!mask.data()[p]) continue;
    for (int c = 0; c < 3; ++c) {
      const double d = a.data()[p * 3 + c] - b.data()[p * 3 + c];
      se += d * d;
    }
    count += 3;
  }
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  const double mse = se / static_cast<double>(count);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace orthosplat
