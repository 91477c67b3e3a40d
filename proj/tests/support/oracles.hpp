#pragma once

// Independent reference implementations used only by tests. Each is the
// slowest obvious way to compute the quantity, sharing no code with the
// library beyond plain data types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Dense>

#include "orthosplat/raster.hpp"
#include "orthosplat/splat_render.hpp"

namespace oracle {

// Barycentric weights by solving [p1-p3, p2-p3] * (l1, l2) = s - p3.
inline Eigen::Vector3d barycentric_solve(const Eigen::Vector2d& s, const Eigen::Vector2d& p1,
                                         const Eigen::Vector2d& p2, const Eigen::Vector2d& p3) {
  Eigen::Matrix2d A;
  A.col(0) = p1 - p3;
  A.col(1) = p2 - p3;
  const Eigen::Vector2d l = A.fullPivLu().solve(s - p3);
  return {l[0], l[1], 1.0 - l[0] - l[1]};
}

inline double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

// Closed triangle membership by edge signs.
inline bool in_triangle(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                        const Eigen::Vector2d& c, double tol = 0.0) {
  const double d1 = cross(a, b, p), d2 = cross(b, c, p), d3 = cross(c, a, p);
  const bool neg = d1 < -tol || d2 < -tol || d3 < -tol;
  const bool pos = d1 > tol || d2 > tol || d3 > tol;
  return !(neg && pos);
}

// Strictly inside the circumcircle of (a, b, c), via explicit center.
inline bool in_circumcircle(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c,
                            const Eigen::Vector2d& p, double rel_tol = 1e-9) {
  const double d = 2.0 * (a.x() * (b.y() - c.y()) + b.x() * (c.y() - a.y()) + c.x() * (a.y() - b.y()));
  const double ux = (a.squaredNorm() * (b.y() - c.y()) + b.squaredNorm() * (c.y() - a.y()) +
                     c.squaredNorm() * (a.y() - b.y())) / d;
  const double uy = (a.squaredNorm() * (c.x() - b.x()) + b.squaredNorm() * (a.x() - c.x()) +
                     c.squaredNorm() * (b.x() - a.x())) / d;
  const Eigen::Vector2d center(ux, uy);
  const double r2 = (a - center).squaredNorm();
  return (p - center).squaredNorm() < r2 * (1.0 - rel_tol);
}

// Inside (or on) the convex hull of `pts`: some triangle of three points
// contains p. Cubic, fine for small sets.
inline bool in_hull(const Eigen::Vector2d& p, const std::vector<Eigen::Vector2d>& pts, double tol = 1e-9) {
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t k = j + 1; k < n; ++k)
        if (std::abs(cross(pts[i], pts[j], pts[k])) > 0 && in_triangle(p, pts[i], pts[j], pts[k], tol)) return true;
  return false;
}

// Dense 2D convolution with reflected borders (edge sample repeated, i.e.
// the index sequence ... 1 0 | 0 1 ... at the low border).
inline orthosplat::GrayImage convolve(const orthosplat::GrayImage& img, const std::vector<double>& kernel, int size) {
  const int w = img.width(), h = img.height(), r = size / 2;
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  orthosplat::GrayImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int ky = -r; ky <= r; ++ky)
        for (int kx = -r; kx <= r; ++kx)
          acc += kernel[(ky + r) * size + (kx + r)] * img.at(reflect(x - kx, w), reflect(y - ky, h));
      out.at(x, y) = acc;
    }
  return out;
}

// Discrete LoG kernel straight from its formula, shifted to zero sum.
inline std::vector<double> log_kernel(int size, double sigma) {
  const int r = size / 2;
  std::vector<double> k;
  double sum = 0.0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) {
      const double q = x * x + y * y;
      const double v = (q - 2 * sigma * sigma) / std::pow(sigma, 4) * std::exp(-q / (2 * sigma * sigma));
      k.push_back(v);
      sum += v;
    }
  for (double& v : k) v -= sum / k.size();
  return k;
}

// Every splat evaluated at every pixel, no tiling or bounding boxes.
inline orthosplat::RenderOutput naive_composite(const std::vector<orthosplat::Splat2D>& splats, int w, int h,
                                                const Eigen::Vector3d& bg,
                                                const orthosplat::RasterConfig& cfg = {}) {
  std::vector<int> order(splats.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return splats[a].depth_key < splats[b].depth_key; });
  orthosplat::RenderOutput out{orthosplat::RgbImage(w, h), orthosplat::GrayImage(w, h),
                               orthosplat::Raster<int, 1>(w, h, 0)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector2d p(x + 0.5, y + 0.5);
      double T = 1.0;
      Eigen::Vector3d C = Eigen::Vector3d::Zero();
      for (int i : order) {
        const auto& s = splats[i];
        const Eigen::Vector2d d = p - s.center;
        const double m = d.dot(s.cov.inverse() * d);
        const double a = std::min(cfg.max_alpha, s.opacity * std::exp(-0.5 * m));
        if (a < cfg.min_alpha) continue;
        if (T * (1 - a) < cfg.min_transmittance) break;
        C += T * a * s.color;
        T *= 1 - a;
      }
      orthosplat::set_pixel_rgb(out.color, x, y, C + T * bg);
      out.alpha.at(x, y) = 1 - T;
    }
  return out;
}

// Central difference of f along coordinate k of x.
template <typename Vec>
double central_difference(const std::function<double(const Vec&)>& f, Vec x, int k, double step) {
  const double x0 = x[k];
  x[k] = x0 + step;
  const double fp = f(x);
  x[k] = x0 - step;
  const double fm = f(x);
  return (fp - fm) / (2 * step);
}

inline double psnr(const orthosplat::RgbImage& a, const orthosplat::RgbImage& b) {
  double se = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) se += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  return 10 * std::log10(1.0 / (se / a.data().size()));
}

}  // namespace oracle
