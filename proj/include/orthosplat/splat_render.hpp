#pragma once

// CPU tile rasterizer for 3D Gaussians.
//
// Two projection front ends feed the same compositor:
//  * perspective (EWA, pinhole camera) for training renders, with an exact
//    analytic backward pass;
//  * orthographic, from an axis-aligned view box, for the map product. The
//    Jacobian of the orthographic map has a zero height row, so a Gaussian's
//    vertical extent never reaches the image.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "orthosplat/gaussian_field.hpp"
#include "orthosplat/parallel.hpp"
#include "orthosplat/raster.hpp"
#include "orthosplat/scene_stream.hpp"

namespace orthosplat {

struct RasterConfig {
  double dilation = 0.3;        // px^2 added to every 2D covariance
  double min_alpha = 1.0 / 255.0;
  double max_alpha = 0.99;
  double min_transmittance = 1e-4;
  int tile_size = 16;
  int threads = 1;
};

// World axis treated as "up" in the orthographic product, with its sign.
struct UpAxis {
  int axis = 2;
  int sign = 1;

  // Indices of the two ground axes, ordered so (g0, g1, up) stays
  // right-handed.
  std::array<int, 2> ground() const {
    const int a = (axis + 1) % 3, b = (axis + 2) % 3;
    return sign > 0 ? std::array<int, 2>{a, b} : std::array<int, 2>{b, a};
  }
  double height(const Eigen::Vector3d& p) const { return sign * p[axis]; }
  Eigen::Vector3d to_view(const Eigen::Vector3d& p) const {
    const auto g = ground();
    return {p[g[0]], p[g[1]], height(p)};
  }
  // Rows map world coordinates to (ground0, ground1, height).
  Eigen::Matrix3d view_rotation() const {
    const auto g = ground();
    Eigen::Matrix3d P = Eigen::Matrix3d::Zero();
    P(0, g[0]) = 1.0;
    P(1, g[1]) = 1.0;
    P(2, axis) = sign;
    return P;
  }
};

struct OrthoViewBox {
  double l = -1.0, r = 1.0;    // ground axis 0
  double b = -1.0, t = 1.0;    // ground axis 1
  double z_n = -1.0, z_f = 1.0;  // height
  UpAxis up;

  bool valid() const {
    return r > l && t > b && z_f > z_n && std::isfinite(l) && std::isfinite(r) && std::isfinite(b) &&
           std::isfinite(t) && std::isfinite(z_n) && std::isfinite(z_f);
  }
};

inline Eigen::Matrix4d ortho_matrix(const OrthoViewBox& box) {
  if (!box.valid()) throw std::invalid_argument("ortho_matrix: degenerate view box");
  Eigen::Matrix4d P = Eigen::Matrix4d::Zero();
  P(0, 0) = 2.0 / (box.r - box.l);
  P(0, 3) = -(box.r + box.l) / (box.r - box.l);
  P(1, 1) = 2.0 / (box.t - box.b);
  P(1, 3) = -(box.t + box.b) / (box.t - box.b);
  P(2, 2) = 2.0 / (box.z_f - box.z_n);
  P(2, 3) = -(box.z_f + box.z_n) / (box.z_f - box.z_n);
  P(3, 3) = 1.0;
  return P;
}

// Orthographic 2D covariance in pixels for a W x H raster spanning the box.
// `sigma` is in view coordinates (ground0, ground1, height).
inline Eigen::Matrix2d ortho_cov_view(const Eigen::Matrix3d& sigma, const OrthoViewBox& box, int width, int height,
                                      double dilation = 0.3) {
  Eigen::Matrix3d J = Eigen::Matrix3d::Zero();
  J(0, 0) = 2.0 / (box.r - box.l);
  J(1, 1) = 2.0 / (box.t - box.b);
  const Eigen::Matrix3d clip = J * sigma * J.transpose();
  // Clip -> pixel: u = (x + 1) W / 2, v = (1 - y) H / 2.
  const Eigen::Matrix2d D = Eigen::Vector2d(0.5 * width, -0.5 * height).asDiagonal();
  Eigen::Matrix2d out = D * clip.topLeftCorner<2, 2>() * D;
  out(0, 1) = out(1, 0) = 0.5 * (out(0, 1) + out(1, 0));
  out += dilation * Eigen::Matrix2d::Identity();
  return out;
}

// Same, with `sigma` in world coordinates.
inline Eigen::Matrix2d ortho_cov(const Eigen::Matrix3d& sigma, const OrthoViewBox& box, int width, int height,
                                 double dilation = 0.3) {
  const Eigen::Matrix3d P = box.up.view_rotation();
  return ortho_cov_view(P * sigma * P.transpose(), box, width, height, dilation);
}

struct Splat2D {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
  Eigen::Vector3d conic = Eigen::Vector3d(1.0, 0.0, 1.0);  // inverse covariance (xx, xy, yy)
  double depth_key = 0.0;
  double opacity = 0.0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  int gaussian = -1;
};

inline bool set_conic(Splat2D& s) {
  const double det = s.cov(0, 0) * s.cov(1, 1) - s.cov(0, 1) * s.cov(0, 1);
  if (!(det > 0.0) || !std::isfinite(det)) return false;
  s.conic = {s.cov(1, 1) / det, -s.cov(0, 1) / det, s.cov(0, 0) / det};
  return true;
}

inline std::vector<Splat2D> project_splats_perspective(const GaussianField& field, const FramePose& pose,
                                                       const CameraIntrinsics& intr, const RasterConfig& cfg = {}) {
  constexpr double kNearClip = 0.01;
  const Eigen::Matrix3d W = pose.rotation_matrix();
  std::vector<Splat2D> out;
  out.reserve(field.size());
  for (int i = 0; i < static_cast<int>(field.size()); ++i) {
    const Gaussian& g = field.gaussians[i];
    const Eigen::Vector3d X = W * g.mean + pose.translation;
    if (!(X.z() > kNearClip)) continue;
    const double iz = 1.0 / X.z();
    Eigen::Matrix<double, 2, 3> J;
    J << intr.fx * iz, 0.0, -intr.fx * X.x() * iz * iz,
         0.0, intr.fy * iz, -intr.fy * X.y() * iz * iz;
    const Eigen::Matrix<double, 2, 3> T = J * W;
    Splat2D s;
    s.center = {intr.fx * X.x() * iz + intr.cx, intr.fy * X.y() * iz + intr.cy};
    s.cov = T * g.covariance() * T.transpose();
    s.cov(0, 1) = s.cov(1, 0) = 0.5 * (s.cov(0, 1) + s.cov(1, 0));
    s.cov += cfg.dilation * Eigen::Matrix2d::Identity();
    if (!set_conic(s)) continue;
    s.depth_key = X.z();
    s.opacity = g.opacity();
    s.color = g.color;
    s.gaussian = i;
    out.push_back(s);
  }
  return out;
}

// Pixel position of a view-space point under the box's orthographic map.
inline Eigen::Vector2d ortho_pixel(const Eigen::Vector3d& view, const OrthoViewBox& box, int width, int height) {
  const Eigen::Vector4d clip = ortho_matrix(box) * Eigen::Vector4d(view.x(), view.y(), view.z(), 1.0);
  return {(clip.x() + 1.0) * 0.5 * width, (1.0 - clip.y()) * 0.5 * height};
}

inline std::vector<Splat2D> project_splats_ortho(const GaussianField& field, const OrthoViewBox& box, int width,
                                                 int height, const RasterConfig& cfg = {}) {
  const Eigen::Matrix4d P = ortho_matrix(box);
  const Eigen::Matrix3d V = box.up.view_rotation();
  std::vector<Splat2D> out;
  out.reserve(field.size());
  for (int i = 0; i < static_cast<int>(field.size()); ++i) {
    const Gaussian& g = field.gaussians[i];
    const Eigen::Vector3d view = V * g.mean;
    if (view.z() < box.z_n || view.z() > box.z_f) continue;
    const Eigen::Vector4d clip = P * Eigen::Vector4d(view.x(), view.y(), view.z(), 1.0);
    Splat2D s;
    s.center = {(clip.x() + 1.0) * 0.5 * width, (1.0 - clip.y()) * 0.5 * height};
    s.cov = ortho_cov_view(V * g.covariance() * V.transpose(), box, width, height, cfg.dilation);
    if (!set_conic(s)) continue;
    // Highest surface first.
    s.depth_key = -view.z();
    s.opacity = g.opacity();
    s.color = g.color;
    s.gaussian = i;
    out.push_back(s);
  }
  return out;
}

struct RenderOutput {
  RgbImage color;
  GrayImage alpha;
  Raster<int, 1> contributors;
};

// Everything the backward pass needs from a forward composite.
struct RenderContext {
  int width = 0;
  int height = 0;
  int tiles_x = 0;
  int tiles_y = 0;
  int tile_size = 16;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  // Per tile: splat indices in compositing order.
  std::vector<std::vector<int>> tile_lists;
  // Per pixel: number of tile-list entries visited before termination.
  std::vector<int> last_entry;
  std::vector<double> final_transmittance;
};

namespace detail {

// Ellipse half-extents outside which alpha falls below the cutoff:
// opacity * exp(-q/2) >= min_alpha  <=>  q <= 2 ln(opacity / min_alpha).
inline bool footprint(const Splat2D& s, const RasterConfig& cfg, Eigen::Vector2d& half_extent) {
  if (s.opacity < cfg.min_alpha) return false;
  const double q = 2.0 * std::log(s.opacity / cfg.min_alpha) * (1.0 + 1e-6) + 1e-9;
  half_extent = {std::sqrt(q * s.cov(0, 0)), std::sqrt(q * s.cov(1, 1))};
  return std::isfinite(half_extent.x()) && std::isfinite(half_extent.y());
}

inline double splat_power(const Splat2D& s, double px, double py) {
  const double dx = px - s.center.x();
  const double dy = py - s.center.y();
  return -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
}

}  // namespace detail

// Order used for compositing: ascending depth key, ties by position.
inline std::vector<int> composite_order(std::span<const Splat2D> splats) {
  std::vector<int> order(splats.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (splats[a].depth_key != splats[b].depth_key) return splats[a].depth_key < splats[b].depth_key;
    return a < b;
  });
  return order;
}

// Front-to-back alpha compositing over 16x16 tiles. Pixel (x, y) samples at
// (x + 0.5, y + 0.5).
inline RenderOutput composite(std::span<const Splat2D> splats, int width, int height,
                              const Eigen::Vector3d& background, const RasterConfig& cfg = {},
                              RenderContext* ctx_out = nullptr) {
  RenderContext ctx;
  ctx.width = width;
  ctx.height = height;
  ctx.tile_size = cfg.tile_size;
  ctx.tiles_x = (width + cfg.tile_size - 1) / cfg.tile_size;
  ctx.tiles_y = (height + cfg.tile_size - 1) / cfg.tile_size;
  ctx.background = background;
  ctx.tile_lists.assign(static_cast<std::size_t>(ctx.tiles_x) * ctx.tiles_y, {});
  ctx.last_entry.assign(static_cast<std::size_t>(width) * height, 0);
  ctx.final_transmittance.assign(static_cast<std::size_t>(width) * height, 1.0);

  for (int idx : composite_order(splats)) {
    const Splat2D& s = splats[idx];
    Eigen::Vector2d ext;
    if (!detail::footprint(s, cfg, ext)) continue;
    // Pixels whose centers fall inside the footprint box.
    const double x_lo = std::ceil(s.center.x() - ext.x() - 0.5);
    const double x_hi = std::floor(s.center.x() + ext.x() - 0.5);
    const double y_lo = std::ceil(s.center.y() - ext.y() - 0.5);
    const double y_hi = std::floor(s.center.y() + ext.y() - 0.5);
    if (x_hi < 0 || y_hi < 0 || x_lo > width - 1 || y_lo > height - 1 || x_lo > x_hi || y_lo > y_hi) continue;
    const int tx0 = static_cast<int>(std::max(0.0, x_lo)) / cfg.tile_size;
    const int tx1 = static_cast<int>(std::min<double>(width - 1, x_hi)) / cfg.tile_size;
    const int ty0 = static_cast<int>(std::max(0.0, y_lo)) / cfg.tile_size;
    const int ty1 = static_cast<int>(std::min<double>(height - 1, y_hi)) / cfg.tile_size;
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx) ctx.tile_lists[static_cast<std::size_t>(ty) * ctx.tiles_x + tx].push_back(idx);
  }

  RenderOutput out{RgbImage(width, height), GrayImage(width, height), Raster<int, 1>(width, height, 0)};
  parallel_for(ctx.tiles_x * ctx.tiles_y, cfg.threads, [&](int tile) {
    const int tx = tile % ctx.tiles_x, ty = tile / ctx.tiles_x;
    const auto& list = ctx.tile_lists[tile];
    const int x_end = std::min(width, (tx + 1) * cfg.tile_size);
    const int y_end = std::min(height, (ty + 1) * cfg.tile_size);
    for (int y = ty * cfg.tile_size; y < y_end; ++y) {
      for (int x = tx * cfg.tile_size; x < x_end; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        double T = 1.0;
        Eigen::Vector3d C = Eigen::Vector3d::Zero();
        int visited = 0, count = 0;
        for (int e = 0; e < static_cast<int>(list.size()); ++e) {
          const Splat2D& s = splats[list[e]];
          visited = e + 1;
          const double alpha = std::min(cfg.max_alpha, s.opacity * std::exp(detail::splat_power(s, px, py)));
          if (alpha < cfg.min_alpha) continue;
          const double next_T = T * (1.0 - alpha);
          if (next_T < cfg.min_transmittance) {
            visited = e;
            break;
          }
          C += (alpha * T) * s.color;
          T = next_T;
          ++count;
        }
        const std::size_t p = static_cast<std::size_t>(y) * width + x;
        ctx.last_entry[p] = visited;
        ctx.final_transmittance[p] = T;
        set_pixel_rgb(out.color, x, y, C + T * background);
        out.alpha.at(x, y) = 1.0 - T;
        out.contributors.at(x, y) = count;
      }
    }
  });
  if (ctx_out) *ctx_out = std::move(ctx);
  return out;
}

// Gradients of a loss with respect to each 2D splat's inputs.
struct SplatGrad {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  Eigen::Vector3d conic = Eigen::Vector3d::Zero();  // d/d(xx, xy, yy) as used in the power term
  double opacity = 0.0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();

  SplatGrad& operator+=(const SplatGrad& o) {
    center += o.center;
    conic += o.conic;
    opacity += o.opacity;
    color += o.color;
    return *this;
  }
};

// Backward pass of composite(). Per-tile partial sums are reduced in tile
// order, so the result does not depend on the thread count.
inline std::vector<SplatGrad> composite_backward(std::span<const Splat2D> splats, const RenderContext& ctx,
                                                 const RgbImage& grad_color, const RasterConfig& cfg = {}) {
  const int n_tiles = ctx.tiles_x * ctx.tiles_y;
  std::vector<std::vector<SplatGrad>> partial(n_tiles);
  parallel_for(n_tiles, cfg.threads, [&](int tile) {
    const auto& list = ctx.tile_lists[tile];
    auto& acc = partial[tile];
    acc.assign(list.size(), SplatGrad{});
    const int tx = tile % ctx.tiles_x, ty = tile / ctx.tiles_x;
    const int x_end = std::min(ctx.width, (tx + 1) * ctx.tile_size);
    const int y_end = std::min(ctx.height, (ty + 1) * ctx.tile_size);
    for (int y = ty * ctx.tile_size; y < y_end; ++y) {
      for (int x = tx * ctx.tile_size; x < x_end; ++x) {
        const Eigen::Vector3d g = pixel_rgb(grad_color, x, y);
        if (g.isZero(0.0)) continue;
        const std::size_t p = static_cast<std::size_t>(y) * ctx.width + x;
        const double px = x + 0.5, py = y + 0.5;
        double T = ctx.final_transmittance[p];
        // Color of everything behind the current splat, background included.
        Eigen::Vector3d behind = T * ctx.background;
        for (int e = ctx.last_entry[p] - 1; e >= 0; --e) {
          const Splat2D& s = splats[list[e]];
          const double power = detail::splat_power(s, px, py);
          const double G = std::exp(power);
          const double raw = s.opacity * G;
          const double alpha = std::min(cfg.max_alpha, raw);
          if (alpha < cfg.min_alpha) continue;
          T /= (1.0 - alpha);
          SplatGrad& out = acc[e];
          out.color += (alpha * T) * g;
          const double dL_dalpha = g.dot(T * s.color - behind / (1.0 - alpha));
          behind += (alpha * T) * s.color;
          if (raw > cfg.max_alpha) continue;  // clamped: flat in its inputs
          out.opacity += dL_dalpha * G;
          const double dL_dpower = dL_dalpha * raw;
          const double dx = px - s.center.x(), dy = py - s.center.y();
          out.conic += dL_dpower * Eigen::Vector3d(-0.5 * dx * dx, -dx * dy, -0.5 * dy * dy);
          out.center += dL_dpower * Eigen::Vector2d(s.conic[0] * dx + s.conic[1] * dy, s.conic[1] * dx + s.conic[2] * dy);
        }
      }
    }
  });
  std::vector<SplatGrad> grads(splats.size());
  for (int tile = 0; tile < n_tiles; ++tile) {
    const auto& list = ctx.tile_lists[tile];
    for (std::size_t e = 0; e < list.size(); ++e) grads[list[e]] += partial[tile][e];
  }
  return grads;
}

namespace detail {

// dL/dq for R(q / |q|), given G = dL/dR.
inline Eigen::Vector4d rotation_grad(const Eigen::Vector4d& q_raw, const Eigen::Matrix3d& G) {
  const double n = q_raw.norm();
  const Eigen::Vector4d q = q_raw / n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Vector4d dq;
  dq[0] = 2 * (-z * G(0, 1) + y * G(0, 2) + z * G(1, 0) - x * G(1, 2) - y * G(2, 0) + x * G(2, 1));
  dq[1] = 2 * (y * G(0, 1) + z * G(0, 2) + y * G(1, 0) - 2 * x * G(1, 1) - w * G(1, 2) + z * G(2, 0) + w * G(2, 1) -
               2 * x * G(2, 2));
  dq[2] = 2 * (-2 * y * G(0, 0) + x * G(0, 1) + w * G(0, 2) + x * G(1, 0) + z * G(1, 2) - w * G(2, 0) + z * G(2, 1) -
               2 * y * G(2, 2));
  dq[3] = 2 * (-2 * z * G(0, 0) - w * G(0, 1) + x * G(0, 2) + w * G(1, 0) - 2 * z * G(1, 1) + y * G(1, 2) +
               x * G(2, 0) + y * G(2, 1));
  // Through the normalization.
  return (dq - q * q.dot(dq)) / n;
}

// dL/dSigma3d and its propagation into log-scale and rotation.
inline void covariance_grad(const Gaussian& g, const Eigen::Matrix3d& dL_dSigma, ParamVector& out) {
  const Eigen::Matrix3d R = quat_to_matrix(g.rotation);
  const Eigen::Vector3d s = g.scale();
  const Eigen::Matrix3d M = R * s.asDiagonal();
  const Eigen::Matrix3d dL_dM = 2.0 * dL_dSigma * M;
  Eigen::Matrix3d dL_dR;
  for (int k = 0; k < 3; ++k) {
    dL_dR.col(k) = dL_dM.col(k) * s[k];
    out[param::kLogScale + k] += dL_dM.col(k).dot(R.col(k)) * s[k];
  }
  out.segment<4>(param::kRotation) += rotation_grad(g.rotation, dL_dR);
}

}  // namespace detail

// Chains 2D splat gradients back to Gaussian parameters for the perspective
// projection. Gaussians that produced no splat get zero gradient.
inline std::vector<ParamVector> perspective_backward(const GaussianField& field, const FramePose& pose,
                                                     const CameraIntrinsics& intr, std::span<const Splat2D> splats,
                                                     std::span<const SplatGrad> grads) {
  std::vector<ParamVector> out(field.size(), ParamVector::Zero());
  const Eigen::Matrix3d W = pose.rotation_matrix();
  for (std::size_t k = 0; k < splats.size(); ++k) {
    const Splat2D& s = splats[k];
    const SplatGrad& sg = grads[k];
    const Gaussian& g = field.gaussians[s.gaussian];
    ParamVector& d = out[s.gaussian];

    d.segment<3>(param::kColor) += sg.color;
    const double o = s.opacity;
    d[param::kOpacity] += sg.opacity * o * (1.0 - o);

    // conic Q = inverse(cov2d); dL/dcov = -Q G_Q Q with G_Q symmetric.
    Eigen::Matrix2d Q;
    Q << s.conic[0], s.conic[1], s.conic[1], s.conic[2];
    Eigen::Matrix2d GQ;
    GQ << sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2];
    const Eigen::Matrix2d G_cov = -Q * GQ * Q;

    const Eigen::Vector3d X = W * g.mean + pose.translation;
    const double iz = 1.0 / X.z(), iz2 = iz * iz, iz3 = iz2 * iz;
    Eigen::Matrix<double, 2, 3> J;
    J << intr.fx * iz, 0.0, -intr.fx * X.x() * iz2,
         0.0, intr.fy * iz, -intr.fy * X.y() * iz2;
    const Eigen::Matrix<double, 2, 3> T = J * W;
    const Eigen::Matrix3d Sigma = g.covariance();

    detail::covariance_grad(g, T.transpose() * G_cov * T, d);

    const Eigen::Matrix<double, 2, 3> dL_dT = 2.0 * G_cov * T * Sigma;
    const Eigen::Matrix<double, 2, 3> dL_dJ = dL_dT * W.transpose();
    Eigen::Vector3d dL_dX;
    dL_dX.x() = sg.center.x() * intr.fx * iz + dL_dJ(0, 2) * (-intr.fx * iz2);
    dL_dX.y() = sg.center.y() * intr.fy * iz + dL_dJ(1, 2) * (-intr.fy * iz2);
    dL_dX.z() = -sg.center.x() * intr.fx * X.x() * iz2 - sg.center.y() * intr.fy * X.y() * iz2 +
                dL_dJ(0, 0) * (-intr.fx * iz2) + dL_dJ(0, 2) * (2.0 * intr.fx * X.x() * iz3) +
                dL_dJ(1, 1) * (-intr.fy * iz2) + dL_dJ(1, 2) * (2.0 * intr.fy * X.y() * iz3);
    d.segment<3>(param::kMean) += W.transpose() * dL_dX;
  }
  return out;
}

// Convenience: project + composite through a camera.
inline RenderOutput render_perspective(const GaussianField& field, const FramePose& pose, const CameraIntrinsics& intr,
                                       const Eigen::Vector3d& background, const RasterConfig& cfg = {},
                                       std::vector<Splat2D>* splats_out = nullptr, RenderContext* ctx = nullptr) {
  auto splats = project_splats_perspective(field, pose, intr, cfg);
  auto out = composite(splats, intr.width, intr.height, background, cfg, ctx);
  if (splats_out) *splats_out = std::move(splats);
  return out;
}

inline RenderOutput render_ortho(const GaussianField& field, const OrthoViewBox& box, int width, int height,
                                 const Eigen::Vector3d& background, const RasterConfig& cfg = {}) {
  const auto splats = project_splats_ortho(field, box, width, height, cfg);
  return composite(splats, width, height, background, cfg);
}

}  // namespace orthosplat
