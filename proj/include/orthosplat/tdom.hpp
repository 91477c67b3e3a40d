#pragma once

// Orthographic map product: view-box derivation, rendering at a fixed
// ground sample distance, and PNG + world-file output.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "orthosplat/errors.hpp"
#include "orthosplat/gaussian_field.hpp"
#include "orthosplat/image_io.hpp"
#include "orthosplat/splat_render.hpp"

namespace orthosplat {

struct TdomRaster {
  RgbImage pixels;
  GrayImage alpha;
  double gsd = 1.0;
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();  // world ground coords of the upper-left pixel center
  UpAxis up;
};

constexpr double kMinBoxExtent = 1.0;

// Bounds of the points in view coordinates, each axis grown by
// margin * extent per side and floored at kMinBoxExtent.
inline OrthoViewBox derive_view_box(std::span<const Eigen::Vector3d> points, double margin_fraction = 0.02,
                                    UpAxis up = {}) {
  if (points.empty()) throw std::invalid_argument("derive_view_box: empty cloud");
  Eigen::Vector3d lo = up.to_view(points[0]), hi = lo;
  for (const auto& p : points) {
    const Eigen::Vector3d v = up.to_view(p);
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  auto grow = [&](double& a, double& b) {
    const double m = margin_fraction * (b - a);
    a -= m;
    b += m;
    if (b - a < kMinBoxExtent) {
      const double c = 0.5 * (a + b);
      a = c - 0.5 * kMinBoxExtent;
      b = c + 0.5 * kMinBoxExtent;
    }
  };
  OrthoViewBox box;
  box.up = up;
  box.l = lo.x(), box.r = hi.x();
  box.b = lo.y(), box.t = hi.y();
  box.z_n = lo.z(), box.z_f = hi.z();
  grow(box.l, box.r);
  grow(box.b, box.t);
  grow(box.z_n, box.z_f);
  return box;
}

inline OrthoViewBox derive_view_box(std::span<const SparsePoint> cloud, double margin_fraction = 0.02, UpAxis up = {}) {
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(cloud.size());
  for (const auto& p : cloud) pts.push_back(p.position);
  return derive_view_box(pts, margin_fraction, up);
}

// Height range widened to cover every Gaussian mean, so optimized
// surfaces that drift past the sparse cloud's slab are not clipped.
inline OrthoViewBox cover_field_heights(OrthoViewBox box, const GaussianField& field) {
  for (const auto& g : field.gaussians) {
    const double z = box.up.height(g.mean);
    if (!std::isfinite(z)) continue;
    box.z_n = std::min(box.z_n, z);
    box.z_f = std::max(box.z_f, z);
  }
  return box;
}

// Smallest box containing both.
inline OrthoViewBox expand_view_box(const OrthoViewBox& a, const OrthoViewBox& b) {
  OrthoViewBox out = a;
  out.l = std::min(a.l, b.l);
  out.r = std::max(a.r, b.r);
  out.b = std::min(a.b, b.b);
  out.t = std::max(a.t, b.t);
  out.z_n = std::min(a.z_n, b.z_n);
  out.z_f = std::max(a.z_f, b.z_f);
  return out;
}

inline double auto_gsd(const OrthoViewBox& box) { return (box.r - box.l) / 1024.0; }

inline std::pair<int, int> tdom_size(const OrthoViewBox& box, double gsd) {
  return {static_cast<int>(std::ceil((box.r - box.l) / gsd)), static_cast<int>(std::ceil((box.t - box.b) / gsd))};
}

// Screen-space dilation for an ortho render at `gsd`. The field only holds
// detail down to its training sample spacing and was fit with the dilation
// applied at that scale, so finer rasters keep the same footprint in
// scene units.
inline double tdom_dilation(const GaussianField& field, double gsd, double base) {
  if (!(field.sample_spacing > gsd)) return base;
  const double ratio = field.sample_spacing / gsd;
  return base * ratio * ratio;
}

// Renders the field straight down over the box on white. The raster is
// anchored at (l, t) with square gsd pixels, so it may extend slightly
// past r and b.
inline TdomRaster render_tdom(const GaussianField& field, const OrthoViewBox& box, double gsd,
                              const RasterConfig& cfg = {}) {
  if (!box.valid()) throw std::invalid_argument("render_tdom: invalid view box");
  if (!(gsd > 0.0)) throw std::invalid_argument("render_tdom: gsd must be positive");
  const auto [w, h] = tdom_size(box, gsd);
  OrthoViewBox grid = box;
  grid.r = box.l + w * gsd;
  grid.b = box.t - h * gsd;
  RasterConfig rc = cfg;
  rc.dilation = tdom_dilation(field, gsd, cfg.dilation);
  auto out = render_ortho(field, grid, w, h, Eigen::Vector3d::Ones(), rc);
  TdomRaster raster;
  raster.pixels = std::move(out.color);
  raster.alpha = std::move(out.alpha);
  raster.gsd = gsd;
  raster.origin = {box.l + 0.5 * gsd, box.t - 0.5 * gsd};
  raster.up = box.up;
  return raster;
}

struct WorldFile {
  double a = 1.0;   // x pixel size
  double d = 0.0;   // rotation terms
  double b = 0.0;
  double e = -1.0;  // y pixel size (negative: north up)
  double c = 0.0;   // x of upper-left pixel center
  double f = 0.0;   // y of upper-left pixel center

  Eigen::Vector2d pixel_to_world(double col, double row) const {
    return {a * col + b * row + c, d * col + e * row + f};
  }
  friend bool operator==(const WorldFile&, const WorldFile&) = default;
};

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline WorldFile world_file_of(const TdomRaster& raster) {
  return {raster.gsd, 0.0, 0.0, -raster.gsd, raster.origin.x(), raster.origin.y()};
}

inline void write_world_file(const std::filesystem::path& path, const WorldFile& wf) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  for (double v : {wf.a, wf.d, wf.b, wf.e, wf.c, wf.f}) out << format_double(v) << "\n";
  if (!out) throw IoError(path.string(), "write failed");
}

inline WorldFile read_world_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open");
  double v[6];
  for (double& x : v) {
    if (!(in >> x)) throw IoError(path.string(), "expected six numeric lines");
  }
  return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

// Writes <stem>.png (RGBA, alpha = coverage) and <stem>.pgw.
inline void write_geo_outputs(const TdomRaster& raster, const std::filesystem::path& stem) {
  auto png = stem;
  png += ".png";
  auto pgw = stem;
  pgw += ".pgw";
  write_png(png.string(), raster.pixels, &raster.alpha);
  write_world_file(pgw, world_file_of(raster));
}

}  // namespace orthosplat
