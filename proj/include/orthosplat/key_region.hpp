#pragma once

// Per-image key region: Delaunay triangulation of the visible sparse-point
// reprojections, its rasterized mask, and the barycentric lift that turns a
// 2D sample inside a triangle into a 3D position and color.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "orthosplat/delaunay.hpp"
#include "orthosplat/errors.hpp"
#include "orthosplat/image_geometry.hpp"
#include "orthosplat/raster.hpp"
#include "orthosplat/rng.hpp"
#include "orthosplat/scene_stream.hpp"

namespace orthosplat {

struct MeshVertex {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double depth = 0.0;
  PointId point3d_id = -1;
};

struct TriangleMesh2D {
  std::vector<MeshVertex> vertices;
  std::vector<TriangleIndices> triangles;
  // Mean focal length of the camera the mesh was built in, for converting
  // pixel spacings to scene units.
  double focal_px = 1.0;
};

struct KeyRegionMask {
  BitMask bits;

  int width() const { return bits.width(); }
  int height() const { return bits.height(); }
  bool test(int x, int y) const { return bits.at(x, y) != 0; }
  std::size_t count() const { return count_set(bits); }
  bool empty() const { return count() == 0; }
};

struct BarycentricWeights {
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;

  bool inside(double eps = 1e-9) const {
    return l1 >= -eps && l2 >= -eps && l3 >= -eps && l1 <= 1 + eps && l2 <= 1 + eps && l3 <= 1 + eps;
  }
  bool strictly_inside() const {
    return l1 > 0 && l2 > 0 && l3 > 0 && l1 < 1 && l2 < 1 && l3 < 1;
  }
};

struct SampledSeed {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  BarycentricWeights weights;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  int triangle = -1;
  // Mean distance between neighbouring samples in this triangle, in pixels.
  double spacing_px = 0.0;
  // Scene units covered by one pixel at the seed's depth.
  double units_per_px = 0.0;
  double diff = 0.0;
};

constexpr double kMinTriangleArea = 1e-12;

inline double triangle_area(const Eigen::Vector2d& p1, const Eigen::Vector2d& p2, const Eigen::Vector2d& p3) {
  return 0.5 * std::abs((p2.x() - p1.x()) * (p3.y() - p1.y()) - (p3.x() - p1.x()) * (p2.y() - p1.y()));
}

// Barycentric weights of s with respect to (p1, p2, p3); the third weight
// is 1 - l1 - l2, so the three always sum to one.
inline BarycentricWeights barycentric(const Eigen::Vector2d& s, const Eigen::Vector2d& p1,
                                      const Eigen::Vector2d& p2, const Eigen::Vector2d& p3) {
  const double denom = (p2.y() - p3.y()) * (p1.x() - p3.x()) + (p3.x() - p2.x()) * (p1.y() - p3.y());
  if (!(0.5 * std::abs(denom) >= kMinTriangleArea)) throw DegenerateTriangleError();
  BarycentricWeights w;
  w.l1 = ((p2.y() - p3.y()) * (s.x() - p3.x()) + (p3.x() - p2.x()) * (s.y() - p3.y())) / denom;
  w.l2 = ((p3.y() - p1.y()) * (s.x() - p3.x()) + (p1.x() - p3.x()) * (s.y() - p3.y())) / denom;
  w.l3 = 1.0 - w.l1 - w.l2;
  return w;
}

inline Eigen::Vector3d lift_to_3d(const BarycentricWeights& w, const Eigen::Vector3d& P1,
                                  const Eigen::Vector3d& P2, const Eigen::Vector3d& P3) {
  return w.l1 * P1 + w.l2 * P2 + w.l3 * P3;
}

inline Eigen::Vector3d interp_color(const BarycentricWeights& w, const Eigen::Vector3d& C1,
                                    const Eigen::Vector3d& C2, const Eigen::Vector3d& C3) {
  return (w.l1 * C1 + w.l2 * C2 + w.l3 * C3).cwiseMax(0.0).cwiseMin(1.0);
}

// H_t points uniformly distributed over the triangle interior, using the
// square-root warp on a counter-based stream keyed by (seed, frame, triangle).
inline std::vector<Eigen::Vector2d> sample_triangle(const Eigen::Vector2d& p1, const Eigen::Vector2d& p2,
                                                    const Eigen::Vector2d& p3, int samples,
                                                    std::uint64_t seed, std::uint64_t frame,
                                                    std::uint64_t triangle) {
  std::vector<Eigen::Vector2d> out;
  if (samples < 1 || triangle_area(p1, p2, p3) < kMinTriangleArea) return out;
  const CounterRng rng(seed, frame, triangle);
  out.reserve(samples);
  for (int k = 0; k < samples; ++k) {
    const double r1 = std::sqrt(rng.uniform(2 * static_cast<std::uint64_t>(k)));
    const double r2 = rng.uniform(2 * static_cast<std::uint64_t>(k) + 1);
    const double a = 1.0 - r1;
    const double b = r1 * (1.0 - r2);
    const double c = r1 * r2;
    out.emplace_back(a * p1 + b * p2 + c * p3);
  }
  return out;
}

struct KeyRegionConfig {
  // Triangles with any edge longer than this fraction of the image diagonal
  // are dropped.
  double max_edge_fraction = 0.25;
};

// Drops slivers and over-long triangles.
inline std::vector<TriangleIndices> filter_triangles(const std::vector<MeshVertex>& vertices,
                                                     const std::vector<TriangleIndices>& tris,
                                                     double max_edge_px) {
  std::vector<TriangleIndices> kept;
  kept.reserve(tris.size());
  for (const auto& t : tris) {
    const auto& a = vertices[t[0]].pixel;
    const auto& b = vertices[t[1]].pixel;
    const auto& c = vertices[t[2]].pixel;
    if (triangle_area(a, b, c) < kMinTriangleArea) continue;
    const double longest = std::max({(a - b).norm(), (b - c).norm(), (c - a).norm()});
    if (longest > max_edge_px) continue;
    kept.push_back(t);
  }
  return kept;
}

// Triangulates the visible reprojections of an event.
inline TriangleMesh2D build_key_region_mesh(const FrameEvent& event, const KeyRegionConfig& cfg = {}) {
  const auto projections = visible_reprojections(event);
  std::unordered_map<PointId, const SparsePoint*> by_id;
  by_id.reserve(event.cloud_snapshot.size());
  for (const auto& p : event.cloud_snapshot) by_id[p.id] = &p;

  TriangleMesh2D mesh;
  mesh.focal_px = 0.5 * (event.intrinsics.fx + event.intrinsics.fy);
  std::vector<Eigen::Vector2d> pixels;
  pixels.reserve(projections.size());
  for (const auto& proj : projections) {
    const SparsePoint& sp = *by_id.at(proj.point3d_id);
    mesh.vertices.push_back({proj.pixel, sp.position, sp.color, proj.depth, proj.point3d_id});
    pixels.push_back(proj.pixel);
  }
  const double diagonal = std::hypot(event.intrinsics.width, event.intrinsics.height);
  mesh.triangles = filter_triangles(mesh.vertices, delaunay(pixels), cfg.max_edge_fraction * diagonal);
  return mesh;
}

// Sets every pixel whose center lies inside or on a mesh triangle.
inline KeyRegionMask rasterize_mask(const TriangleMesh2D& mesh, int width, int height) {
  KeyRegionMask mask{BitMask(width, height, 0)};
  for (const auto& t : mesh.triangles) {
    const auto& a = mesh.vertices[t[0]].pixel;
    const auto& b = mesh.vertices[t[1]].pixel;
    const auto& c = mesh.vertices[t[2]].pixel;
    if (triangle_area(a, b, c) < kMinTriangleArea) continue;
    // Pixel (i, j) has center (i + 0.5, j + 0.5).
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}) - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}) - 0.5)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (mask.bits.at(x, y)) continue;
        if (barycentric({x + 0.5, y + 0.5}, a, b, c).inside()) mask.bits.at(x, y) = 1;
      }
    }
  }
  return mask;
}

}  // namespace orthosplat
