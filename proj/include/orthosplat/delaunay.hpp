#pragma once

// Incremental Bowyer-Watson Delaunay triangulation.
//
// The unbounded exterior is represented by "ghost" triangles that share a
// single vertex at infinity, so the result always covers the convex hull
// exactly (no finite super-triangle whose corners can leak into the hull).
// A ghost triangle (u, v, inf) conflicts with a point strictly left of u->v,
// or lying on the open segment uv.
//
// Points are inserted in index order and the in-circle test is strict, so
// among cocircular configurations the connections made by lower-index
// vertices are kept.

#include <array>
#include <map>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "orthosplat/predicates.hpp"

namespace orthosplat {

using TriangleIndices = std::array<int, 3>;

namespace detail {

constexpr int kGhost = -1;

inline bool strictly_between(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
  // Assumes a, b, p collinear.
  if (a.x() != b.x()) {
    return (p.x() > std::min(a.x(), b.x())) && (p.x() < std::max(a.x(), b.x()));
  }
  return (p.y() > std::min(a.y(), b.y())) && (p.y() < std::max(a.y(), b.y()));
}

}  // namespace detail

// Returns triangles as index triples into `points`, each with positive
// orient2d. Fewer than three points, or all collinear, gives no triangles.
// Exact duplicate points are ignored.
inline std::vector<TriangleIndices> delaunay(std::span<const Eigen::Vector2d> points) {
  using predicates::incircle;
  using predicates::orient2d;
  const int n = static_cast<int>(points.size());
  if (n < 3) return {};

  int i0 = 0, i1 = -1, i2 = -1;
  for (int j = 1; j < n && i1 < 0; ++j)
    if (points[j] != points[i0]) i1 = j;
  if (i1 < 0) return {};
  for (int k = i1 + 1; k < n && i2 < 0; ++k)
    if (orient2d(points[i0], points[i1], points[k]) != 0) i2 = k;
  if (i2 < 0) return {};
  if (orient2d(points[i0], points[i1], points[i2]) < 0) std::swap(i1, i2);

  struct Tri {
    TriangleIndices v;
    bool alive = true;
  };
  std::vector<Tri> tris;
  tris.push_back({{i0, i1, i2}});
  // Ghosts hang off each hull edge with the exterior on their left.
  tris.push_back({{i1, i0, detail::kGhost}});
  tris.push_back({{i2, i1, detail::kGhost}});
  tris.push_back({{i0, i2, detail::kGhost}});

  std::set<std::pair<double, double>> inserted;
  for (int idx : {i0, i1, i2}) inserted.emplace(points[idx].x(), points[idx].y());

  auto conflicts = [&](const TriangleIndices& t, const Eigen::Vector2d& p) {
    if (t[2] == detail::kGhost) {
      const auto& a = points[t[0]];
      const auto& b = points[t[1]];
      const int o = orient2d(a, b, p);
      return o > 0 || (o == 0 && detail::strictly_between(a, b, p));
    }
    return incircle(points[t[0]], points[t[1]], points[t[2]], p) > 0;
  };

  std::vector<int> cavity;
  std::map<std::pair<int, int>, int> edge_count;
  for (int idx = 0; idx < n; ++idx) {
    if (idx == i0 || idx == i1 || idx == i2) continue;
    const auto& p = points[idx];
    if (!inserted.emplace(p.x(), p.y()).second) continue;

    cavity.clear();
    for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
      if (tris[t].alive && conflicts(tris[t].v, p)) cavity.push_back(t);
    }
    // Boundary edges of the cavity appear once; interior edges appear in
    // both orientations.
    edge_count.clear();
    for (int t : cavity) {
      const auto& v = tris[t].v;
      for (int e = 0; e < 3; ++e) {
        const int a = v[e], b = v[(e + 1) % 3];
        auto rev = edge_count.find({b, a});
        if (rev != edge_count.end()) {
          edge_count.erase(rev);
        } else {
          edge_count[{a, b}] = 1;
        }
      }
      tris[t].alive = false;
    }
    for (const auto& [edge, count] : edge_count) {
      const auto [a, b] = edge;
      // Keep the ghost vertex last so the (u, v, inf) convention holds.
      if (a == detail::kGhost) {
        tris.push_back({{b, idx, detail::kGhost}});
      } else if (b == detail::kGhost) {
        tris.push_back({{idx, a, detail::kGhost}});
      } else {
        tris.push_back({{a, b, idx}});
      }
    }
    // Compact occasionally so the scan stays proportional to live triangles.
    if (tris.size() > 64 && tris.size() > 4 * static_cast<std::size_t>(idx + 1)) {
      std::erase_if(tris, [](const Tri& t) { return !t.alive; });
    }
  }

  std::vector<TriangleIndices> out;
  for (const auto& t : tris) {
    if (t.alive && t.v[2] != detail::kGhost) out.push_back(t.v);
  }
  return out;
}

}  // namespace orthosplat
