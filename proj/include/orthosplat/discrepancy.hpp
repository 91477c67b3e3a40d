#pragma once

// LoG gradient discrepancy between a render and the captured image, and the
// seeds sampled where it exceeds the threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "orthosplat/errors.hpp"
#include "orthosplat/key_region.hpp"
#include "orthosplat/parallel.hpp"
#include "orthosplat/raster.hpp"

namespace orthosplat {

struct LogFilterConfig {
  int size = 5;
  double sigma = 1.0;
};

struct DiscrepancyMap {
  GrayImage diff;
  BitMask region_bits;

  std::size_t region_count() const { return count_set(region_bits); }
};

inline GrayImage to_grayscale(const RgbImage& rgb) {
  GrayImage out(rgb.width(), rgb.height());
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x)
      out.at(x, y) = 0.299 * rgb.at(x, y, 0) + 0.587 * rgb.at(x, y, 1) + 0.114 * rgb.at(x, y, 2);
  return out;
}

// Square LoG kernel, row-major, shifted to sum to zero.
inline std::vector<double> log_kernel(const LogFilterConfig& cfg = {}) {
  if (cfg.size < 1 || cfg.size % 2 == 0) throw std::invalid_argument("LoG kernel size must be odd");
  const int r = cfg.size / 2;
  const double s2 = cfg.sigma * cfg.sigma;
  std::vector<double> k;
  k.reserve(static_cast<std::size_t>(cfg.size) * cfg.size);
  for (int y = -r; y <= r; ++y) {
    for (int x = -r; x <= r; ++x) {
      const double rr = x * x + y * y;
      k.push_back((rr - 2.0 * s2) / (s2 * s2) * std::exp(-rr / (2.0 * s2)));
    }
  }
  const double mean = std::accumulate(k.begin(), k.end(), 0.0) / static_cast<double>(k.size());
  for (double& v : k) v -= mean;
  return k;
}

// Symmetric reflection including the edge sample: ... b a | a b c ... c b a | a ...
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

inline GrayImage log_filter(const GrayImage& gray, const LogFilterConfig& cfg = {}, int threads = 1) {
  if (gray.empty()) throw std::invalid_argument("log_filter on empty raster");
  const auto kernel = log_kernel(cfg);
  const int r = cfg.size / 2;
  const int w = gray.width(), h = gray.height();
  GrayImage out(w, h);
  std::vector<int> xs(static_cast<std::size_t>(w + 2 * r));
  for (int x = -r; x < w + r; ++x) xs[x + r] = reflect_index(x, w);
  parallel_for(h, threads, [&](int y) {
    for (int x = 0; x < w; ++x) {
      // Differences against the center make flat areas exactly zero even
      // though the kernel sum is only zero up to rounding.
      const double c = gray.at(x, y);
      double acc = 0.0;
      std::size_t k = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int sy = reflect_index(y + dy, h);
        for (int dx = -r; dx <= r; ++dx, ++k) acc += kernel[k] * (gray.at(xs[x + dx + r], sy) - c);
      }
      out.at(x, y) = acc;
    }
  });
  return out;
}

inline DiscrepancyMap discrepancy_map(const RgbImage& render, const RgbImage& input, const KeyRegionMask& mask,
                                      double g_m, const LogFilterConfig& cfg = {}, int threads = 1) {
  if (!render.same_size(input) || !render.same_size(mask.bits)) {
    throw DimensionMismatchError("discrepancy_map: render, input and mask sizes differ");
  }
  if (!(g_m > 0.0)) throw std::invalid_argument("discrepancy threshold must be positive");
  const GrayImage a = log_filter(to_grayscale(render), cfg, threads);
  const GrayImage b = log_filter(to_grayscale(input), cfg, threads);
  DiscrepancyMap out{GrayImage(render.width(), render.height()), BitMask(render.width(), render.height(), 0)};
  for (std::size_t i = 0; i < out.diff.pixel_count(); ++i) {
    const double d = std::abs(a.data()[i] - b.data()[i]);
    out.diff.data()[i] = d;
    out.region_bits.data()[i] = (d > g_m && mask.bits.data()[i]) ? 1 : 0;
  }
  return out;
}

struct SeedSamplingConfig {
  int samples_per_triangle = 16;
  std::uint64_t seed = 0;
  std::uint64_t frame = 0;
  // Upper bound on seeds per call; the largest discrepancies are kept.
  std::size_t cap = 50000;
};

// Samples every mesh triangle, keeps samples whose pixel is in the region,
// and lifts them to 3D. Output is ordered by (triangle, sample).
inline std::vector<SampledSeed> seeds_in_region(const TriangleMesh2D& mesh, const DiscrepancyMap& region,
                                                const SeedSamplingConfig& cfg) {
  std::vector<SampledSeed> seeds;
  const int w = region.region_bits.width(), h = region.region_bits.height();
  for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
    const auto& tri = mesh.triangles[t];
    const MeshVertex& v1 = mesh.vertices[tri[0]];
    const MeshVertex& v2 = mesh.vertices[tri[1]];
    const MeshVertex& v3 = mesh.vertices[tri[2]];
    const auto samples = sample_triangle(v1.pixel, v2.pixel, v3.pixel, cfg.samples_per_triangle, cfg.seed,
                                         cfg.frame, static_cast<std::uint64_t>(t));
    if (samples.empty()) continue;
    const double spacing = std::sqrt(triangle_area(v1.pixel, v2.pixel, v3.pixel) / cfg.samples_per_triangle);
    for (const auto& s : samples) {
      const int px = static_cast<int>(std::floor(s.x()));
      const int py = static_cast<int>(std::floor(s.y()));
      if (px < 0 || py < 0 || px >= w || py >= h || !region.region_bits.at(px, py)) continue;
      SampledSeed seed;
      seed.pixel = s;
      seed.weights = barycentric(s, v1.pixel, v2.pixel, v3.pixel);
      seed.position = lift_to_3d(seed.weights, v1.position, v2.position, v3.position);
      seed.color = interp_color(seed.weights, v1.color, v2.color, v3.color);
      seed.triangle = t;
      seed.spacing_px = spacing;
      const double depth = seed.weights.l1 * v1.depth + seed.weights.l2 * v2.depth + seed.weights.l3 * v3.depth;
      seed.units_per_px = depth / mesh.focal_px;
      seed.diff = region.diff.at(px, py);
      seeds.push_back(seed);
    }
  }
  if (seeds.size() > cfg.cap) {
    std::vector<std::size_t> order(seeds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return seeds[a].diff > seeds[b].diff; });
    order.resize(cfg.cap);
    std::sort(order.begin(), order.end());
    std::vector<SampledSeed> kept;
    kept.reserve(cfg.cap);
    for (std::size_t i : order) kept.push_back(seeds[i]);
    seeds = std::move(kept);
  }
  return seeds;
}

}  // namespace orthosplat
