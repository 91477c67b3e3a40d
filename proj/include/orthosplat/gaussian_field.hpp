#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "orthosplat/errors.hpp"
#include "orthosplat/key_region.hpp"
#include "orthosplat/scene_stream.hpp"

namespace orthosplat {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

constexpr double kInitialOpacity = 0.1;
constexpr double kMinScale = 1e-7;

// Rotation matrix of a (w, x, y, z) quaternion; normalizes first.
inline Eigen::Matrix3d quat_to_matrix(const Eigen::Vector4d& q_raw) {
  const Eigen::Vector4d q = q_raw.normalized();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

struct Gaussian {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
  Eigen::Vector4d rotation{1.0, 0.0, 0.0, 0.0};  // w, x, y, z
  double opacity_logit = 0.0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  int created_at = 0;

  double opacity() const { return sigmoid(opacity_logit); }
  Eigen::Vector3d scale() const { return log_scale.array().exp(); }

  // R diag(s^2) R^T
  Eigen::Matrix3d covariance() const {
    const Eigen::Matrix3d M = quat_to_matrix(rotation) * scale().asDiagonal();
    return M * M.transpose();
  }

  friend bool operator==(const Gaussian&, const Gaussian&) = default;
};

// Flat parameter layout used by gradients and the optimizer.
namespace param {
constexpr int kMean = 0;
constexpr int kLogScale = 3;
constexpr int kRotation = 6;
constexpr int kOpacity = 10;
constexpr int kColor = 11;
constexpr int kCount = 14;
}  // namespace param

using ParamVector = Eigen::Matrix<double, param::kCount, 1>;

inline ParamVector pack(const Gaussian& g) {
  ParamVector p;
  p.segment<3>(param::kMean) = g.mean;
  p.segment<3>(param::kLogScale) = g.log_scale;
  p.segment<4>(param::kRotation) = g.rotation;
  p[param::kOpacity] = g.opacity_logit;
  p.segment<3>(param::kColor) = g.color;
  return p;
}

inline void unpack(const ParamVector& p, Gaussian& g) {
  g.mean = p.segment<3>(param::kMean);
  g.log_scale = p.segment<3>(param::kLogScale);
  g.rotation = p.segment<4>(param::kRotation);
  g.opacity_logit = p[param::kOpacity];
  g.color = p.segment<3>(param::kColor);
}

// First/second moment state for one Gaussian.
struct AdamSlot {
  ParamVector m = ParamVector::Zero();
  ParamVector v = ParamVector::Zero();
  int step = 0;
};

class GaussianField {
 public:
  std::vector<Gaussian> gaussians;
  std::vector<AdamSlot> optimizer_state;
  double scene_diameter = 1.0;
  // Finest scene-units-per-pixel among the views the field was fit to;
  // 0 when unknown.
  double sample_spacing = 0.0;

  std::size_t size() const { return gaussians.size(); }
  bool empty() const { return gaussians.empty(); }

  void push_back(const Gaussian& g) {
    gaussians.push_back(g);
    optimizer_state.emplace_back();
  }

  // Keeps exp(log_scale) in [kMinScale, scene_diameter] and the rotation a
  // unit quaternion.
  void sanitize(std::size_t i) {
    Gaussian& g = gaussians[i];
    const double lo = std::log(kMinScale);
    const double hi = std::log(std::max(scene_diameter, kMinScale));
    for (int k = 0; k < 3; ++k) g.log_scale[k] = std::clamp(g.log_scale[k], lo, hi);
    const double n = g.rotation.norm();
    if (n > 1e-12) {
      g.rotation /= n;
    } else {
      g.rotation = {1.0, 0.0, 0.0, 0.0};
    }
  }

  // Removes Gaussians with opacity below the threshold; returns how many.
  std::size_t prune(double min_opacity) {
    std::size_t out = 0;
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
      if (gaussians[i].opacity() < min_opacity) continue;
      gaussians[out] = gaussians[i];
      optimizer_state[out] = optimizer_state[i];
      ++out;
    }
    const std::size_t removed = gaussians.size() - out;
    gaussians.resize(out);
    optimizer_state.resize(out);
    return removed;
  }
};

inline double bbox_diagonal(std::span<const Eigen::Vector3d> pts) {
  if (pts.empty()) return 0.0;
  Eigen::Vector3d lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

// Mean distance from each point to its (up to) k nearest other points.
// Sweep over x-sorted order with early exit once |dx| exceeds the current
// k-th best distance.
inline std::vector<double> mean_knn_distance(std::span<const Eigen::Vector3d> pts, int k) {
  const std::size_t n = pts.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pts[a].x() < pts[b].x() || (pts[a].x() == pts[b].x() && a < b);
  });
  const std::size_t kk = std::min<std::size_t>(k, n - 1);
  std::vector<double> best;
  for (std::size_t r = 0; r < n; ++r) {
    const Eigen::Vector3d& p = pts[order[r]];
    best.assign(kk, std::numeric_limits<double>::infinity());
    auto offer = [&](std::size_t j) {
      const double d2 = (pts[j] - p).squaredNorm();
      if (d2 < best.back()) {
        best.back() = d2;
        std::sort(best.begin(), best.end());
      }
    };
    for (std::size_t l = r; l-- > 0;) {
      const double dx = p.x() - pts[order[l]].x();
      if (dx * dx > best.back()) break;
      offer(order[l]);
    }
    for (std::size_t u = r + 1; u < n; ++u) {
      const double dx = pts[order[u]].x() - p.x();
      if (dx * dx > best.back()) break;
      offer(order[u]);
    }
    double sum = 0.0;
    for (double d2 : best) sum += std::sqrt(d2);
    out[order[r]] = sum / static_cast<double>(kk);
  }
  return out;
}

inline GaussianField init_from_cloud(std::span<const SparsePoint> points) {
  if (points.empty()) throw std::invalid_argument("init_from_cloud: empty point cloud");
  std::vector<Eigen::Vector3d> pos;
  pos.reserve(points.size());
  for (const auto& p : points) pos.push_back(p.position);

  GaussianField field;
  const double diagonal = bbox_diagonal(pos);
  field.scene_diameter = diagonal > 0.0 ? diagonal : 1.0;
  const auto knn = mean_knn_distance(pos, 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    Gaussian g;
    g.mean = points[i].position;
    g.color = points[i].color;
    const double s = points.size() == 1 ? 1e-2 * field.scene_diameter : knn[i];
    g.log_scale.setConstant(std::log(std::max(s, kMinScale)));
    g.opacity_logit = logit(kInitialOpacity);
    g.created_at = 0;
    field.push_back(g);
    field.sanitize(field.size() - 1);
  }
  return field;
}

// Appends one Gaussian per seed; existing entries are not touched.
inline std::size_t integrate_seeds(GaussianField& field, std::span<const SampledSeed> seeds, int frame) {
  for (const auto& s : seeds) {
    Gaussian g;
    g.mean = s.position;
    g.color = s.color;
    g.created_at = frame;
    g.log_scale.setConstant(std::log(std::max(s.spacing_px * s.units_per_px, kMinScale)));
    g.opacity_logit = logit(kInitialOpacity);
    field.push_back(g);
    field.sanitize(field.size() - 1);
  }
  return seeds.size();
}

// Checkpoints: binary little-endian PLY, one `vertex` per Gaussian. Values
// are stored as doubles so that save/load is lossless.
namespace detail {

inline constexpr const char* kCheckpointVersion = "orthosplat-checkpoint 1";
inline constexpr std::array<const char*, 15> kPlyProperties = {
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
    "rot_2", "rot_3", "opacity", "red", "green", "blue", "created_at"};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace detail

inline void save_checkpoint(const GaussianField& field, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << "ply\nformat binary_little_endian 1.0\ncomment " << detail::kCheckpointVersion << "\n";
  if (field.sample_spacing > 0.0) out << "comment sample_spacing " << std::setprecision(17) << field.sample_spacing << "\n";
  out << "element vertex " << field.size() << "\n";
  for (const char* name : detail::kPlyProperties) out << "property double " << name << "\n";
  out << "end_header\n";
  std::vector<double> row(detail::kPlyProperties.size());
  for (const auto& g : field.gaussians) {
    row = {g.mean.x(), g.mean.y(), g.mean.z(), g.log_scale.x(), g.log_scale.y(), g.log_scale.z(),
           g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3], g.opacity_logit,
           g.color.x(), g.color.y(), g.color.z(), static_cast<double>(g.created_at)};
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  if (!out) throw IoError(path.string(), "write failed");
}

inline GaussianField load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open");
  auto fail = [&](const std::string& why) { return CheckpointError(path.string() + ": " + why); };

  std::string line;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw fail("truncated header");
    return line;
  };
  if (next_line() != "ply") throw fail("not a PLY file");
  if (next_line() != "format binary_little_endian 1.0") throw fail("unsupported PLY format");
  if (next_line() != std::string("comment ") + detail::kCheckpointVersion) throw fail("checkpoint version mismatch");
  std::size_t count = 0;
  double sample_spacing = 0.0;
  next_line();
  if (line.rfind("comment sample_spacing ", 0) == 0) {
    std::istringstream c(line.substr(23));
    if (!(c >> sample_spacing) || !(sample_spacing > 0.0)) throw fail("bad sample_spacing comment");
    next_line();
  }
  {
    std::istringstream hdr(line);
    std::string element, vertex;
    if (!(hdr >> element >> vertex >> count) || element != "element" || vertex != "vertex") {
      throw fail("missing vertex element");
    }
  }
  for (const char* name : detail::kPlyProperties) {
    if (next_line() != std::string("property double ") + name) throw fail("unexpected property layout");
  }
  if (next_line() != "end_header") throw fail("missing end_header");

  GaussianField field;
  field.gaussians.reserve(count);
  std::vector<double> row(detail::kPlyProperties.size());
  for (std::size_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(row.size() * sizeof(double))) throw fail("truncated vertex data");
    Gaussian g;
    g.mean = {row[0], row[1], row[2]};
    g.log_scale = {row[3], row[4], row[5]};
    g.rotation = {row[6], row[7], row[8], row[9]};
    g.opacity_logit = row[10];
    g.color = {row[11], row[12], row[13]};
    g.created_at = static_cast<int>(row[14]);
    field.push_back(g);
  }
  std::vector<Eigen::Vector3d> means;
  means.reserve(field.size());
  for (const auto& g : field.gaussians) means.push_back(g.mean);
  const double diagonal = bbox_diagonal(means);
  field.scene_diameter = diagonal > 0.0 ? diagonal : 1.0;
  field.sample_spacing = sample_spacing;
  return field;
}

}  // namespace orthosplat
