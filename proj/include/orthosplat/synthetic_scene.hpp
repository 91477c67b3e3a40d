#pragma once

// Synthetic nadir survey of a textured ground plane with one box building.
// Images are ray cast, the sparse cloud is a jittered surface grid with
// occlusion-aware tracks, and the true orthophoto is known in closed form.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "orthosplat/image_geometry.hpp"
#include "orthosplat/image_io.hpp"
#include "orthosplat/rng.hpp"
#include "orthosplat/scene_stream.hpp"

namespace orthosplat::synthetic {

struct DeskSceneConfig {
  int image_size = 64;
  int grid = 3;               // grid x grid camera stations
  double station_spacing = 8.0;
  double flying_height = 20.0;
  double focal = 80.0;
  double ground_half_extent = 16.0;
  double building_half_size = 3.0;
  double building_height = 4.0;
  double point_spacing = 1.0;
  double point_jitter = 0.2;
  int supersample = 4;
  std::uint64_t seed = 7;
};

inline const Eigen::Vector3d& facade_color() {
  static const Eigen::Vector3d c(0.85, 0.12, 0.75);
  return c;
}

// Green stays above 0.35 on ground and roof so neither is ever close to the
// facade color.
inline Eigen::Vector3d ground_color(double x, double y) {
  constexpr double kTau = 6.283185307179586;
  const double a = std::sin(kTau * x / 5.0) * std::cos(kTau * y / 4.0);
  const double b = std::sin(kTau * (x + y) / 7.0);
  const double stripe = std::sin(kTau * y / 3.0) > 0.6 ? 1.0 : 0.0;
  return {0.45 + 0.2 * a + 0.1 * stripe, 0.55 + 0.12 * b + 0.1 * stripe, 0.35 + 0.15 * a * b + 0.1 * stripe};
}

inline Eigen::Vector3d roof_color(double x, double y) {
  constexpr double kTau = 6.283185307179586;
  const double s = std::sin(kTau * x / 2.5) * std::sin(kTau * y / 3.5);
  return {0.3 + 0.08 * s, 0.45 + 0.08 * s, 0.75 - 0.1 * s};
}

enum class Surface { kNone, kGround, kRoof, kFacade };

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Surface surface = Surface::kNone;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

class DeskScene {
 public:
  explicit DeskScene(DeskSceneConfig cfg = {}) : cfg_(cfg) {}

  const DeskSceneConfig& config() const { return cfg_; }

  bool in_footprint(double x, double y) const {
    const double h = cfg_.building_half_size;
    return std::abs(x) <= h && std::abs(y) <= h;
  }

  Eigen::Vector3d surface_color(Surface s, const Eigen::Vector3d& p) const {
    switch (s) {
      case Surface::kGround: return ground_color(p.x(), p.y());
      case Surface::kRoof: return roof_color(p.x(), p.y());
      case Surface::kFacade: return facade_color();
      default: return Eigen::Vector3d::Zero();
    }
  }

  // Closest hit along origin + t * dir, t > t_min.
  Hit trace(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, double t_min = 1e-9) const {
    Hit best;
    if (std::abs(dir.z()) > 1e-15) {
      const double t = -origin.z() / dir.z();
      if (t > t_min) best = {t, Surface::kGround, origin + t * dir};
    }
    // Slab test against the building box.
    const double h = cfg_.building_half_size;
    const Eigen::Vector3d lo(-h, -h, 0.0), hi(h, h, cfg_.building_height);
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    int axis_in = -1;
    for (int a = 0; a < 3; ++a) {
      if (std::abs(dir[a]) < 1e-15) {
        if (origin[a] < lo[a] || origin[a] > hi[a]) return best;
        continue;
      }
      double ta = (lo[a] - origin[a]) / dir[a];
      double tb = (hi[a] - origin[a]) / dir[a];
      if (ta > tb) std::swap(ta, tb);
      if (ta > t0) {
        t0 = ta;
        axis_in = a;
      }
      t1 = std::min(t1, tb);
    }
    if (t0 <= t1 && t0 > t_min && t0 < best.t) {
      best = {t0, axis_in == 2 ? Surface::kRoof : Surface::kFacade, origin + t0 * dir};
    }
    return best;
  }

  // World-to-camera pose of a nadir camera above `center` (image x = east,
  // image y = south).
  static FramePose nadir_pose(const Eigen::Vector3d& center) {
    FramePose pose;
    pose.rotation = Eigen::Quaterniond(0.0, 1.0, 0.0, 0.0);  // diag(1, -1, -1)
    pose.translation = -(pose.rotation * center);
    return pose;
  }

  CameraIntrinsics intrinsics() const {
    CameraIntrinsics c;
    c.camera_id = 1;
    c.width = c.height = cfg_.image_size;
    c.fx = c.fy = cfg_.focal;
    c.cx = c.cy = 0.5 * cfg_.image_size;
    return c;
  }

  std::vector<Eigen::Vector3d> stations() const {
    std::vector<Eigen::Vector3d> out;
    const double off = 0.5 * (cfg_.grid - 1) * cfg_.station_spacing;
    for (int r = 0; r < cfg_.grid; ++r)
      for (int c = 0; c < cfg_.grid; ++c)
        out.emplace_back(c * cfg_.station_spacing - off, r * cfg_.station_spacing - off, cfg_.flying_height);
    return out;
  }

  RgbImage render_image(const FramePose& pose, const CameraIntrinsics& intr) const {
    RgbImage img(intr.width, intr.height);
    const Eigen::Vector3d origin = pose.center();
    const Eigen::Matrix3d Rt = pose.rotation_matrix().transpose();
    const int ss = std::max(1, cfg_.supersample);
    for (int y = 0; y < intr.height; ++y) {
      for (int x = 0; x < intr.width; ++x) {
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        for (int sy = 0; sy < ss; ++sy) {
          for (int sx = 0; sx < ss; ++sx) {
            const double u = x + (sx + 0.5) / ss, v = y + (sy + 0.5) / ss;
            const Eigen::Vector3d dir = Rt * Eigen::Vector3d((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
            const Hit hit = trace(origin, dir);
            acc += surface_color(hit.surface, hit.point);
          }
        }
        set_pixel_rgb(img, x, y, acc / (ss * ss));
      }
    }
    return img;
  }

  // True orthophoto sample at a ground position.
  Eigen::Vector3d ortho_color(double x, double y) const {
    return in_footprint(x, y) ? roof_color(x, y) : ground_color(x, y);
  }

  bool visible_from(const Eigen::Vector3d& p, const Eigen::Vector3d& normal, const FramePose& pose,
                    const CameraIntrinsics& intr) const {
    const Eigen::Vector3d cam = pose.center();
    if (normal.dot(cam - p) <= 0.0) return false;
    const auto proj = project(p, pose, intr);
    if (!proj || !in_frame(proj->pixel, intr)) return false;
    const Eigen::Vector3d dir = p - cam;
    const Hit hit = trace(cam, dir);
    return hit.t > 1.0 - 1e-6;
  }

  // Builds the scene files and images under `dir` (images in dir/images).
  SparseScene write(const std::filesystem::path& dir) const {
    SparseScene scene;
    const auto intr = intrinsics();
    scene.cameras[intr.camera_id] = intr;
    const auto centers = stations();
    for (std::size_t i = 0; i < centers.size(); ++i) {
      FramePose pose = nadir_pose(centers[i]);
      pose.image_id = static_cast<ImageId>(i + 1);
      pose.camera_id = intr.camera_id;
      std::ostringstream name;
      name << "img_" << std::setw(3) << std::setfill('0') << i + 1 << ".png";
      pose.name = name.str();
      scene.images.push_back(pose);
    }

    struct Candidate {
      Eigen::Vector3d p;
      Eigen::Vector3d n;
      Surface s;
    };
    std::vector<Candidate> cands;
    SeqRng rng(cfg_.seed);
    auto jitter = [&] { return cfg_.point_jitter * (2.0 * rng.uniform() - 1.0); };
    const double g = cfg_.ground_half_extent, h = cfg_.building_half_size, H = cfg_.building_height;
    const double step = cfg_.point_spacing;
    for (double y = -g; y <= g + 1e-9; y += step) {
      for (double x = -g; x <= g + 1e-9; x += step) {
        const double px = x + jitter(), py = y + jitter();
        if (std::abs(px) < h + 0.05 && std::abs(py) < h + 0.05) continue;
        cands.push_back({{px, py, 0.0}, {0, 0, 1}, Surface::kGround});
      }
    }
    for (double y = -h + 0.5 * step; y < h; y += step)
      for (double x = -h + 0.5 * step; x < h; x += step)
        cands.push_back({{std::clamp(x + jitter(), -h, h), std::clamp(y + jitter(), -h, h), H}, {0, 0, 1}, Surface::kRoof});
    for (double z = 0.5 * step; z < H; z += step) {
      for (double s = -h + 0.5 * step; s < h; s += step) {
        const double zz = std::clamp(z + jitter(), 0.05, H - 0.05), ss = std::clamp(s + jitter(), -h, h);
        cands.push_back({{h, ss, zz}, {1, 0, 0}, Surface::kFacade});
        cands.push_back({{-h, ss, zz}, {-1, 0, 0}, Surface::kFacade});
        cands.push_back({{ss, h, zz}, {0, 1, 0}, Surface::kFacade});
        cands.push_back({{ss, -h, zz}, {0, -1, 0}, Surface::kFacade});
      }
    }

    PointId next_id = 1;
    for (const auto& c : cands) {
      SparsePoint sp;
      sp.id = next_id;
      sp.position = c.p;
      // Byte-quantized, as a text export would store it.
      const Eigen::Vector3d col = surface_color(c.s, c.p);
      for (int k = 0; k < 3; ++k) sp.color[k] = std::round(std::clamp(col[k], 0.0, 1.0) * 255.0) / 255.0;
      for (auto& pose : scene.images) {
        if (!visible_from(c.p, c.n, pose, intr)) continue;
        sp.track.push_back(pose.image_id);
        const auto proj = project(c.p, pose, intr);
        pose.observations.push_back({proj->pixel.x(), proj->pixel.y(), sp.id});
      }
      if (sp.track.empty()) continue;
      scene.points[sp.id] = sp;
      ++next_id;
    }

    save_scene(dir, scene);
    std::filesystem::create_directories(dir / "images");
    for (const auto& pose : scene.images) write_png((dir / "images" / pose.name).string(), render_image(pose, intr));
    return scene;
  }

 private:
  DeskSceneConfig cfg_;
};

}  // namespace orthosplat::synthetic
