#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "orthosplat/scene_stream.hpp"

namespace orthosplat {

struct ProjectedPoint {
  PointId point3d_id = -1;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double depth = 0.0;
};

constexpr double kMinProjectionDepth = 1e-9;

// Pinhole projection; nullopt when the point is behind the camera.
inline std::optional<ProjectedPoint> project(const Eigen::Vector3d& position, const FramePose& pose,
                                             const CameraIntrinsics& intr) {
  const Eigen::Vector3d xc = pose.to_camera(position);
  if (xc.z() <= kMinProjectionDepth) return std::nullopt;
  ProjectedPoint p;
  p.pixel = {intr.fx * xc.x() / xc.z() + intr.cx, intr.fy * xc.y() / xc.z() + intr.cy};
  p.depth = xc.z();
  return p;
}

// Inverse of project() for a known depth.
inline Eigen::Vector3d lift_pixel(const Eigen::Vector2d& pixel, double depth, const FramePose& pose,
                                  const CameraIntrinsics& intr) {
  const Eigen::Vector3d xc((pixel.x() - intr.cx) / intr.fx * depth,
                           (pixel.y() - intr.cy) / intr.fy * depth, depth);
  return pose.rotation.conjugate() * (xc - pose.translation);
}

inline bool in_frame(const Eigen::Vector2d& px, const CameraIntrinsics& intr) {
  return px.x() >= 0.0 && px.x() < intr.width && px.y() >= 0.0 && px.y() < intr.height;
}

// Snapshot points tracked by this image that land in front of the camera and
// inside the frame, in ascending point id.
inline std::vector<ProjectedPoint> visible_reprojections(const FrameEvent& event) {
  std::vector<ProjectedPoint> out;
  for (const SparsePoint& p : event.cloud_snapshot) {
    if (!p.observed_by(event.pose.image_id)) continue;
    auto proj = project(p.position, event.pose, event.intrinsics);
    if (!proj || !in_frame(proj->pixel, event.intrinsics)) continue;
    proj->point3d_id = p.id;
    out.push_back(*proj);
  }
  std::sort(out.begin(), out.end(),
            [](const ProjectedPoint& a, const ProjectedPoint& b) { return a.point3d_id < b.point3d_id; });
  return out;
}

}  // namespace orthosplat
