#pragma once

// Sparse reconstruction text format (cameras.txt / images.txt / points3D.txt)
// and its replay as an ordered stream of frame events.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "orthosplat/errors.hpp"
#include "orthosplat/image_io.hpp"
#include "orthosplat/raster.hpp"

namespace orthosplat {

using PointId = std::int64_t;
using ImageId = std::int64_t;

struct CameraIntrinsics {
  int camera_id = 0;
  int width = 0;
  int height = 0;
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  bool valid() const {
    return width >= 1 && height >= 1 && fx > 0.0 && fy > 0.0 && cx >= 0.0 && cx < width &&
           cy >= 0.0 && cy < height;
  }
  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

struct Observation {
  double u = 0.0;
  double v = 0.0;
  std::optional<PointId> point3d_id;

  friend bool operator==(const Observation&, const Observation&) = default;
};

// World-to-camera pose: X_cam = R * X_world + t.
struct FramePose {
  ImageId image_id = 0;
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  int camera_id = 0;
  std::string name;
  std::vector<Observation> observations;

  Eigen::Matrix3d rotation_matrix() const { return rotation.toRotationMatrix(); }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
    return rotation * world + translation;
  }
  Eigen::Vector3d center() const { return -(rotation.conjugate() * translation); }
};

struct SparsePoint {
  PointId id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double error = 0.0;
  std::vector<ImageId> track;

  bool observed_by(ImageId image) const {
    return std::find(track.begin(), track.end(), image) != track.end();
  }
};

struct SparseScene {
  std::map<int, CameraIntrinsics> cameras;
  std::vector<FramePose> images;
  std::map<PointId, SparsePoint> points;
};

namespace detail {

inline bool is_blank_or_comment(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}

template <typename T>
T read_field(std::istringstream& in, int line_no, const char* what) {
  T value{};
  if (!(in >> value)) throw ParseError(line_no, std::string("expected ") + what);
  return value;
}

inline void expect_end(std::istringstream& in, int line_no) {
  std::string rest;
  if (in >> rest) throw ParseError(line_no, "unexpected trailing field '" + rest + "'");
}

}  // namespace detail

inline std::map<int, CameraIntrinsics> parse_cameras(std::istream& text) {
  std::map<int, CameraIntrinsics> cameras;
  std::string line;
  int line_no = 0;
  while (std::getline(text, line)) {
    ++line_no;
    if (detail::is_blank_or_comment(line)) continue;
    std::istringstream in(line);
    CameraIntrinsics cam;
    cam.camera_id = detail::read_field<int>(in, line_no, "camera id");
    const auto model = detail::read_field<std::string>(in, line_no, "camera model");
    cam.width = detail::read_field<int>(in, line_no, "width");
    cam.height = detail::read_field<int>(in, line_no, "height");
    if (model == "PINHOLE") {
      cam.fx = detail::read_field<double>(in, line_no, "fx");
      cam.fy = detail::read_field<double>(in, line_no, "fy");
      cam.cx = detail::read_field<double>(in, line_no, "cx");
      cam.cy = detail::read_field<double>(in, line_no, "cy");
    } else if (model == "SIMPLE_PINHOLE") {
      cam.fx = cam.fy = detail::read_field<double>(in, line_no, "f");
      cam.cx = detail::read_field<double>(in, line_no, "cx");
      cam.cy = detail::read_field<double>(in, line_no, "cy");
    } else {
      throw UnsupportedModelError(model);
    }
    detail::expect_end(in, line_no);
    if (!cam.valid()) throw ParseError(line_no, "invalid camera intrinsics");
    cameras[cam.camera_id] = cam;
  }
  return cameras;
}

inline std::vector<FramePose> parse_images(std::istream& text) {
  std::vector<std::pair<int, std::string>> lines;
  std::string line;
  int line_no = 0;
  while (std::getline(text, line)) {
    ++line_no;
    // The observation line may legitimately be empty; only '#' lines are skipped.
    const auto pos = line.find_first_not_of(" \t\r");
    if (pos != std::string::npos && line[pos] == '#') continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.emplace_back(line_no, line);
  }
  // Trailing blank lines are not image records.
  while (!lines.empty() && detail::is_blank_or_comment(lines.back().second) &&
         lines.size() % 2 == 1) {
    lines.pop_back();
  }
  if (lines.size() % 2 != 0) {
    throw ParseError(lines.empty() ? line_no : lines.back().first,
                     "odd number of image lines");
  }

  std::vector<FramePose> poses;
  poses.reserve(lines.size() / 2);
  for (std::size_t i = 0; i < lines.size(); i += 2) {
    const int header_no = lines[i].first;
    std::istringstream in(lines[i].second);
    FramePose pose;
    pose.image_id = detail::read_field<ImageId>(in, header_no, "image id");
    const double qw = detail::read_field<double>(in, header_no, "qw");
    const double qx = detail::read_field<double>(in, header_no, "qx");
    const double qy = detail::read_field<double>(in, header_no, "qy");
    const double qz = detail::read_field<double>(in, header_no, "qz");
    const double norm = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
    if (!(norm >= 1e-6)) throw ParseError(header_no, "quaternion norm below 1e-6");
    pose.rotation = Eigen::Quaterniond(qw / norm, qx / norm, qy / norm, qz / norm);
    for (int k = 0; k < 3; ++k) pose.translation[k] = detail::read_field<double>(in, header_no, "translation");
    pose.camera_id = detail::read_field<int>(in, header_no, "camera id");
    pose.name = detail::read_field<std::string>(in, header_no, "image name");
    detail::expect_end(in, header_no);

    const int obs_no = lines[i + 1].first;
    std::istringstream obs(lines[i + 1].second);
    std::string token;
    std::vector<std::string> tokens;
    while (obs >> token) tokens.push_back(token);
    if (tokens.size() % 3 != 0) throw ParseError(obs_no, "observations must be X Y POINT3D_ID triples");
    for (std::size_t k = 0; k < tokens.size(); k += 3) {
      Observation o;
      try {
        std::size_t used = 0;
        o.u = std::stod(tokens[k], &used);
        if (used != tokens[k].size()) throw std::invalid_argument("u");
        o.v = std::stod(tokens[k + 1], &used);
        if (used != tokens[k + 1].size()) throw std::invalid_argument("v");
        const long long id = std::stoll(tokens[k + 2], &used);
        if (used != tokens[k + 2].size()) throw std::invalid_argument("id");
        if (id != -1) o.point3d_id = id;
      } catch (const std::exception&) {
        throw ParseError(obs_no, "non-numeric observation field");
      }
      pose.observations.push_back(o);
    }
    poses.push_back(std::move(pose));
  }
  return poses;
}

struct PointsParseResult {
  std::map<PointId, SparsePoint> points;
  int skipped_empty_tracks = 0;
};

inline PointsParseResult parse_points3d(std::istream& text) {
  PointsParseResult result;
  std::string line;
  int line_no = 0;
  while (std::getline(text, line)) {
    ++line_no;
    if (detail::is_blank_or_comment(line)) continue;
    std::istringstream in(line);
    SparsePoint p;
    p.id = detail::read_field<PointId>(in, line_no, "point id");
    for (int k = 0; k < 3; ++k) p.position[k] = detail::read_field<double>(in, line_no, "position");
    for (int k = 0; k < 3; ++k) {
      const double byte = detail::read_field<double>(in, line_no, "color");
      if (byte < 0.0 || byte > 255.0) throw ParseError(line_no, "color outside [0,255]");
      p.color[k] = byte / 255.0;
    }
    p.error = detail::read_field<double>(in, line_no, "error");
    std::vector<std::string> rest;
    std::string token;
    while (in >> token) rest.push_back(token);
    if (rest.size() % 2 != 0) throw ParseError(line_no, "odd track length");
    for (std::size_t k = 0; k < rest.size(); k += 2) {
      ImageId image = 0;
      try {
        std::size_t used = 0;
        image = std::stoll(rest[k], &used);
        if (used != rest[k].size()) throw std::invalid_argument("image");
        (void)std::stoll(rest[k + 1], &used);
        if (used != rest[k + 1].size()) throw std::invalid_argument("idx");
      } catch (const std::exception&) {
        throw ParseError(line_no, "non-numeric track entry");
      }
      if (!p.observed_by(image)) p.track.push_back(image);
    }
    if (p.track.empty()) {
      ++result.skipped_empty_tracks;
      continue;
    }
    result.points[p.id] = std::move(p);
  }
  return result;
}

inline void write_cameras(std::ostream& out, const std::map<int, CameraIntrinsics>& cameras) {
  out << "# CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n" << std::setprecision(17);
  for (const auto& [id, c] : cameras) {
    out << id << " PINHOLE " << c.width << " " << c.height << " " << c.fx << " " << c.fy << " "
        << c.cx << " " << c.cy << "\n";
  }
}

inline void write_images(std::ostream& out, const std::vector<FramePose>& poses) {
  out << "# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n# POINTS2D[] as (X, Y, POINT3D_ID)\n"
      << std::setprecision(17);
  for (const auto& p : poses) {
    const auto& q = p.rotation;
    out << p.image_id << " " << q.w() << " " << q.x() << " " << q.y() << " " << q.z() << " "
        << p.translation.x() << " " << p.translation.y() << " " << p.translation.z() << " "
        << p.camera_id << " " << p.name << "\n";
    for (std::size_t k = 0; k < p.observations.size(); ++k) {
      const auto& o = p.observations[k];
      out << (k ? " " : "") << o.u << " " << o.v << " " << (o.point3d_id ? *o.point3d_id : -1);
    }
    out << "\n";
  }
}

// Colors are written as bytes, so only byte-exact colors round-trip exactly.
inline void write_points3d(std::ostream& out, const std::map<PointId, SparsePoint>& points) {
  out << "# POINT3D_ID X Y Z R G B ERROR TRACK[] as (IMAGE_ID, POINT2D_IDX)\n" << std::setprecision(17);
  for (const auto& [id, p] : points) {
    out << id << " " << p.position.x() << " " << p.position.y() << " " << p.position.z();
    for (int k = 0; k < 3; ++k) out << " " << std::lround(std::clamp(p.color[k], 0.0, 1.0) * 255.0);
    out << " " << p.error;
    for (std::size_t k = 0; k < p.track.size(); ++k) out << " " << p.track[k] << " " << k;
    out << "\n";
  }
}

namespace detail {

inline std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StreamError(path.string(), "cannot open");
  return in;
}

}  // namespace detail

// Loads cameras.txt, images.txt and points3D.txt from a directory and checks
// cross references.
inline SparseScene load_scene(const std::filesystem::path& dir, int* skipped_points = nullptr) {
  SparseScene scene;
  {
    auto in = detail::open_or_throw(dir / "cameras.txt");
    scene.cameras = parse_cameras(in);
  }
  {
    auto in = detail::open_or_throw(dir / "images.txt");
    scene.images = parse_images(in);
  }
  {
    auto in = detail::open_or_throw(dir / "points3D.txt");
    auto parsed = parse_points3d(in);
    scene.points = std::move(parsed.points);
    if (skipped_points) *skipped_points = parsed.skipped_empty_tracks;
  }
  for (const auto& pose : scene.images) {
    if (!scene.cameras.count(pose.camera_id)) {
      throw StreamError((dir / "images.txt").string(),
                        "image " + std::to_string(pose.image_id) + " references unknown camera");
    }
    for (const auto& o : pose.observations) {
      if (o.point3d_id && !scene.points.count(*o.point3d_id)) {
        throw StreamError((dir / "images.txt").string(),
                          "observation references unknown point " + std::to_string(*o.point3d_id));
      }
    }
  }
  return scene;
}

inline void save_scene(const std::filesystem::path& dir, const SparseScene& scene) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw IoError((dir / name).string(), "cannot open for writing");
    return out;
  };
  {
    auto out = open("cameras.txt");
    write_cameras(out, scene.cameras);
  }
  {
    auto out = open("images.txt");
    write_images(out, scene.images);
  }
  {
    auto out = open("points3D.txt");
    write_points3d(out, scene.points);
  }
}

struct FrameEvent {
  int frame_index = 0;
  FramePose pose;
  CameraIntrinsics intrinsics;
  std::shared_ptr<const RgbImage> image;
  // Sorted by point id.
  std::vector<SparsePoint> cloud_snapshot;
};

// Replays a parsed scene in acquisition order. Each event reveals one more
// image and every sparse point whose track touches a revealed image.
class SceneStream {
 public:
  SceneStream(SparseScene scene, std::filesystem::path image_dir,
              const std::vector<std::string>& order = {})
      : scene_(std::move(scene)), image_dir_(std::move(image_dir)) {
    if (order.empty()) {
      order_.resize(scene_.images.size());
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
      std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
        return scene_.images[a].image_id < scene_.images[b].image_id;
      });
    } else {
      std::unordered_map<std::string, std::size_t> by_name;
      for (std::size_t i = 0; i < scene_.images.size(); ++i) by_name[scene_.images[i].name] = i;
      for (const auto& name : order) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw StreamError(name, "manifest names an unknown image");
        order_.push_back(it->second);
      }
    }
    for (const auto& [id, p] : scene_.points) {
      for (ImageId img : p.track) points_by_image_[img].push_back(id);
    }
  }

  std::size_t size() const { return order_.size(); }
  std::size_t position() const { return next_; }
  const SparseScene& scene() const { return scene_; }

  // Next event, or nullopt once every image has been replayed.
  std::optional<FrameEvent> replay_next() {
    if (next_ >= order_.size()) return std::nullopt;
    const FramePose& pose = scene_.images[order_[next_]];
    FrameEvent ev;
    ev.frame_index = static_cast<int>(next_);
    ev.pose = pose;
    ev.intrinsics = scene_.cameras.at(pose.camera_id);

    const auto path = (image_dir_ / pose.name).string();
    try {
      ev.image = std::make_shared<const RgbImage>(read_image(path));
    } catch (const IoError& e) {
      throw StreamError(path, e.what());
    }
    if (!ev.image->same_size(ev.intrinsics.width, ev.intrinsics.height)) {
      throw StreamError(path, "image size does not match camera intrinsics");
    }

    if (auto it = points_by_image_.find(pose.image_id); it != points_by_image_.end()) {
      revealed_.insert(it->second.begin(), it->second.end());
    }
    ev.cloud_snapshot.reserve(revealed_.size());
    for (PointId id : revealed_) ev.cloud_snapshot.push_back(scene_.points.at(id));
    ++next_;
    return ev;
  }

 private:
  SparseScene scene_;
  std::filesystem::path image_dir_;
  std::vector<std::size_t> order_;
  std::unordered_map<ImageId, std::vector<PointId>> points_by_image_;
  std::set<PointId> revealed_;
  std::size_t next_ = 0;
};

inline std::vector<std::string> read_order_manifest(const std::filesystem::path& path) {
  auto in = detail::open_or_throw(path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::is_blank_or_comment(line)) continue;
    const auto b = line.find_first_not_of(" \t\r");
    const auto e = line.find_last_not_of(" \t\r");
    names.push_back(line.substr(b, e - b + 1));
  }
  return names;
}

}  // namespace orthosplat
