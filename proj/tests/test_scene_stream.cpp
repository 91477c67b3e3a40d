#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "orthosplat/scene_stream.hpp"
#include "orthosplat/synthetic_scene.hpp"
#include "support/temp_dir.hpp"

using namespace orthosplat;
using testing_support::TempDir;

namespace {

std::map<int, CameraIntrinsics> cameras_from(const std::string& text) {
  std::istringstream in(text);
  return parse_cameras(in);
}

std::vector<FramePose> images_from(const std::string& text) {
  std::istringstream in(text);
  return parse_images(in);
}

PointsParseResult points_from(const std::string& text) {
  std::istringstream in(text);
  return parse_points3d(in);
}

}  // namespace

TEST(ParseCameras, Pinhole) {
  const auto cams = cameras_from("# comment\n1 PINHOLE 640 480 500 500 320 240\n");
  ASSERT_EQ(cams.size(), 1u);
  const auto& c = cams.at(1);
  EXPECT_EQ(c.width, 640);
  EXPECT_EQ(c.height, 480);
  EXPECT_EQ(c.fx, 500);
  EXPECT_EQ(c.fy, 500);
  EXPECT_EQ(c.cx, 320);
  EXPECT_EQ(c.cy, 240);
}

TEST(ParseCameras, SimplePinholeWidens) {
  const auto c = cameras_from("1 SIMPLE_PINHOLE 640 480 500 320 240").at(1);
  EXPECT_EQ(c.fx, 500);
  EXPECT_EQ(c.fy, 500);
  EXPECT_EQ(c.cx, 320);
}

TEST(ParseCameras, UnsupportedModelNamesModel) {
  try {
    cameras_from("1 RADIAL 640 480 500 320 240 0.1 0.01");
    FAIL() << "expected UnsupportedModelError";
  } catch (const UnsupportedModelError& e) {
    EXPECT_EQ(e.model(), "RADIAL");
  }
}

TEST(ParseCameras, MalformedLineNamesLine) {
  try {
    cameras_from("# header\n1 PINHOLE 640 480 500 500 320 240\n2 PINHOLE 640 abc 500 500 320 240\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
  EXPECT_THROW(cameras_from("1 PINHOLE 640 480 500 500 320"), ParseError);
}

TEST(ParseImages, IdentityAndNoneSentinel) {
  const auto poses = images_from("1 1 0 0 0 0 0 0 1 a.png\n100.5 200.5 -1 10 20 7\n");
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_TRUE(poses[0].rotation_matrix().isApprox(Eigen::Matrix3d::Identity()));
  ASSERT_EQ(poses[0].observations.size(), 2u);
  EXPECT_EQ(poses[0].observations[0].u, 100.5);
  EXPECT_EQ(poses[0].observations[0].v, 200.5);
  EXPECT_FALSE(poses[0].observations[0].point3d_id.has_value());
  EXPECT_EQ(poses[0].observations[1].point3d_id, 7);
}

TEST(ParseImages, FileOrderPreserved) {
  const auto poses = images_from(
      "5 1 0 0 0 0 0 0 1 e.png\n\n"
      "2 1 0 0 0 0 0 0 1 b.png\n1 1 -1\n"
      "9 1 0 0 0 0 0 0 1 i.png\n\n");
  ASSERT_EQ(poses.size(), 3u);
  EXPECT_EQ(poses[0].image_id, 5);
  EXPECT_EQ(poses[1].image_id, 2);
  EXPECT_EQ(poses[2].image_id, 9);
  EXPECT_EQ(poses[2].name, "i.png");
}

TEST(ParseImages, QuaternionNormalized) {
  const auto poses = images_from("1 2 0 0 0 0 0 0 1 a.png\n\n");
  EXPECT_NEAR(poses[0].rotation.norm(), 1.0, 1e-12);
}

TEST(ParseImages, Errors) {
  EXPECT_THROW(images_from("1 1 0 0 0 0 0 0 1 a.png\n"
                           "1 1 -1\n"
                           "2 1 0 0 0 0 0 0 1 b.png\n1 2 -1\n3 1 0 0 0 0 0 0 1 c.png\n1 1 -1\n"
                           "junk\n"),
               ParseError);
  EXPECT_THROW(images_from("1 1 0 0 0 x 0 0 1 a.png\n\n"), ParseError);
  EXPECT_THROW(images_from("1 0 0 0 0 0 0 0 1 a.png\n\n"), ParseError);
  EXPECT_THROW(images_from("1 1e-7 0 0 0 0 0 0 1 a.png\n\n"), ParseError);
  EXPECT_THROW(images_from("1 1 0 0 0 0 0 0 1 a.png\n1 2\n"), ParseError);
}

TEST(ParsePoints, ExampleLine) {
  const auto res = points_from("7 1 2 3 255 0 0 0.5 1 0 2 5\n");
  ASSERT_EQ(res.points.size(), 1u);
  const auto& p = res.points.at(7);
  EXPECT_EQ(p.position, Eigen::Vector3d(1, 2, 3));
  EXPECT_EQ(p.color, Eigen::Vector3d(1, 0, 0));
  EXPECT_EQ(p.track, (std::vector<ImageId>{1, 2}));
}

TEST(ParsePoints, ColorRescaleAndDedup) {
  const auto res = points_from("1 0 0 0 128 128 128 0 1 0 1 4\n");
  const auto& p = res.points.at(1);
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(p.color[k], 128.0 / 255.0);
  EXPECT_EQ(p.track, (std::vector<ImageId>{1}));
}

TEST(ParsePoints, OddTrackAndEmptyTrack) {
  EXPECT_THROW(points_from("1 0 0 0 1 1 1 0 1 0 2\n"), ParseError);
  const auto res = points_from("1 0 0 0 1 1 1 0\n2 0 0 0 1 1 1 0 3 0\n");
  EXPECT_EQ(res.skipped_empty_tracks, 1);
  EXPECT_EQ(res.points.size(), 1u);
  EXPECT_TRUE(res.points.count(2));
}

TEST(SceneIo, RoundTrip) {
  TempDir dir;
  synthetic::DeskSceneConfig cfg;
  cfg.image_size = 16;
  cfg.supersample = 1;
  const auto scene = synthetic::DeskScene(cfg).write(dir.path());
  const auto back = load_scene(dir.path());
  ASSERT_EQ(back.cameras.size(), scene.cameras.size());
  ASSERT_EQ(back.images.size(), scene.images.size());
  ASSERT_EQ(back.points.size(), scene.points.size());
  for (std::size_t i = 0; i < scene.images.size(); ++i) {
    const auto& a = scene.images[i];
    const auto& b = back.images[i];
    EXPECT_EQ(a.image_id, b.image_id);
    EXPECT_EQ(a.name, b.name);
    EXPECT_LE((a.translation - b.translation).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(std::abs(a.rotation.angularDistance(b.rotation)), 1e-9);
    ASSERT_EQ(a.observations.size(), b.observations.size());
    for (std::size_t k = 0; k < a.observations.size(); ++k) {
      EXPECT_NEAR(a.observations[k].u, b.observations[k].u, 1e-9);
      EXPECT_NEAR(a.observations[k].v, b.observations[k].v, 1e-9);
      EXPECT_EQ(a.observations[k].point3d_id, b.observations[k].point3d_id);
    }
  }
  for (const auto& [id, p] : scene.points) {
    const auto& q = back.points.at(id);
    EXPECT_LE((p.position - q.position).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((p.color - q.color).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(p.track, q.track);
  }
}

TEST(SceneIo, MissingReferencedPointIsRejected) {
  TempDir dir;
  std::ofstream(dir / "cameras.txt") << "1 PINHOLE 4 4 2 2 2 2\n";
  std::ofstream(dir / "images.txt") << "1 1 0 0 0 0 0 0 1 a.png\n1 1 99\n";
  std::ofstream(dir / "points3D.txt") << "1 0 0 1 0 0 0 0 1 0\n";
  EXPECT_ANY_THROW(load_scene(dir.path()));
}

class ReplayTest : public ::testing::Test {
 protected:
  void SetUp() override {
    synthetic::DeskSceneConfig cfg;
    cfg.image_size = 16;
    cfg.supersample = 1;
    scene_ = synthetic::DeskScene(cfg).write(dir_.path());
  }
  TempDir dir_;
  SparseScene scene_;
};

TEST_F(ReplayTest, FirstEventAndExhaustion) {
  SceneStream stream(load_scene(dir_.path()), dir_ / "images");
  ASSERT_EQ(stream.size(), 9u);
  auto first = stream.replay_next();
  ASSERT_TRUE(first);
  EXPECT_EQ(first->frame_index, 0);
  EXPECT_EQ(first->pose.image_id, 1);
  std::size_t seen_by_1 = 0;
  for (const auto& [id, p] : scene_.points) seen_by_1 += p.observed_by(1);
  EXPECT_EQ(first->cloud_snapshot.size(), seen_by_1);
  for (const auto& p : first->cloud_snapshot) EXPECT_TRUE(p.observed_by(1));
  for (int i = 1; i < 9; ++i) ASSERT_TRUE(stream.replay_next());
  EXPECT_FALSE(stream.replay_next());
}

TEST_F(ReplayTest, SnapshotsAreMonotoneAndSorted) {
  SceneStream stream(load_scene(dir_.path()), dir_ / "images");
  std::vector<PointId> prev;
  while (auto ev = stream.replay_next()) {
    std::vector<PointId> ids;
    for (const auto& p : ev->cloud_snapshot) ids.push_back(p.id);
    EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
    EXPECT_TRUE(std::includes(ids.begin(), ids.end(), prev.begin(), prev.end()));
    EXPECT_GE(ids.size(), prev.size());
    EXPECT_TRUE(ev->image->same_size(ev->intrinsics.width, ev->intrinsics.height));
    prev = ids;
  }
  EXPECT_EQ(prev.size(), scene_.points.size());
}

TEST_F(ReplayTest, Deterministic) {
  SceneStream a(load_scene(dir_.path()), dir_ / "images");
  SceneStream b(load_scene(dir_.path()), dir_ / "images");
  while (true) {
    auto ea = a.replay_next();
    auto eb = b.replay_next();
    ASSERT_EQ(ea.has_value(), eb.has_value());
    if (!ea) break;
    EXPECT_EQ(ea->frame_index, eb->frame_index);
    EXPECT_EQ(ea->pose.image_id, eb->pose.image_id);
    EXPECT_TRUE(*ea->image == *eb->image);
    ASSERT_EQ(ea->cloud_snapshot.size(), eb->cloud_snapshot.size());
    for (std::size_t i = 0; i < ea->cloud_snapshot.size(); ++i) {
      EXPECT_EQ(ea->cloud_snapshot[i].id, eb->cloud_snapshot[i].id);
      EXPECT_EQ(ea->cloud_snapshot[i].position, eb->cloud_snapshot[i].position);
    }
  }
}

TEST_F(ReplayTest, ManifestOverridesOrder) {
  const auto manifest = dir_ / "order.txt";
  std::ofstream(manifest) << "img_009.png\n\nimg_001.png\n";
  SceneStream stream(load_scene(dir_.path()), dir_ / "images", read_order_manifest(manifest));
  ASSERT_EQ(stream.size(), 2u);
  EXPECT_EQ(stream.replay_next()->pose.image_id, 9);
  EXPECT_EQ(stream.replay_next()->pose.image_id, 1);
  EXPECT_FALSE(stream.replay_next());
}

TEST_F(ReplayTest, MissingImageNamesPath) {
  std::filesystem::remove(dir_ / "images/img_002.png");
  SceneStream stream(load_scene(dir_.path()), dir_ / "images");
  ASSERT_TRUE(stream.replay_next());
  try {
    stream.replay_next();
    FAIL() << "expected StreamError";
  } catch (const StreamError& e) {
    EXPECT_NE(e.path().find("img_002.png"), std::string::npos);
  }
}

TEST_F(ReplayTest, UndecodableImage) {
  std::ofstream(dir_ / "images/img_001.png") << "not an image";
  SceneStream stream(load_scene(dir_.path()), dir_ / "images");
  EXPECT_THROW(stream.replay_next(), StreamError);
}

TEST(ImageIo, PpmAndPngRoundTrip) {
  TempDir dir;
  RgbImage img(5, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) set_pixel_rgb(img, x, y, {(x * 51) / 255.0, (y * 100) / 255.0, 1.0});
  write_ppm((dir / "a.ppm").string(), img);
  write_png((dir / "a.png").string(), img);
  const auto ppm = read_image((dir / "a.ppm").string());
  const auto png = read_image((dir / "a.png").string());
  for (std::size_t i = 0; i < img.data().size(); ++i) {
    EXPECT_NEAR(ppm.data()[i], img.data()[i], 1e-12);
    EXPECT_NEAR(png.data()[i], img.data()[i], 1e-12);
  }
}

TEST(ImageIo, RgbaAlphaIsDropped) {
  TempDir dir;
  RgbImage img(2, 1, 0.0);
  set_pixel_rgb(img, 0, 0, {1.0, 0.0, 0.0});
  GrayImage alpha(2, 1, 0.0);
  write_png((dir / "a.png").string(), img, &alpha);
  const auto back = read_image((dir / "a.png").string());
  EXPECT_EQ(pixel_rgb(back, 0, 0), Eigen::Vector3d(1, 0, 0));
  EXPECT_EQ(read_png_alpha((dir / "a.png").string()).at(0, 0), 0.0);
}
