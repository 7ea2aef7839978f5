#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "lfss/geometry.hpp"
#include "lfss/rng.hpp"

using namespace lfss;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "lfss_geometry_test";
  fs::create_directories(dir);
  return dir;
}

fs::path write_bytes(const std::string& name, const std::vector<char>& bytes) {
  const fs::path p = temp_dir() / name;
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  return p;
}

std::vector<char> float_bytes(const std::vector<float>& floats) {
  std::vector<char> bytes(floats.size() * 4);
  std::memcpy(bytes.data(), floats.data(), bytes.size());
  return bytes;
}

ProjectionConfig kitti_cfg() {
  ProjectionConfig cfg;
  cfg.width = 2048;
  cfg.height = 64;
  cfg.fov_up = 3.0 * ProjectionConfig::kDegree;
  cfg.fov_down = 25.0 * ProjectionConfig::kDegree;
  return cfg;
}

PointCloud random_cloud(Rng& rng, Index n) {
  PointCloud cloud;
  cloud.points.resize(n, 4);
  for (Index i = 0; i < n; ++i) {
    const Scalar yaw = rng.uniform(-3.14, 3.14);
    const Scalar pitch = rng.uniform(-0.6, 0.2);  // spills past the FOV on purpose
    const Scalar r = rng.uniform(0.5, 60.0);
    cloud.points(i, 0) = r * std::cos(pitch) * std::cos(yaw);
    cloud.points(i, 1) = r * std::cos(pitch) * std::sin(yaw);
    cloud.points(i, 2) = r * std::sin(pitch);
    cloud.points(i, 3) = rng.uniform(0.0, 1.0);
  }
  return cloud;
}

}  // namespace

TEST_CASE("read_scan decodes packed float quadruples") {
  const auto p = write_bytes("one_point.bin", float_bytes({1.0f, 2.0f, 3.0f, 0.5f}));
  const PointCloud cloud = read_scan(p);
  REQUIRE(cloud.size() == 1);
  CHECK(cloud.points(0, 0) == 1.0);
  CHECK(cloud.points(0, 1) == 2.0);
  CHECK(cloud.points(0, 2) == 3.0);
  CHECK(cloud.points(0, 3) == 0.5);
}

TEST_CASE("read_scan accepts an empty file and rejects later") {
  const auto p = write_bytes("empty.bin", {});
  const PointCloud cloud = read_scan(p);
  CHECK(cloud.size() == 0);
  CHECK_THROWS(project(cloud, kitti_cfg()));
}

TEST_CASE("read_scan rejects truncated records") {
  std::vector<char> bytes(17, 0);
  const auto p = write_bytes("truncated.bin", bytes);
  CHECK_THROWS_WITH_AS(read_scan(p), doctest::Contains("17"), std::runtime_error);
}

TEST_CASE("read_scan rejects non-finite values with their position") {
  std::vector<float> floats = {1.0f, 2.0f, 3.0f, 0.5f, 4.0f, std::nanf(""), 6.0f, 0.25f};
  const auto p = write_bytes("nan.bin", float_bytes(floats));
  CHECK_THROWS_WITH_AS(read_scan(p), doctest::Contains("point 1"), std::runtime_error);
}

TEST_CASE("read_scan reports missing files") {
  CHECK_THROWS(read_scan(temp_dir() / "no_such_file.bin"));
}

TEST_CASE("read_labels keeps the low 16 bits") {
  std::vector<char> bytes(8);
  const std::uint32_t w0 = 0x00010028;  // semantic 40, instance 1
  const std::uint32_t w1 = 0x00000000;
  std::memcpy(bytes.data(), &w0, 4);
  std::memcpy(bytes.data() + 4, &w1, 4);
  const auto p = write_bytes("labels.label", bytes);
  const auto labels = read_labels(p, 2);
  REQUIRE(labels.size() == 2);
  CHECK(labels[0] == 40);
  CHECK(labels[1] == 0);
}

TEST_CASE("read_labels rejects a length mismatch") {
  std::vector<char> bytes(4, 0);
  const auto p = write_bytes("short.label", bytes);
  CHECK_THROWS_WITH_AS(read_labels(p, 2), doctest::Contains("expected 2"), std::runtime_error);
}

TEST_CASE("read_labels validates against an id table") {
  std::vector<char> bytes(4);
  const std::uint32_t w = 1234;
  std::memcpy(bytes.data(), &w, 4);
  const auto p = write_bytes("unknown.label", bytes);
  CHECK(read_labels(p, 1)[0] == 1234);  // plain decode is fine
  CHECK_THROWS_WITH_AS(read_labels(p, 1, {0, 1, 2}), doctest::Contains("1234"), std::runtime_error);
}

TEST_CASE("scan and label writers round-trip through the readers") {
  Rng rng(99);
  PointCloud cloud = random_cloud(rng, 64);
  const auto sp = temp_dir() / "rt.bin";
  write_scan(sp, cloud);
  const PointCloud back = read_scan(sp);
  REQUIRE(back.size() == cloud.size());
  // values pass through float32, which the generator already used
  for (Index i = 0; i < cloud.size(); ++i) {
    for (Index c = 0; c < 4; ++c) {
      CHECK(static_cast<float>(back.points(i, c)) == static_cast<float>(cloud.points(i, c)));
    }
  }
  const std::vector<std::uint16_t> labels = {1, 9, 40, 0};
  const auto lp = temp_dir() / "rt.label";
  write_labels(lp, labels);
  CHECK(read_labels(lp, 4) == labels);
}

TEST_CASE("projection matches the hand-derived examples") {
  const ProjectionConfig cfg = kitti_cfg();
  // straight ahead at 10 m: dead-center column, row just below the horizon
  const PixelCoord a = project_point(10, 0, 0, cfg);
  CHECK(a.u == 1024);
  CHECK(a.v == 6);
  // 3-4-5 triangle: u = (1 - atan2(4,3)/pi) * 1024 = 721.7...
  const PixelCoord b = project_point(3, 4, 0, cfg);
  CHECK(b.u == 721);
  CHECK(b.v == 6);
}

TEST_CASE("pixel collisions keep the nearest point, ties the smallest index") {
  ProjectionConfig cfg = kitti_cfg();
  PointCloud cloud;
  cloud.points.resize(2, 4);
  cloud.points.row(0) << 5, 0, 0, 0.1;
  cloud.points.row(1) << 2, 0, 0, 0.9;
  const RangeImage img = project(cloud, cfg);
  const PixelCoord px = project_point(2, 0, 0, cfg);
  CHECK(img.point_index(px.v, px.u) == 1);
  CHECK(img.channels[4](px.v, px.u) == doctest::Approx(2.0));
  CHECK(img.valid_count == 1);

  // identical points: the smaller index wins regardless of file order
  PointCloud tie;
  tie.points.resize(2, 4);
  tie.points.row(0) << 5, 0, 0, 0.1;
  tie.points.row(1) << 5, 0, 0, 0.9;
  const RangeImage tie_img = project(tie, cfg);
  CHECK(tie_img.point_index(px.v, px.u) == 0);
}

TEST_CASE("project rejects zero-range points naming the index") {
  PointCloud cloud;
  cloud.points.resize(2, 4);
  cloud.points.row(0) << 1, 0, 0, 0;
  cloud.points.row(1) << 0, 0, 0, 0;
  CHECK_THROWS_WITH_AS(project(cloud, kitti_cfg()), doctest::Contains("point 1"), std::invalid_argument);
}

TEST_CASE("backproject labels every point, including collision losers") {
  ProjectionConfig cfg = kitti_cfg();
  PointCloud cloud;
  cloud.points.resize(2, 4);
  cloud.points.row(0) << 5, 0, 0, 0.1;
  cloud.points.row(1) << 2, 0, 0, 0.9;
  const RangeImage img = project(cloud, cfg);
  LabelGrid grid = LabelGrid::Constant(cfg.height, cfg.width, kIgnore);
  const PixelCoord px = project_point(2, 0, 0, cfg);
  grid(px.v, px.u) = 7;
  const auto labels = backproject(grid, img, cloud);
  CHECK(labels == std::vector<ClassId>{7, 7});
}

TEST_CASE("backproject rejects shape mismatches") {
  ProjectionConfig cfg = kitti_cfg();
  PointCloud cloud;
  cloud.points.resize(1, 4);
  cloud.points.row(0) << 5, 0, 0, 0.1;
  const RangeImage img = project(cloud, cfg);
  LabelGrid wrong = LabelGrid::Constant(cfg.height, cfg.width - 1, kIgnore);
  CHECK_THROWS_AS(backproject(wrong, img, cloud), std::invalid_argument);
}

TEST_CASE("projection invariants hold on random clouds") {
  ProjectionConfig cfg;
  cfg.width = 128;
  cfg.height = 16;
  cfg.fov_up = 10 * ProjectionConfig::kDegree;
  cfg.fov_down = 20 * ProjectionConfig::kDegree;
  Rng rng(2024);
  for (int it = 0; it < 60; ++it) {
    const PointCloud cloud = random_cloud(rng, 1 + static_cast<Index>(rng.below(300)));
    const RangeImage img = project(cloud, cfg);

    CHECK(img.valid_count == static_cast<Index>(img.valid.count()));
    Index valid_with_index = 0;
    for (int v = 0; v < cfg.height; ++v) {
      for (int u = 0; u < cfg.width; ++u) {
        if (img.valid(v, u)) {
          REQUIRE(img.point_index(v, u) >= 0);
          REQUIRE(img.point_index(v, u) < cloud.size());
          ++valid_with_index;
          // channel consistency: stored range equals the stored point's norm
          const Scalar r = std::sqrt(img.channels[0](v, u) * img.channels[0](v, u) +
                                     img.channels[1](v, u) * img.channels[1](v, u) +
                                     img.channels[2](v, u) * img.channels[2](v, u));
          CHECK(img.channels[4](v, u) == doctest::Approx(r).epsilon(1e-6));
        } else {
          CHECK(img.point_index(v, u) == -1);
          for (const auto& ch : img.channels) CHECK(ch(v, u) == 0.0);
        }
      }
    }
    CHECK(valid_with_index == img.valid_count);

    // round trip: the pixel a point lands on holds a point at least as near
    for (Index i = 0; i < cloud.size(); ++i) {
      const PixelCoord px = project_point(cloud.points(i, 0), cloud.points(i, 1), cloud.points(i, 2), cfg);
      CHECK(img.valid(px.v, px.u));
      CHECK(img.channels[4](px.v, px.u) <= cloud.range(i) + 1e-12);
    }
  }
}

TEST_CASE("projection is deterministic") {
  ProjectionConfig cfg;
  cfg.width = 64;
  cfg.height = 8;
  cfg.fov_up = 5 * ProjectionConfig::kDegree;
  cfg.fov_down = 15 * ProjectionConfig::kDegree;
  Rng rng(5);
  const PointCloud cloud = random_cloud(rng, 500);
  const RangeImage a = project(cloud, cfg);
  const RangeImage b = project(cloud, cfg);
  for (int c = 0; c < 5; ++c) CHECK(a.channels[c] == b.channels[c]);
  CHECK((a.point_index.array() == b.point_index.array()).all());
  CHECK((a.valid == b.valid).all());
}

TEST_CASE("gather_labels walks valid pixels in row-major order") {
  ProjectionConfig cfg = kitti_cfg();
  PointCloud cloud;
  cloud.points.resize(3, 4);
  cloud.points.row(0) << 10, 0, 0, 0;
  cloud.points.row(1) << 0, 10, 0, 0;
  cloud.points.row(2) << -10, 0.01, 0, 0;
  const RangeImage img = project(cloud, cfg);
  const std::vector<ClassId> point_labels = {3, 1, 2};
  const auto pixel_labels = img.gather_labels(point_labels);
  REQUIRE(pixel_labels.size() == 3);
  // row-major means ascending u on the same row: -x (u~0), +y (u~512), +x (u~1024)
  CHECK(pixel_labels == std::vector<ClassId>{2, 1, 3});
  CHECK_THROWS(img.gather_labels(std::vector<ClassId>{1}));
}
