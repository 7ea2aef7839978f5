#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>
#include <vector>

#include "lfss/protocol.hpp"
#include "lfss/synth.hpp"

using namespace lfss;
namespace fs = std::filesystem;

namespace {

SceneSpec ground_only(Scalar sigma) {
  SceneSpec spec;
  spec.seed = 5;
  spec.extent = 12;
  spec.ground_class = 1;
  spec.sensor.beams = 8;
  spec.sensor.azimuth_bins = 90;
  spec.sensor.fov_up = 5 * ProjectionConfig::kDegree;
  spec.sensor.fov_down = 20 * ProjectionConfig::kDegree;
  spec.sensor.height = 1.6;
  spec.sensor.range_noise_sigma = sigma;
  return spec;
}

Taxonomy synth_taxonomy() {
  Taxonomy tax;
  tax.background = 9;
  tax.base = {1, 2, 3};
  tax.novel = {4, 5};
  tax.raw_to_class = {{0, kIgnore}, {1, 1}, {2, 2}, {3, 3}, {4, 4}, {5, 5}, {9, 9}};
  tax.validate();
  return tax;
}

}  // namespace

TEST_CASE("a noiseless ground plane yields only ground points at plane height") {
  const SceneSpec spec = ground_only(0.0);
  const LabeledCloud scene = generate_scene(spec);
  REQUIRE(scene.cloud.size() > 0);
  for (ClassId id : scene.labels) CHECK(id == 1);
  for (Index i = 0; i < scene.cloud.size(); ++i) {
    CHECK(scene.cloud.points(i, 2) == doctest::Approx(-1.6).epsilon(1e-9));
  }
  // upward beams miss: point count is beams x bins minus the misses
  CHECK(scene.cloud.size() < static_cast<Index>(spec.sensor.beams) * spec.sensor.azimuth_bins);
  CHECK(static_cast<std::size_t>(scene.cloud.size()) == scene.labels.size());
}

TEST_CASE("the same seed reproduces the identical cloud") {
  SceneSpec spec = ground_only(0.05);
  BoxPrimitive box;
  box.class_id = 4;
  box.center = {6, 0, -1.0};
  box.half_extents = {0.8, 0.8, 0.6};
  spec.boxes.push_back(box);
  const LabeledCloud a = generate_scene(spec);
  const LabeledCloud b = generate_scene(spec);
  CHECK(a.cloud.points == b.cloud.points);
  CHECK(a.labels == b.labels);
  spec.seed += 1;
  const LabeledCloud c = generate_scene(spec);
  CHECK(a.cloud.points != c.cloud.points);
}

TEST_CASE("a box in front of the sensor claims a contiguous azimuth interval with nearer ranges") {
  SceneSpec without = ground_only(0.0);
  SceneSpec with = without;
  BoxPrimitive box;
  box.class_id = 4;  // car-like
  box.center = {5, 0, -1.0};
  box.half_extents = {1.0, 1.0, 0.6};
  with.boxes.push_back(box);

  const LabeledCloud plain = generate_scene(without);
  const LabeledCloud scene = generate_scene(with);

  // compare ray by ray: key rays by rounded direction
  auto ray_key = [](const PointCloud& c, Index i) {
    const Scalar r = c.range(i);
    const Scalar yaw = std::atan2(c.points(i, 1), c.points(i, 0));
    const Scalar pitch = std::asin(c.points(i, 2) / r);
    return std::make_pair(static_cast<int>(std::lround(yaw * 1e4)),
                          static_cast<int>(std::lround(pitch * 1e4)));
  };
  std::map<std::pair<int, int>, Scalar> plain_ranges;
  for (Index i = 0; i < plain.cloud.size(); ++i) plain_ranges[ray_key(plain.cloud, i)] = plain.cloud.range(i);

  int box_points = 0;
  for (Index i = 0; i < scene.cloud.size(); ++i) {
    if (scene.labels[static_cast<std::size_t>(i)] != 4) continue;
    ++box_points;
    const auto it = plain_ranges.find(ray_key(scene.cloud, i));
    if (it != plain_ranges.end()) {
      CHECK(scene.cloud.range(i) < it->second);  // the box occludes whatever was behind
    }
  }
  CHECK(box_points > 0);

  // contiguity per beam: box-labeled azimuth bins form one interval
  std::map<int, std::vector<Scalar>> box_yaws_per_beam;
  for (Index i = 0; i < scene.cloud.size(); ++i) {
    if (scene.labels[static_cast<std::size_t>(i)] != 4) continue;
    const Scalar r = scene.cloud.range(i);
    const int beam = static_cast<int>(std::lround(std::asin(scene.cloud.points(i, 2) / r) /
                                                  ProjectionConfig::kDegree * 100));
    box_yaws_per_beam[beam].push_back(std::atan2(scene.cloud.points(i, 1), scene.cloud.points(i, 0)));
  }
  const Scalar bin = 2 * std::numbers::pi_v<Scalar> / with.sensor.azimuth_bins;
  for (auto& [beam, yaws] : box_yaws_per_beam) {
    std::sort(yaws.begin(), yaws.end());
    for (std::size_t i = 1; i < yaws.size(); ++i) {
      CHECK(yaws[i] - yaws[i - 1] < 1.5 * bin);  // no gaps: consecutive bins
    }
  }
}

TEST_CASE("a scene with nothing to hit is rejected") {
  SceneSpec spec = ground_only(0.0);
  spec.extent = 0.01;  // ground shrunk to nothing reachable
  CHECK_THROWS(generate_scene(spec));
}

TEST_CASE("class intensities are distinct and inside [0, 1]") {
  std::set<int> buckets;
  for (ClassId id : {1, 2, 3, 4, 5, 9}) {
    const Scalar v = class_intensity(id);
    CHECK(v >= 0.05);
    CHECK(v <= 0.95);
    buckets.insert(static_cast<int>(v * 100));
  }
  CHECK(buckets.size() == 6);
}

TEST_CASE("random scenes are reproducible and respect the class assignment") {
  SynthConfig config;
  config.ground_class = 1;
  config.wall_class = 2;
  config.pole_class = 3;
  config.box_classes = {4, 5};
  config.extent = 15;
  const SceneSpec a = random_scene(99, config);
  const SceneSpec b = random_scene(99, config);
  CHECK(a.boxes.size() == b.boxes.size());
  CHECK(a.cylinders.size() == b.cylinders.size());
  for (const auto& cyl : a.cylinders) CHECK(cyl.class_id == 3);
  for (const auto& box : a.boxes) {
    const bool known = box.class_id == 2 || box.class_id == 4 || box.class_id == 5;
    CHECK(known);
  }
}

TEST_CASE("write_corpus emits the three splits in the binary formats") {
  const fs::path dir = fs::temp_directory_path() / "lfss_synth_corpus";
  fs::remove_all(dir);
  SynthConfig config;
  config.ground_class = 1;
  config.wall_class = 2;
  config.pole_class = 3;
  config.box_classes = {4, 5};
  config.sensor.beams = 8;
  config.sensor.azimuth_bins = 60;
  config.base_train_frames = 3;
  config.shot_pool_frames = 2;
  config.eval_frames = 2;
  const Taxonomy tax = synth_taxonomy();
  write_corpus(dir, config, tax);

  const Dataset train = Dataset::from_dir(dir / "base_train", "train");
  CHECK(train.frames.size() == 3);
  const Dataset pool = Dataset::from_dir(dir / "shot_pool", "pool");
  CHECK(pool.frames.size() == 2);
  const Dataset eval_split = Dataset::from_dir(dir / "eval", "eval");
  CHECK(eval_split.frames.size() == 2);

  // the real readers consume them end to end
  for (const Frame& frame : train.frames) {
    const LoadedFrame f = load_frame(frame, tax);
    CHECK(f.cloud.size() > 0);
    CHECK(f.labels.size() == static_cast<std::size_t>(f.cloud.size()));
    for (ClassId id : f.labels) CHECK(tax.contains(id));
  }
}
