#include "lfss/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "lfss/rng.hpp"

namespace lfss {

Scalar class_intensity(ClassId id) {
  const Scalar golden = 0.6180339887498949;
  const Scalar frac = std::fmod(static_cast<Scalar>(id) * golden, Scalar(1));
  return 0.05 + 0.9 * frac;
}

namespace {

constexpr Scalar kMinHitRange = 0.1;

struct Hit {
  Scalar t = std::numeric_limits<Scalar>::infinity();
  ClassId class_id = kIgnore;
};

void hit_ground(const Eigen::Vector3d& dir, const SceneSpec& spec, Hit& best) {
  if (dir.z() >= 0) return;
  const Scalar t = -spec.sensor.height / dir.z();
  if (t < kMinHitRange || t >= best.t) return;
  const Eigen::Vector3d p = t * dir;
  if (std::abs(p.x()) > spec.extent || std::abs(p.y()) > spec.extent) return;
  best = {t, spec.ground_class};
}

void hit_box(const Eigen::Vector3d& dir, const BoxPrimitive& box, Hit& best) {
  // slab test against the axis-aligned box, ray origin at the sensor
  Scalar t_near = kMinHitRange;
  Scalar t_far = std::numeric_limits<Scalar>::infinity();
  for (int a = 0; a < 3; ++a) {
    const Scalar lo = box.center[a] - box.half_extents[a];
    const Scalar hi = box.center[a] + box.half_extents[a];
    if (dir[a] == 0) {
      if (lo > 0 || hi < 0) return;  // origin outside the slab, parallel ray
      continue;
    }
    Scalar t0 = lo / dir[a];
    Scalar t1 = hi / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return;
  }
  if (t_near < best.t) best = {t_near, box.class_id};
}

void hit_cylinder(const Eigen::Vector3d& dir, const CylinderPrimitive& cyl, Hit& best) {
  const Scalar a = dir.x() * dir.x() + dir.y() * dir.y();
  if (a == 0) return;  // vertical ray never meets the side surface
  const Scalar b = -2.0 * (cyl.center.x() * dir.x() + cyl.center.y() * dir.y());
  const Scalar c = cyl.center.squaredNorm() - cyl.radius * cyl.radius;
  const Scalar disc = b * b - 4 * a * c;
  if (disc < 0) return;
  const Scalar sq = std::sqrt(disc);
  for (const Scalar t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
    if (t < kMinHitRange || t >= best.t) continue;
    const Scalar z = t * dir.z();
    if (z < cyl.z_min || z > cyl.z_max) continue;
    best = {t, cyl.class_id};
    break;  // roots are ordered, the first valid one is nearest
  }
}

}  // namespace

LabeledCloud generate_scene(const SceneSpec& spec) {
  const SensorModel& sensor = spec.sensor;
  if (sensor.beams < 2 || sensor.azimuth_bins < 1) {
    throw std::invalid_argument("generate_scene: need >= 2 beams and >= 1 azimuth bin");
  }
  if (sensor.range_noise_sigma < 0) throw std::invalid_argument("generate_scene: negative noise sigma");

  Rng rng(mix_seed(spec.seed, 0x5ce7e));
  LabeledCloud out;
  std::vector<Eigen::Vector4d> rows;
  rows.reserve(static_cast<std::size_t>(sensor.beams) * static_cast<std::size_t>(sensor.azimuth_bins));

  const Scalar fov = sensor.fov_up + sensor.fov_down;
  for (int b = 0; b < sensor.beams; ++b) {
    const Scalar pitch = sensor.fov_up - fov * static_cast<Scalar>(b) / static_cast<Scalar>(sensor.beams - 1);
    for (int a = 0; a < sensor.azimuth_bins; ++a) {
      // bin centers keep azimuth away from the atan2 branch cut
      const Scalar yaw = -std::numbers::pi_v<Scalar> +
                         2 * std::numbers::pi_v<Scalar> * (static_cast<Scalar>(a) + Scalar(0.5)) /
                             static_cast<Scalar>(sensor.azimuth_bins);
      const Eigen::Vector3d dir(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw),
                                std::sin(pitch));
      Hit best;
      hit_ground(dir, spec, best);
      for (const auto& box : spec.boxes) hit_box(dir, box, best);
      for (const auto& cyl : spec.cylinders) hit_cylinder(dir, cyl, best);
      if (!std::isfinite(best.t)) continue;

      const Scalar r = std::max(best.t + sensor.range_noise_sigma * rng.normal(), Scalar(0.05));
      const Scalar intensity =
          std::clamp(class_intensity(best.class_id) + 0.05 * rng.normal(), Scalar(0), Scalar(1));
      const Eigen::Vector3d p = r * dir;
      rows.emplace_back(p.x(), p.y(), p.z(), intensity);
      out.labels.push_back(best.class_id);
    }
  }
  if (rows.empty()) throw std::runtime_error("generate_scene: degenerate scene, no ray hit anything");

  out.cloud.points.resize(static_cast<Index>(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.cloud.points.row(static_cast<Index>(i)) = rows[i].transpose();
  }
  return out;
}

SceneSpec random_scene(std::uint64_t seed, const SynthConfig& config) {
  Rng rng(mix_seed(seed, 0xd1ce));
  SceneSpec spec;
  spec.seed = mix_seed(seed, 0x017e);
  spec.extent = config.extent;
  spec.ground_class = config.ground_class;
  spec.sensor = config.sensor;
  const Scalar floor_z = -config.sensor.height;

  auto place_xy = [&](Scalar min_dist, Scalar max_dist) {
    // rejection keeps objects off the sensor; bounded because the annulus
    // covers most of the square
    for (int tries = 0; tries < 64; ++tries) {
      const Scalar x = rng.uniform(-max_dist, max_dist);
      const Scalar y = rng.uniform(-max_dist, max_dist);
      if (std::hypot(x, y) >= min_dist) return Eigen::Vector2d(x, y);
    }
    return Eigen::Vector2d(min_dist, 0);
  };

  const int walls = 1 + static_cast<int>(rng.below(2));
  for (int i = 0; i < walls; ++i) {
    const Eigen::Vector2d c = place_xy(5.0, config.extent - 2);
    const bool along_x = rng.below(2) == 0;
    const Scalar long_half = rng.uniform(2.0, 5.0);
    const Scalar height = rng.uniform(1.8, 2.8);
    BoxPrimitive wall;
    wall.class_id = config.wall_class;
    wall.center = {c.x(), c.y(), floor_z + height / 2};
    wall.half_extents = along_x ? Eigen::Vector3d(long_half, 0.15, height / 2)
                                : Eigen::Vector3d(0.15, long_half, height / 2);
    spec.boxes.push_back(wall);
  }

  const int poles = 2 + static_cast<int>(rng.below(5));
  for (int i = 0; i < poles; ++i) {
    const Eigen::Vector2d c = place_xy(3.0, config.extent - 1);
    CylinderPrimitive pole;
    pole.class_id = config.pole_class;
    pole.center = c;
    pole.radius = rng.uniform(0.06, 0.15);
    pole.z_min = floor_z;
    pole.z_max = floor_z + rng.uniform(2.5, 4.5);
    spec.cylinders.push_back(pole);
  }

  for (std::size_t ci = 0; ci < config.box_classes.size(); ++ci) {
    const int count = rng.uniform() < 0.85 ? 1 + static_cast<int>(rng.below(2)) : 0;
    for (int i = 0; i < count; ++i) {
      const Eigen::Vector2d c = place_xy(3.0, config.extent - 2);
      BoxPrimitive box;
      box.class_id = config.box_classes[ci];
      // alternate between a low wide profile and a tall narrow one so the
      // box classes overlap the walls/poles statistics without matching them
      Eigen::Vector3d he;
      if (ci % 2 == 0) {
        he = {rng.uniform(0.8, 1.2), rng.uniform(0.5, 0.8), rng.uniform(0.4, 0.6)};
      } else {
        he = {rng.uniform(0.25, 0.4), rng.uniform(0.25, 0.4), rng.uniform(0.5, 0.8)};
      }
      box.center = {c.x(), c.y(), floor_z + he.z()};
      box.half_extents = he;
      spec.boxes.push_back(box);
    }
  }
  return spec;
}

namespace {

void write_split(const std::filesystem::path& dir, int frames, std::uint64_t seed, const SynthConfig& config,
                 const Taxonomy& tax) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "scans");
  fs::create_directories(dir / "labels");
  for (int f = 0; f < frames; ++f) {
    const SceneSpec spec = random_scene(mix_seed(seed, static_cast<std::uint64_t>(f)), config);
    const LabeledCloud scene = generate_scene(spec);
    char name[16];
    std::snprintf(name, sizeof(name), "%06d", f);
    write_scan(dir / "scans" / (std::string(name) + ".bin"), scene.cloud);
    std::vector<std::uint16_t> raw;
    raw.reserve(scene.labels.size());
    for (ClassId id : scene.labels) raw.push_back(tax.raw_for_class(id));
    write_labels(dir / "labels" / (std::string(name) + ".label"), raw);
  }
}

}  // namespace

void write_corpus(const std::filesystem::path& out_dir, const SynthConfig& config, const Taxonomy& tax) {
  if (config.base_train_frames < 1 || config.shot_pool_frames < 1 || config.eval_frames < 1) {
    throw std::invalid_argument("write_corpus: every split needs at least one frame");
  }
  for (ClassId id : config.box_classes) {
    if (!tax.contains(id)) throw std::invalid_argument("write_corpus: box class " + std::to_string(id) +
                                                       " is not in the taxonomy");
  }
  write_split(out_dir / "base_train", config.base_train_frames, config.seed_base_train, config, tax);
  write_split(out_dir / "shot_pool", config.shot_pool_frames, config.seed_shot_pool, config, tax);
  write_split(out_dir / "eval", config.eval_frames, config.seed_eval, config, tax);
}

}  // namespace lfss
