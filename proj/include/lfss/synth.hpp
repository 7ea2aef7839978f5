#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lfss/geometry.hpp"
#include "lfss/taxonomy.hpp"
#include "lfss/types.hpp"

namespace lfss {

struct BoxPrimitive {
  ClassId class_id = 0;
  Eigen::Vector3d center;        // sensor frame
  Eigen::Vector3d half_extents;  // axis-aligned
};

struct CylinderPrimitive {
  ClassId class_id = 0;
  Eigen::Vector2d center;  // xy, sensor frame
  Scalar radius = 0.1;
  Scalar z_min = 0;
  Scalar z_max = 1;
};

struct SensorModel {
  int beams = 16;
  int azimuth_bins = 360;
  Scalar fov_up = 10.0 * ProjectionConfig::kDegree;    // magnitude
  Scalar fov_down = 20.0 * ProjectionConfig::kDegree;  // magnitude
  Scalar height = 1.6;                                 // sensor above ground
  Scalar range_noise_sigma = 0.02;
};

/// A deterministic scene: ground plane plus axis-aligned boxes and vertical
/// cylinders, ray-cast by the sensor model. The seed drives range and
/// intensity noise only; geometry is explicit.
struct SceneSpec {
  std::uint64_t seed = 0;
  Scalar extent = 15.0;  // ground reaches |x|, |y| <= extent
  ClassId ground_class = 0;
  std::vector<BoxPrimitive> boxes;
  std::vector<CylinderPrimitive> cylinders;
  SensorModel sensor;
};

struct LabeledCloud {
  PointCloud cloud;
  std::vector<ClassId> labels;
};

/// Per-class intensity constant in [0.05, 0.95]; golden-ratio spacing keeps
/// distinct classes apart.
Scalar class_intensity(ClassId id);

/// Ray-casts the scene: nearest hit per (beam, azimuth) ray, labels from the
/// hit primitive, seeded Gaussian range noise and intensity jitter. Rays
/// that hit nothing emit no point. Throws if the whole scene misses.
LabeledCloud generate_scene(const SceneSpec& spec);

/// Randomized scene composition for corpus generation.
struct SynthConfig {
  SensorModel sensor;
  Scalar extent = 15.0;
  ClassId ground_class = 0;
  ClassId wall_class = 0;
  ClassId pole_class = 0;
  std::vector<ClassId> box_classes;  // the box-shaped (novel) object classes
  int base_train_frames = 40;
  int shot_pool_frames = 24;
  int eval_frames = 12;
  std::uint64_t seed_base_train = 1000;
  std::uint64_t seed_shot_pool = 2000;
  std::uint64_t seed_eval = 3000;
};

/// Ground + 1-2 walls + 2-6 poles + 0-3 boxes per box class, all placed by
/// the seeded generator.
SceneSpec random_scene(std::uint64_t seed, const SynthConfig& config);

/// Writes the three corpus splits (base_train, shot_pool, eval) under
/// out_dir in the scan/label binary formats, one subdirectory per split with
/// scans/ and labels/ inside.
void write_corpus(const std::filesystem::path& out_dir, const SynthConfig& config, const Taxonomy& tax);

}  // namespace lfss
