#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lfss/config.hpp"
#include "lfss/evaluation.hpp"
#include "lfss/geometry.hpp"
#include "lfss/model.hpp"
#include "lfss/taxonomy.hpp"

namespace lfss {

struct Frame {
  std::filesystem::path scan;
  std::filesystem::path labels;
  std::string id;
};

struct Dataset {
  std::vector<Frame> frames;
  std::string split;

  /// Expects dir/scans/*.bin with matching dir/labels/<stem>.label; frames
  /// are ordered by filename.
  static Dataset from_dir(const std::filesystem::path& dir, std::string split_tag);
};

/// One frame loaded and mapped into class-id space (not yet stage-remapped).
struct LoadedFrame {
  PointCloud cloud;
  std::vector<ClassId> labels;
};
LoadedFrame load_frame(const Frame& frame, const Taxonomy& tax);

/// Per novel class, the frames drawn for fine-tuning. Frames may serve more
/// than one class. Shortfalls (fewer frames than requested) are warnings,
/// not errors.
struct ShotSample {
  std::uint64_t seed = 0;
  int requested = 0;
  std::map<ClassId, std::vector<std::size_t>> frames_per_class;  // indices into the dataset
  std::vector<std::string> warnings;

  /// Deduplicated union of all per-class draws, ascending.
  std::vector<std::size_t> all_frames() const;

  nlohmann::json to_json() const;
  static ShotSample from_json(const nlohmann::json& j);
};

/// Draws n frames per novel class, uniformly without replacement among the
/// frames containing that class, from a generator seeded by (seed, class).
ShotSample sample_shots(const Dataset& dataset, const Taxonomy& tax, int n, std::uint64_t seed);

struct TrainResult {
  ModelParams params;
  std::vector<Scalar> epoch_loss;  // mean per-frame loss per epoch
};

/// Stage one: supervised training on the base split with novel classes
/// folded into the background.
TrainResult train_base(const Dataset& dataset, const ToolConfig& config);

/// Stage two: extends the classifier heads and fine-tunes on the shot
/// frames with base classes folded into the background; the frozen base
/// model serves as the distillation teacher, recomputed per frame.
TrainResult finetune(const ModelParams& base, const Dataset& dataset, const ShotSample& shots,
                     const ToolConfig& config);

/// Projection, forward pass, per-pixel argmax (ties to the lowest head
/// index) and backprojection to points.
std::vector<ClassId> predict(const ModelParams& params, const PointCloud& cloud,
                             const ProjectionConfig& projection);

/// Prediction and confusion accumulation over a whole split.
ConfusionMatrix evaluate(const ModelParams& params, const Dataset& dataset, const ToolConfig& config);

}  // namespace lfss
