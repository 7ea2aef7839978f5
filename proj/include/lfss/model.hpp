#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lfss/geometry.hpp"
#include "lfss/losses.hpp"
#include "lfss/types.hpp"

namespace lfss {

/// Architecture of the per-pixel classifier: the five input channels,
/// optionally augmented with 3x3 valid-neighborhood channel means, feed one
/// hidden tanh layer; each class gets its own linear head on top.
struct ModelArch {
  int input_channels = 5;
  bool neighborhood_features = true;
  int hidden_width = 16;
  Eigen::Matrix<Scalar, 5, 1> channel_mean = Eigen::Matrix<Scalar, 5, 1>::Zero();
  Eigen::Matrix<Scalar, 5, 1> channel_std = Eigen::Matrix<Scalar, 5, 1>::Ones();

  int feature_count() const { return neighborhood_features ? 2 * input_channels : input_channels; }
  void validate() const;
  bool operator==(const ModelArch&) const = default;
};

struct Head {
  ClassId class_id = 0;
  Vector w;
  Scalar b = 0;
};

enum class ModelVersion { kBase, kExtended };

struct ModelParams {
  ModelArch arch;
  Matrix w_hidden;  // hidden_width x feature_count
  Vector b_hidden;  // hidden_width
  std::vector<Head> heads;
  std::size_t base_head_count = 0;  // heads[0..base_head_count) predate extension
  ModelVersion version = ModelVersion::kBase;

  std::vector<ClassId> head_order() const;
  Index head_index(ClassId id) const;
};

enum class FreezeMode { kNone, kBackbone, kBackboneAndBaseHeads };

enum class DecayMode { kMultiplicative, kAdditive };

/// Momentum-SGD state. Velocity buffers mirror the parameter shapes; the
/// learning rate decays once per epoch via end_epoch().
struct OptimizerState {
  Scalar learning_rate = 0.01;
  Scalar momentum = 0.9;
  Scalar lr_decay = 0.01;
  DecayMode decay_mode = DecayMode::kMultiplicative;
  Matrix v_w_hidden;
  Vector v_b_hidden;
  std::vector<Head> v_heads;  // reuses Head as a (w, b) velocity pair

  static OptimizerState create(const ModelParams& params, Scalar lr, Scalar momentum, Scalar lr_decay,
                               DecayMode mode);
  void end_epoch();
};

/// Seeded small-scale initialization; the same seed yields bit-identical
/// parameters.
ModelParams init_model(std::uint64_t seed, const ModelArch& arch, std::span<const ClassId> class_ids);

/// Per-valid-pixel feature rows (normalized channels, plus neighborhood
/// means when enabled), in the image's row-major valid order.
Matrix pixel_features(const RangeImage& image, const ModelArch& arch);

/// One logit row per valid pixel, one column per head.
LogitsMap forward(const ModelParams& params, const RangeImage& image);

/// Copies the model bit-exactly and appends seeded heads for the novel
/// classes. The copy guarantees the extended model matches the base model on
/// the old columns before any training step.
ModelParams extend_heads(const ModelParams& base, std::span<const ClassId> novel_ids, std::uint64_t seed);

/// Parameter gradients accumulated over one or more frames, all taken at
/// the same parameter values.
struct ParamGrads {
  Matrix w_hidden;
  Vector b_hidden;
  std::vector<Head> heads;  // Head reused as a (w, b) gradient pair
  int frames = 0;

  static ParamGrads zero(const ModelParams& params);
};

/// Chain-rules one frame's logit gradient onto the non-frozen parameters
/// and adds it to the accumulator.
void accumulate_gradients(const ModelParams& params, const RangeImage& image, const Matrix& logit_grad,
                          FreezeMode freeze, ParamGrads& grads);

/// One momentum-SGD step (v <- mu v + g, p <- p - lr v) from gradients
/// averaged over the accumulated frames. Frozen parts stay bit-identical.
void apply_step(ModelParams& params, OptimizerState& state, const ParamGrads& grads, FreezeMode freeze);

/// accumulate_gradients + apply_step for a single frame.
void backward_and_step(ModelParams& params, OptimizerState& state, const RangeImage& image,
                       const Matrix& logit_grad, FreezeMode freeze);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     std::uint64_t taxonomy_fingerprint);
ModelParams load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_taxonomy_fingerprint);

}  // namespace lfss
