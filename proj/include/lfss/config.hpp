#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "lfss/evaluation.hpp"
#include "lfss/geometry.hpp"
#include "lfss/losses.hpp"
#include "lfss/model.hpp"
#include "lfss/synth.hpp"
#include "lfss/taxonomy.hpp"

namespace lfss {

struct OptimizerConfig {
  Scalar learning_rate = 0.01;
  Scalar momentum = 0.9;
  Scalar lr_decay = 0.01;
  DecayMode decay_mode = DecayMode::kMultiplicative;
  int batch_frames = 1;  // frames whose gradients are averaged per step
};

struct TrainBaseConfig {
  int epochs = 30;
  std::uint64_t seed = 101;
};

struct FinetuneStageConfig {
  int epochs = 40;
  int shots = 5;
  std::uint64_t seed = 202;
  std::uint64_t shot_seed = 42;
  FreezeMode freeze = FreezeMode::kNone;
  FinetuneLossConfig loss;
};

/// Resolved contents of a toolkit config file. Sections: [projection]
/// (required), [taxonomy] (required), [model], [optimizer], [train_base],
/// [finetune], [losses], [evaluation], [synth] (required only by synth-gen).
struct ToolConfig {
  ProjectionConfig projection;
  Taxonomy taxonomy;
  ModelArch model;
  OptimizerConfig optimizer;
  TrainBaseConfig train_base;
  FinetuneStageConfig finetune;
  Scalar frequency_floor = 1e-4;
  EvalOptions evaluation;
  SynthConfig synth;
  bool has_synth = false;
};

/// Parses the sectioned key=value config format. Unknown sections or keys
/// are rejected with their key path and line number.
ToolConfig parse_config(const std::string& text, const std::string& origin);
ToolConfig load_config(const std::filesystem::path& path);

/// Full resolved configuration as JSON, used in run manifests.
nlohmann::json config_to_json(const ToolConfig& config);

CeMode parse_ce_mode(const std::string& s);
KdMode parse_kd_mode(const std::string& s);
FreezeMode parse_freeze_mode(const std::string& s);
BackgroundTerm parse_background_term(const std::string& s);
const char* to_string(CeMode m);
const char* to_string(KdMode m);
const char* to_string(FreezeMode m);
const char* to_string(BackgroundTerm m);
const char* to_string(DecayMode m);

}  // namespace lfss
