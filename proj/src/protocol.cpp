#include "lfss/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "lfss/losses.hpp"
#include "lfss/rng.hpp"

namespace lfss {

Dataset Dataset::from_dir(const std::filesystem::path& dir, std::string split_tag) {
  namespace fs = std::filesystem;
  const fs::path scans = dir / "scans";
  const fs::path labels = dir / "labels";
  if (!fs::is_directory(scans)) throw std::runtime_error("dataset: missing directory " + scans.string());
  Dataset ds;
  ds.split = std::move(split_tag);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(scans)) {
    if (entry.path().extension() == ".bin") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& scan : files) {
    Frame f;
    f.scan = scan;
    f.labels = labels / (scan.stem().string() + ".label");
    f.id = scan.stem().string();
    if (!fs::exists(f.labels)) throw std::runtime_error("dataset: no label file for " + scan.string());
    ds.frames.push_back(std::move(f));
  }
  if (ds.frames.empty()) throw std::runtime_error("dataset: no scans found under " + scans.string());
  return ds;
}

LoadedFrame load_frame(const Frame& frame, const Taxonomy& tax) {
  LoadedFrame out;
  out.cloud = read_scan(frame.scan);
  const auto raw = read_labels(frame.labels, out.cloud.size());
  out.labels = tax.classes_from_raw(raw);
  return out;
}

std::vector<std::size_t> ShotSample::all_frames() const {
  std::set<std::size_t> unique;
  for (const auto& [cls, frames] : frames_per_class) unique.insert(frames.begin(), frames.end());
  return {unique.begin(), unique.end()};
}

nlohmann::json ShotSample::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["requested"] = requested;
  nlohmann::json per_class;
  for (const auto& [cls, frames] : frames_per_class) per_class[std::to_string(cls)] = frames;
  j["frames_per_class"] = per_class;
  j["warnings"] = warnings;
  return j;
}

ShotSample ShotSample::from_json(const nlohmann::json& j) {
  ShotSample s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.requested = j.at("requested").get<int>();
  for (const auto& [key, value] : j.at("frames_per_class").items()) {
    s.frames_per_class[static_cast<ClassId>(std::stol(key))] = value.get<std::vector<std::size_t>>();
  }
  s.warnings = j.at("warnings").get<std::vector<std::string>>();
  return s;
}

ShotSample sample_shots(const Dataset& dataset, const Taxonomy& tax, int n, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("sample_shots: n must be >= 0");
  ShotSample sample;
  sample.seed = seed;
  sample.requested = n;

  // classes present per frame, read once
  std::vector<std::set<ClassId>> present(dataset.frames.size());
  for (std::size_t i = 0; i < dataset.frames.size(); ++i) {
    const LoadedFrame f = load_frame(dataset.frames[i], tax);
    present[i].insert(f.labels.begin(), f.labels.end());
  }

  for (ClassId cls : tax.novel) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < dataset.frames.size(); ++i) {
      if (present[i].count(cls)) eligible.push_back(i);
    }
    std::vector<std::size_t> drawn;
    if (n >= static_cast<int>(eligible.size())) {
      drawn = eligible;
      if (n > static_cast<int>(eligible.size())) {
        sample.warnings.push_back("class " + std::to_string(cls) + " (" + tax.name(cls) + "): requested " +
                                  std::to_string(n) + " shots but only " + std::to_string(eligible.size()) +
                                  " frames contain it; using all of them");
      }
    } else {
      Rng rng(mix_seed(seed, static_cast<std::uint64_t>(cls)));
      // partial Fisher-Yates, first n entries
      for (int i = 0; i < n; ++i) {
        const std::size_t j = static_cast<std::size_t>(i) +
                              static_cast<std::size_t>(rng.below(eligible.size() - static_cast<std::size_t>(i)));
        std::swap(eligible[static_cast<std::size_t>(i)], eligible[j]);
      }
      drawn.assign(eligible.begin(), eligible.begin() + n);
      std::sort(drawn.begin(), drawn.end());
    }
    sample.frames_per_class[cls] = std::move(drawn);
  }
  return sample;
}

namespace {

/// Pixel-label counts for inverse-frequency weights, over the frames and
/// remap the stage actually uses.
std::map<ClassId, std::int64_t> stage_pixel_counts(const Dataset& dataset,
                                                   const std::vector<std::size_t>& frame_indices,
                                                   const ToolConfig& config, bool base_stage) {
  std::map<ClassId, std::int64_t> counts;
  const auto stage_classes =
      base_stage ? config.taxonomy.base_stage_classes() : config.taxonomy.novel_stage_classes();
  for (ClassId id : stage_classes) counts[id] = 0;
  for (std::size_t idx : frame_indices) {
    const LoadedFrame f = load_frame(dataset.frames[idx], config.taxonomy);
    const auto remapped = base_stage ? remap_for_base(f.labels, config.taxonomy)
                                     : remap_for_novel(f.labels, config.taxonomy);
    const RangeImage img = project(f.cloud, config.projection);
    for (ClassId id : img.gather_labels(remapped)) {
      if (id != kIgnore) counts[id] += 1;
    }
  }
  return counts;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t stage_seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(stage_seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

[[noreturn]] void abort_non_finite(const std::string& stage, int epoch, const std::string& frame_id) {
  throw std::runtime_error(stage + ": non-finite loss at epoch " + std::to_string(epoch) + ", frame " +
                           frame_id);
}

}  // namespace

TrainResult train_base(const Dataset& dataset, const ToolConfig& config) {
  if (dataset.frames.empty()) throw std::invalid_argument("train_base: empty dataset");
  const Taxonomy& tax = config.taxonomy;

  std::vector<std::size_t> all(dataset.frames.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const ClassWeights alpha =
      class_weights(stage_pixel_counts(dataset, all, config, /*base_stage=*/true), config.frequency_floor);

  TrainResult res;
  const auto heads = tax.base_stage_classes();
  res.params = init_model(mix_seed(config.train_base.seed, 0xb), config.model, heads);
  OptimizerState state = OptimizerState::create(res.params, config.optimizer.learning_rate,
                                                config.optimizer.momentum, config.optimizer.lr_decay,
                                                config.optimizer.decay_mode);

  for (int epoch = 0; epoch < config.train_base.epochs; ++epoch) {
    Scalar epoch_loss = 0;
    ParamGrads batch = ParamGrads::zero(res.params);
    for (std::size_t idx : epoch_order(dataset.frames.size(), config.train_base.seed, epoch)) {
      const Frame& frame = dataset.frames[idx];
      const LoadedFrame f = load_frame(frame, tax);
      const auto labels = remap_for_base(f.labels, tax);
      const RangeImage img = project(f.cloud, config.projection);
      const auto pixel_labels = img.gather_labels(labels);
      const ProbMap probs = softmax(forward(res.params, img));
      const LossResult loss = loss_base(probs, pixel_labels, alpha);
      if (!std::isfinite(loss.value)) abort_non_finite("train_base", epoch, frame.id);
      epoch_loss += loss.value;
      accumulate_gradients(res.params, img, loss.grad, FreezeMode::kNone, batch);
      if (batch.frames >= config.optimizer.batch_frames) {
        apply_step(res.params, state, batch, FreezeMode::kNone);
        batch = ParamGrads::zero(res.params);
      }
    }
    if (batch.frames > 0) apply_step(res.params, state, batch, FreezeMode::kNone);
    res.epoch_loss.push_back(epoch_loss / static_cast<Scalar>(dataset.frames.size()));
    state.end_epoch();
  }
  return res;
}

TrainResult finetune(const ModelParams& base, const Dataset& dataset, const ShotSample& shots,
                     const ToolConfig& config) {
  if (base.version != ModelVersion::kBase) {
    throw std::invalid_argument("finetune: expected a base-stage checkpoint");
  }
  const Taxonomy& tax = config.taxonomy;
  const std::vector<std::size_t> frames = shots.all_frames();
  if (frames.empty()) throw std::invalid_argument("finetune: the shot sample holds no frames");
  for (std::size_t idx : frames) {
    if (idx >= dataset.frames.size()) {
      throw std::invalid_argument("finetune: shot frame index " + std::to_string(idx) +
                                  " is outside the dataset");
    }
  }

  const ClassWeights alpha = class_weights(
      stage_pixel_counts(dataset, frames, config, /*base_stage=*/false), config.frequency_floor);

  TrainResult res;
  res.params = extend_heads(base, tax.novel, mix_seed(config.finetune.seed, 0xf));
  OptimizerState state = OptimizerState::create(res.params, config.optimizer.learning_rate,
                                                config.optimizer.momentum, config.optimizer.lr_decay,
                                                config.optimizer.decay_mode);

  for (int epoch = 0; epoch < config.finetune.epochs; ++epoch) {
    Scalar epoch_loss = 0;
    std::vector<std::size_t> order = frames;
    {
      Rng rng(mix_seed(config.finetune.seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order);
    }
    ParamGrads batch = ParamGrads::zero(res.params);
    for (std::size_t idx : order) {
      const Frame& frame = dataset.frames[idx];
      const LoadedFrame f = load_frame(frame, tax);
      const auto labels = remap_for_novel(f.labels, tax);
      const RangeImage img = project(f.cloud, config.projection);
      const auto pixel_labels = img.gather_labels(labels);
      const ProbMap student = softmax(forward(res.params, img));
      const ProbMap teacher = softmax(forward(base, img));  // frozen, recomputed per frame
      const LossResult loss =
          loss_finetune(student, teacher, pixel_labels, alpha, tax.background, config.finetune.loss);
      if (!std::isfinite(loss.value)) abort_non_finite("finetune", epoch, frame.id);
      epoch_loss += loss.value;
      accumulate_gradients(res.params, img, loss.grad, config.finetune.freeze, batch);
      if (batch.frames >= config.optimizer.batch_frames) {
        apply_step(res.params, state, batch, config.finetune.freeze);
        batch = ParamGrads::zero(res.params);
      }
    }
    if (batch.frames > 0) apply_step(res.params, state, batch, config.finetune.freeze);
    res.epoch_loss.push_back(epoch_loss / static_cast<Scalar>(frames.size()));
    state.end_epoch();
  }
  return res;
}

std::vector<ClassId> predict(const ModelParams& params, const PointCloud& cloud,
                             const ProjectionConfig& projection) {
  const RangeImage img = project(cloud, projection);
  const LogitsMap logits = forward(params, img);
  LabelGrid grid = LabelGrid::Constant(img.height(), img.width(), kIgnore);
  Index row = 0;
  for (int v = 0; v < img.height(); ++v) {
    for (int u = 0; u < img.width(); ++u) {
      if (!img.valid(v, u)) continue;
      Index best = 0;
      for (Index c = 1; c < logits.cols(); ++c) {
        if (logits.values(row, c) > logits.values(row, best)) best = c;  // ties keep the lowest index
      }
      grid(v, u) = logits.class_order[static_cast<std::size_t>(best)];
      ++row;
    }
  }
  return backproject(grid, img, cloud);
}

ConfusionMatrix evaluate(const ModelParams& params, const Dataset& dataset, const ToolConfig& config) {
  ConfusionMatrix conf = ConfusionMatrix::zero(config.taxonomy.all_classes());
  for (const Frame& frame : dataset.frames) {
    const LoadedFrame f = load_frame(frame, config.taxonomy);
    const auto preds = predict(params, f.cloud, config.projection);
    conf.accumulate(preds, f.labels);
  }
  return conf;
}

}  // namespace lfss
