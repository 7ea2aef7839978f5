#include "lfss/model.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "lfss/rng.hpp"

namespace lfss {

void ModelArch::validate() const {
  if (input_channels != 5) {
    throw std::invalid_argument("model: input_channels must be 5 (got " + std::to_string(input_channels) + ")");
  }
  if (hidden_width < 1) throw std::invalid_argument("model: hidden_width must be >= 1");
  if ((channel_std.array() <= 0).any()) throw std::invalid_argument("model: channel_std entries must be > 0");
}

std::vector<ClassId> ModelParams::head_order() const {
  std::vector<ClassId> out;
  out.reserve(heads.size());
  for (const Head& h : heads) out.push_back(h.class_id);
  return out;
}

Index ModelParams::head_index(ClassId id) const {
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (heads[i].class_id == id) return static_cast<Index>(i);
  }
  throw std::runtime_error("model has no head for class " + std::to_string(id));
}

OptimizerState OptimizerState::create(const ModelParams& params, Scalar lr, Scalar momentum, Scalar lr_decay,
                                      DecayMode mode) {
  if (lr < 0) throw std::invalid_argument("optimizer: learning rate must be >= 0");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("optimizer: momentum must be in [0, 1)");
  OptimizerState s;
  s.learning_rate = lr;
  s.momentum = momentum;
  s.lr_decay = lr_decay;
  s.decay_mode = mode;
  s.v_w_hidden = Matrix::Zero(params.w_hidden.rows(), params.w_hidden.cols());
  s.v_b_hidden = Vector::Zero(params.b_hidden.size());
  s.v_heads.reserve(params.heads.size());
  for (const Head& h : params.heads) {
    s.v_heads.push_back({h.class_id, Vector::Zero(h.w.size()), 0.0});
  }
  return s;
}

void OptimizerState::end_epoch() {
  if (decay_mode == DecayMode::kMultiplicative) {
    learning_rate *= (Scalar(1) - lr_decay);
  } else {
    learning_rate = std::max(learning_rate - lr_decay, Scalar(0));
  }
}

namespace {

constexpr Scalar kNovelHeadScale = 0.01;

Vector seeded_uniform(Rng& rng, Index n, Scalar scale) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(-scale, scale);
  return v;
}

}  // namespace

ModelParams init_model(std::uint64_t seed, const ModelArch& arch, std::span<const ClassId> class_ids) {
  arch.validate();
  if (class_ids.empty()) throw std::invalid_argument("init_model: class list is empty");
  std::set<ClassId> unique(class_ids.begin(), class_ids.end());
  if (unique.size() != class_ids.size()) throw std::invalid_argument("init_model: duplicate class id");

  ModelParams p;
  p.arch = arch;
  Rng rng(mix_seed(seed, 0x1717));
  const int f = arch.feature_count();
  const Scalar w_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(f));
  p.w_hidden.resize(arch.hidden_width, f);
  for (Index r = 0; r < p.w_hidden.rows(); ++r) {
    for (Index c = 0; c < p.w_hidden.cols(); ++c) p.w_hidden(r, c) = rng.uniform(-w_scale, w_scale);
  }
  p.b_hidden = Vector::Zero(arch.hidden_width);
  const Scalar h_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(arch.hidden_width));
  for (ClassId id : class_ids) {
    p.heads.push_back({id, seeded_uniform(rng, arch.hidden_width, h_scale), 0.0});
  }
  p.base_head_count = p.heads.size();
  p.version = ModelVersion::kBase;
  return p;
}

Matrix pixel_features(const RangeImage& image, const ModelArch& arch) {
  arch.validate();
  if (static_cast<int>(image.channels.size()) != arch.input_channels) {
    throw std::invalid_argument("pixel_features: image has " + std::to_string(image.channels.size()) +
                                " channels, arch expects " + std::to_string(arch.input_channels));
  }
  const int h = image.height(), w = image.width();
  std::array<Matrix, 5> norm;
  for (int c = 0; c < 5; ++c) {
    norm[c] = Matrix::Zero(h, w);
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        if (image.valid(v, u)) {
          norm[c](v, u) = (image.channels[c](v, u) - arch.channel_mean[c]) / arch.channel_std[c];
        }
      }
    }
  }

  const int f = arch.feature_count();
  Matrix features(image.valid_count, f);
  Index row = 0;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (!image.valid(v, u)) continue;
      for (int c = 0; c < 5; ++c) features(row, c) = norm[c](v, u);
      if (arch.neighborhood_features) {
        // mean over the valid in-bounds 3x3 window, center included
        int count = 0;
        std::array<Scalar, 5> acc{};
        for (int dv = -1; dv <= 1; ++dv) {
          for (int du = -1; du <= 1; ++du) {
            const int nv = v + dv, nu = u + du;
            if (nv < 0 || nv >= h || nu < 0 || nu >= w || !image.valid(nv, nu)) continue;
            ++count;
            for (int c = 0; c < 5; ++c) acc[static_cast<std::size_t>(c)] += norm[c](nv, nu);
          }
        }
        for (int c = 0; c < 5; ++c) {
          features(row, 5 + c) = acc[static_cast<std::size_t>(c)] / static_cast<Scalar>(count);
        }
      }
      ++row;
    }
  }
  return features;
}

namespace {

struct ForwardPass {
  Matrix features;  // M x F
  Matrix hidden;    // M x H, tanh activations
  Matrix logits;    // M x K
};

ForwardPass forward_pass(const ModelParams& params, const RangeImage& image) {
  ForwardPass fp;
  fp.features = pixel_features(image, params.arch);
  fp.hidden = ((fp.features * params.w_hidden.transpose()).rowwise() + params.b_hidden.transpose())
                  .array()
                  .tanh()
                  .matrix();
  fp.logits.resize(fp.hidden.rows(), static_cast<Index>(params.heads.size()));
  for (std::size_t k = 0; k < params.heads.size(); ++k) {
    fp.logits.col(static_cast<Index>(k)) =
        fp.hidden * params.heads[k].w + Vector::Constant(fp.hidden.rows(), params.heads[k].b);
  }
  return fp;
}

}  // namespace

LogitsMap forward(const ModelParams& params, const RangeImage& image) {
  LogitsMap out;
  out.values = forward_pass(params, image).logits;
  out.class_order = params.head_order();
  return out;
}

ModelParams extend_heads(const ModelParams& base, std::span<const ClassId> novel_ids, std::uint64_t seed) {
  if (base.version != ModelVersion::kBase) {
    throw std::invalid_argument("extend_heads: model is already extended");
  }
  if (novel_ids.empty()) throw std::invalid_argument("extend_heads: need at least one novel class");
  ModelParams out = base;
  std::set<ClassId> existing;
  for (const Head& h : out.heads) existing.insert(h.class_id);
  Rng rng(mix_seed(seed, 0x4e58));
  for (ClassId id : novel_ids) {
    if (!existing.insert(id).second) {
      throw std::invalid_argument("extend_heads: duplicate class id " + std::to_string(id));
    }
    out.heads.push_back({id, seeded_uniform(rng, out.arch.hidden_width, kNovelHeadScale), 0.0});
  }
  out.version = ModelVersion::kExtended;
  return out;
}

ParamGrads ParamGrads::zero(const ModelParams& params) {
  ParamGrads g;
  g.w_hidden = Matrix::Zero(params.w_hidden.rows(), params.w_hidden.cols());
  g.b_hidden = Vector::Zero(params.b_hidden.size());
  g.heads.reserve(params.heads.size());
  for (const Head& h : params.heads) g.heads.push_back({h.class_id, Vector::Zero(h.w.size()), 0.0});
  return g;
}

void accumulate_gradients(const ModelParams& params, const RangeImage& image, const Matrix& logit_grad,
                          FreezeMode freeze, ParamGrads& grads) {
  const ForwardPass fp = forward_pass(params, image);
  if (logit_grad.rows() != fp.logits.rows() || logit_grad.cols() != fp.logits.cols()) {
    throw std::invalid_argument("backward: gradient is " + std::to_string(logit_grad.rows()) + "x" +
                                std::to_string(logit_grad.cols()) + ", logits are " +
                                std::to_string(fp.logits.rows()) + "x" + std::to_string(fp.logits.cols()));
  }
  if (!logit_grad.allFinite()) {
    throw std::runtime_error("backward: non-finite loss gradient; aborting step");
  }
  if (grads.heads.size() != params.heads.size()) {
    throw std::invalid_argument("backward: gradient accumulator does not match the model's head count");
  }

  const std::size_t first_trainable_head =
      freeze == FreezeMode::kBackboneAndBaseHeads ? params.base_head_count : 0;
  for (std::size_t k = first_trainable_head; k < params.heads.size(); ++k) {
    grads.heads[k].w += fp.hidden.transpose() * logit_grad.col(static_cast<Index>(k));
    grads.heads[k].b += logit_grad.col(static_cast<Index>(k)).sum();
  }

  if (freeze == FreezeMode::kNone) {
    // gradient flows to the backbone through every head, frozen or not
    Matrix head_w(static_cast<Index>(params.heads.size()), params.arch.hidden_width);
    for (std::size_t k = 0; k < params.heads.size(); ++k) {
      head_w.row(static_cast<Index>(k)) = params.heads[k].w.transpose();
    }
    const Matrix d_hidden = logit_grad * head_w;
    const Matrix d_pre = d_hidden.cwiseProduct(Matrix::Ones(fp.hidden.rows(), fp.hidden.cols()) -
                                               fp.hidden.cwiseProduct(fp.hidden));
    grads.w_hidden += d_pre.transpose() * fp.features;
    grads.b_hidden += d_pre.colwise().sum().transpose();
  }
  ++grads.frames;
}

void apply_step(ModelParams& params, OptimizerState& state, const ParamGrads& grads, FreezeMode freeze) {
  if (grads.frames < 1) throw std::invalid_argument("apply_step: no accumulated gradients");
  if (state.v_heads.size() != params.heads.size() || grads.heads.size() != params.heads.size()) {
    throw std::invalid_argument("apply_step: optimizer state does not match the model's head count");
  }
  const Scalar lr = state.learning_rate;
  const Scalar mu = state.momentum;
  const Scalar scale = Scalar(1) / static_cast<Scalar>(grads.frames);

  const std::size_t first_trainable_head =
      freeze == FreezeMode::kBackboneAndBaseHeads ? params.base_head_count : 0;
  for (std::size_t k = first_trainable_head; k < params.heads.size(); ++k) {
    Head& vel = state.v_heads[k];
    vel.w = mu * vel.w + scale * grads.heads[k].w;
    vel.b = mu * vel.b + scale * grads.heads[k].b;
    params.heads[k].w -= lr * vel.w;
    params.heads[k].b -= lr * vel.b;
  }

  if (freeze == FreezeMode::kNone) {
    state.v_w_hidden = mu * state.v_w_hidden + scale * grads.w_hidden;
    state.v_b_hidden = mu * state.v_b_hidden + scale * grads.b_hidden;
    params.w_hidden -= lr * state.v_w_hidden;
    params.b_hidden -= lr * state.v_b_hidden;
  }
}

void backward_and_step(ModelParams& params, OptimizerState& state, const RangeImage& image,
                       const Matrix& logit_grad, FreezeMode freeze) {
  ParamGrads grads = ParamGrads::zero(params);
  accumulate_gradients(params, image, logit_grad, freeze, grads);
  apply_step(params, state, grads, freeze);
}

namespace {

using nlohmann::json;

json vector_to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Vector vector_from_json(const json& a) {
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Index>(i)] = a[i].get<Scalar>();
  return v;
}

Matrix matrix_from_json(const json& rows) {
  const Index r = static_cast<Index>(rows.size());
  const Index c = r > 0 ? static_cast<Index>(rows[0].size()) : 0;
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i) {
    const json& row = rows[static_cast<std::size_t>(i)];
    if (static_cast<Index>(row.size()) != c) throw std::runtime_error("checkpoint: ragged matrix");
    for (Index j = 0; j < c; ++j) m(i, j) = row[static_cast<std::size_t>(j)].get<Scalar>();
  }
  return m;
}

constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     std::uint64_t taxonomy_fingerprint) {
  json j;
  j["format"] = "lfss-checkpoint";
  j["format_version"] = kCheckpointVersion;
  j["taxonomy_fingerprint"] = taxonomy_fingerprint;
  j["version"] = params.version == ModelVersion::kBase ? "base" : "extended";
  j["base_head_count"] = params.base_head_count;
  json arch;
  arch["input_channels"] = params.arch.input_channels;
  arch["neighborhood_features"] = params.arch.neighborhood_features;
  arch["hidden_width"] = params.arch.hidden_width;
  arch["channel_mean"] = vector_to_json(params.arch.channel_mean);
  arch["channel_std"] = vector_to_json(params.arch.channel_std);
  j["arch"] = arch;
  j["w_hidden"] = matrix_to_json(params.w_hidden);
  j["b_hidden"] = vector_to_json(params.b_hidden);
  json heads = json::array();
  for (const Head& h : params.heads) {
    heads.push_back({{"class", h.class_id}, {"w", vector_to_json(h.w)}, {"b", h.b}});
  }
  j["heads"] = heads;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("failed to write checkpoint: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_taxonomy_fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "lfss-checkpoint" || j.value("format_version", -1) != kCheckpointVersion) {
    throw std::runtime_error("unrecognized checkpoint format in " + path.string());
  }
  const auto fingerprint = j.at("taxonomy_fingerprint").get<std::uint64_t>();
  if (fingerprint != expected_taxonomy_fingerprint) {
    throw std::runtime_error("checkpoint " + path.string() +
                             " was trained under a different taxonomy (fingerprint mismatch)");
  }
  ModelParams p;
  const json& arch = j.at("arch");
  p.arch.input_channels = arch.at("input_channels").get<int>();
  p.arch.neighborhood_features = arch.at("neighborhood_features").get<bool>();
  p.arch.hidden_width = arch.at("hidden_width").get<int>();
  const Vector mean = vector_from_json(arch.at("channel_mean"));
  const Vector stddev = vector_from_json(arch.at("channel_std"));
  if (mean.size() != 5 || stddev.size() != 5) throw std::runtime_error("checkpoint: channel stats must have 5 entries");
  p.arch.channel_mean = mean;
  p.arch.channel_std = stddev;
  p.arch.validate();
  p.version = j.at("version").get<std::string>() == "base" ? ModelVersion::kBase : ModelVersion::kExtended;
  p.base_head_count = j.at("base_head_count").get<std::size_t>();
  p.w_hidden = matrix_from_json(j.at("w_hidden"));
  p.b_hidden = vector_from_json(j.at("b_hidden"));
  for (const json& h : j.at("heads")) {
    p.heads.push_back({h.at("class").get<ClassId>(), vector_from_json(h.at("w")), h.at("b").get<Scalar>()});
  }
  if (p.base_head_count > p.heads.size()) throw std::runtime_error("checkpoint: inconsistent head counts");
  return p;
}

}  // namespace lfss
