#include "lfss/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "lfss/geometry.hpp"
#include "lfss/losses.hpp"
#include "lfss/model.hpp"
#include "lfss/rng.hpp"

namespace lfss {

namespace {

constexpr Scalar kStep = 1e-5;
constexpr Scalar kTolerance = 1e-4;

Scalar rel_error(Scalar analytic, Scalar numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), Scalar(1e-4)});
}

struct Instance {
  Matrix student_logits;
  std::vector<ClassId> student_order;
  Matrix teacher_logits;
  std::vector<ClassId> teacher_order;
  std::vector<ClassId> labels;  // over {u} + C_n (+ ignore)
  ClassWeights alpha;
  ClassId background = 0;
};

ProbMap probs_of(const Matrix& logits, const std::vector<ClassId>& order) {
  return softmax(LogitsMap{logits, order});
}

/// Smallest gap between the sorted per-class Lovasz errors; tie-prone
/// instances are rejected because sorting makes the surrogate only
/// piecewise differentiable.
Scalar min_error_gap(const ProbMap& probs, const std::vector<ClassId>& labels,
                     const std::vector<ClassId>& class_set) {
  Scalar min_gap = std::numeric_limits<Scalar>::infinity();
  for (ClassId k : class_set) {
    const Index c = probs.col_of(k);
    std::vector<Scalar> errors;
    for (Index i = 0; i < probs.rows(); ++i) {
      if (labels[static_cast<std::size_t>(i)] == kIgnore) continue;
      const bool fg = labels[static_cast<std::size_t>(i)] == k;
      errors.push_back(fg ? 1 - probs.values(i, c) : probs.values(i, c));
    }
    std::sort(errors.begin(), errors.end());
    for (std::size_t i = 1; i < errors.size(); ++i) {
      min_gap = std::min(min_gap, errors[i] - errors[i - 1]);
    }
  }
  return min_gap;
}

Instance make_instance(Rng& rng, bool finetune_shape) {
  Instance inst;
  inst.background = 0;
  if (finetune_shape) {
    inst.student_order = {0, 1, 2, 3, 4};  // u, two base, two novel
    inst.teacher_order = {0, 1, 2};
  } else {
    const int k = 2 + static_cast<int>(rng.below(5));  // 2..6 heads
    for (int c = 0; c < k; ++c) inst.student_order.push_back(c);
    inst.teacher_order = inst.student_order;
  }
  const Index m = 1 + static_cast<Index>(rng.below(16));
  inst.student_logits.resize(m, static_cast<Index>(inst.student_order.size()));
  for (Index i = 0; i < m; ++i) {
    for (Index c = 0; c < inst.student_logits.cols(); ++c) {
      inst.student_logits(i, c) = rng.uniform(-3.0, 3.0);
    }
  }
  inst.teacher_logits.resize(m, static_cast<Index>(inst.teacher_order.size()));
  for (Index i = 0; i < m; ++i) {
    for (Index c = 0; c < inst.teacher_logits.cols(); ++c) {
      inst.teacher_logits(i, c) = rng.uniform(-3.0, 3.0);
    }
  }
  const std::vector<ClassId> label_space =
      finetune_shape ? std::vector<ClassId>{0, 3, 4} : inst.student_order;
  for (Index i = 0; i < m; ++i) {
    if (rng.uniform() < 0.1) {
      inst.labels.push_back(kIgnore);
    } else {
      inst.labels.push_back(label_space[rng.below(label_space.size())]);
    }
  }
  for (ClassId id : inst.student_order) inst.alpha.weights[id] = rng.uniform(0.5, 3.0);
  return inst;
}

using LossFn = std::function<LossResult(const Matrix& student_logits, const Instance&)>;

/// Needs the instance to be differentiable at the probe point (tie-free
/// Lovasz errors when the loss sorts).
void check_case(GradCheckReport& report, const std::string& name, Rng& rng, int instances,
                bool finetune_shape, bool uses_lovasz, const std::vector<ClassId>& lovasz_set,
                const LossFn& loss) {
  GradCheckCase result;
  result.name = name;
  for (int it = 0; it < instances; ++it) {
    Instance inst;
    for (int tries = 0;; ++tries) {
      inst = make_instance(rng, finetune_shape);
      if (!uses_lovasz) break;
      const auto set = lovasz_set.empty() ? inst.student_order : lovasz_set;
      if (min_error_gap(probs_of(inst.student_logits, inst.student_order), inst.labels, set) > 1e-3) break;
      if (tries > 200) break;  // accept the risk rather than loop forever
    }
    const LossResult res = loss(inst.student_logits, inst);
    Matrix numeric(res.grad.rows(), res.grad.cols());
    for (Index i = 0; i < numeric.rows(); ++i) {
      for (Index c = 0; c < numeric.cols(); ++c) {
        Matrix plus = inst.student_logits, minus = inst.student_logits;
        plus(i, c) += kStep;
        minus(i, c) -= kStep;
        numeric(i, c) = (loss(plus, inst).value - loss(minus, inst).value) / (2 * kStep);
      }
    }
    ++result.instances;
    Scalar worst = 0;
    for (Index i = 0; i < numeric.rows(); ++i) {
      for (Index c = 0; c < numeric.cols(); ++c) {
        worst = std::max(worst, rel_error(res.grad(i, c), numeric(i, c)));
      }
    }
    result.worst_error = std::max(result.worst_error, worst);
    if (worst >= kTolerance) ++result.failures;
  }
  report.cases.push_back(std::move(result));
}

/// Recovers per-parameter SGD gradients from a single unit-lr, zero-momentum
/// step and compares them against central differences of the loss.
void check_model_case(GradCheckReport& report, const std::string& name, std::uint64_t seed,
                      bool finetune_config, const FinetuneLossConfig& flags) {
  GradCheckCase result;
  result.name = name;

  Rng rng(mix_seed(seed, 0x30de1));
  // small random cloud on a 4x4 grid
  ProjectionConfig proj;
  proj.width = 4;
  proj.height = 4;
  proj.fov_up = 15 * ProjectionConfig::kDegree;
  proj.fov_down = 15 * ProjectionConfig::kDegree;
  PointCloud cloud;
  cloud.points.resize(24, 4);
  for (Index i = 0; i < cloud.points.rows(); ++i) {
    const Scalar yaw = rng.uniform(-3.1, 3.1);
    const Scalar pitch = rng.uniform(-0.24, 0.24);
    const Scalar r = rng.uniform(2.0, 12.0);
    cloud.points(i, 0) = r * std::cos(pitch) * std::cos(yaw);
    cloud.points(i, 1) = r * std::cos(pitch) * std::sin(yaw);
    cloud.points(i, 2) = r * std::sin(pitch);
    cloud.points(i, 3) = rng.uniform(0.0, 1.0);
  }
  const RangeImage img = project(cloud, proj);

  ModelArch arch;
  arch.hidden_width = 6;
  arch.channel_mean << 0, 0, 0, 0.5, 7;
  arch.channel_std << 5, 5, 2, 0.3, 4;

  const std::vector<ClassId> base_classes = {0, 1, 2};
  const std::vector<ClassId> novel_classes = {3, 4};
  ModelParams params = init_model(mix_seed(seed, 0xa), arch, base_classes);
  ModelParams teacher = params;
  if (finetune_config) params = extend_heads(params, novel_classes, mix_seed(seed, 0xb));

  std::vector<ClassId> pixel_labels;
  const std::vector<ClassId> label_space = finetune_config ? std::vector<ClassId>{0, 3, 4} : base_classes;
  for (Index i = 0; i < img.valid_count; ++i) {
    pixel_labels.push_back(label_space[rng.below(label_space.size())]);
  }
  ClassWeights alpha;
  for (ClassId id : {0, 1, 2, 3, 4}) alpha.weights[id] = rng.uniform(0.5, 2.0);

  const auto loss_of = [&](const ModelParams& p) -> LossResult {
    const ProbMap probs = softmax(forward(p, img));
    if (!finetune_config) return loss_base(probs, pixel_labels, alpha);
    const ProbMap teacher_probs = softmax(forward(teacher, img));
    return loss_finetune(probs, teacher_probs, pixel_labels, alpha, 0, flags);
  };

  // analytic parameter gradients via one lr=1, mu=0 step
  ModelParams stepped = params;
  OptimizerState state = OptimizerState::create(stepped, 1.0, 0.0, 0.0, DecayMode::kMultiplicative);
  backward_and_step(stepped, state, img, loss_of(params).grad, FreezeMode::kNone);

  std::vector<Scalar*> entries;
  std::vector<Scalar> analytic;
  auto collect = [&](ModelParams& p) {
    entries.clear();
    for (Index r = 0; r < p.w_hidden.rows(); ++r) {
      for (Index c = 0; c < p.w_hidden.cols(); ++c) entries.push_back(&p.w_hidden(r, c));
    }
    for (Index i = 0; i < p.b_hidden.size(); ++i) entries.push_back(&p.b_hidden[i]);
    for (Head& h : p.heads) {
      for (Index i = 0; i < h.w.size(); ++i) entries.push_back(&h.w[i]);
      entries.push_back(&h.b);
    }
  };
  collect(stepped);
  std::vector<Scalar> stepped_values;
  for (Scalar* e : entries) stepped_values.push_back(*e);
  collect(params);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    analytic.push_back(*entries[i] - stepped_values[i]);  // p - p' = g at lr 1
  }

  ++result.instances;
  Scalar worst = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Scalar saved = *entries[i];
    *entries[i] = saved + kStep;
    const Scalar plus = loss_of(params).value;
    *entries[i] = saved - kStep;
    const Scalar minus = loss_of(params).value;
    *entries[i] = saved;
    const Scalar numeric = (plus - minus) / (2 * kStep);
    worst = std::max(worst, rel_error(analytic[i], numeric));
  }
  result.worst_error = worst;
  if (worst >= kTolerance) ++result.failures;
  report.cases.push_back(std::move(result));
}

}  // namespace

bool GradCheckReport::passed() const {
  for (const GradCheckCase& c : cases) {
    if (c.failures > 0) return false;
  }
  return true;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const GradCheckCase& c : cases) {
    os << (c.failures == 0 ? "ok   " : "FAIL ") << c.name << ": " << c.instances << " instances, worst "
       << c.worst_error << "\n";
  }
  os << (passed() ? "all gradient checks passed" : "gradient checks FAILED") << " (tolerance " << tolerance
     << ")\n";
  return os.str();
}

GradCheckReport run_gradient_checks(std::uint64_t seed, int instances_per_case) {
  GradCheckReport report;
  report.tolerance = kTolerance;
  Rng rng(mix_seed(seed, 0x96adc));

  check_case(report, "weighted_ce", rng, instances_per_case, false, false, {},
             [](const Matrix& z, const Instance& inst) {
               return weighted_ce(probs_of(z, inst.student_order), inst.labels, inst.alpha);
             });
  check_case(report, "lovasz_softmax", rng, instances_per_case, false, true, {},
             [](const Matrix& z, const Instance& inst) {
               return lovasz_softmax(probs_of(z, inst.student_order), inst.labels, inst.student_order);
             });
  for (const auto term : {BackgroundTerm::kFrozenBase, BackgroundTerm::kCurrentModel}) {
    const std::string name = std::string("unbiased_ce/") +
                             (term == BackgroundTerm::kFrozenBase ? "frozen" : "current");
    check_case(report, name, rng, instances_per_case, true, false, {},
               [term](const Matrix& z, const Instance& inst) {
                 return unbiased_ce(probs_of(z, inst.student_order),
                                    probs_of(inst.teacher_logits, inst.teacher_order), inst.labels,
                                    inst.alpha, inst.background, term);
               });
  }
  for (const auto mode : {KdMode::kOriginal, KdMode::kUnbiased}) {
    const std::string name = std::string("kd/") + (mode == KdMode::kOriginal ? "original" : "unbiased");
    check_case(report, name, rng, instances_per_case, true, false, {},
               [mode](const Matrix& z, const Instance& inst) {
                 return kd_loss(probs_of(z, inst.student_order),
                                probs_of(inst.teacher_logits, inst.teacher_order), inst.background, mode);
               });
  }
  check_case(report, "loss_base", rng, instances_per_case, false, true, {},
             [](const Matrix& z, const Instance& inst) {
               return loss_base(probs_of(z, inst.student_order), inst.labels, inst.alpha);
             });

  const std::vector<ClassId> finetune_lovasz_set = {0, 3, 4};
  for (const CeMode ce : {CeMode::kOff, CeMode::kOriginal, CeMode::kUnbiased}) {
    for (const BackgroundTerm term : {BackgroundTerm::kFrozenBase, BackgroundTerm::kCurrentModel}) {
      if (ce != CeMode::kUnbiased && term == BackgroundTerm::kCurrentModel) continue;
      for (const KdMode kd : {KdMode::kOff, KdMode::kOriginal, KdMode::kUnbiased}) {
        for (const bool lovasz : {false, true}) {
          if (ce == CeMode::kOff && kd == KdMode::kOff && !lovasz) continue;
          FinetuneLossConfig flags;
          flags.ce = ce;
          flags.kd = kd;
          flags.lovasz = lovasz;
          flags.background_term = term;
          std::ostringstream name;
          name << "loss_finetune/ce=" << static_cast<int>(ce)
               << (ce == CeMode::kUnbiased ? (term == BackgroundTerm::kFrozenBase ? "f" : "c") : "")
               << ",kd=" << static_cast<int>(kd) << ",ls=" << lovasz;
          check_case(report, name.str(), rng, instances_per_case, true, lovasz, finetune_lovasz_set,
                     [flags](const Matrix& z, const Instance& inst) {
                       return loss_finetune(probs_of(z, inst.student_order),
                                            probs_of(inst.teacher_logits, inst.teacher_order), inst.labels,
                                            inst.alpha, inst.background, flags);
                     });
        }
      }
    }
  }

  check_model_case(report, "model/loss_base", mix_seed(seed, 1), false, {});
  FinetuneLossConfig default_flags;
  check_model_case(report, "model/loss_finetune_default", mix_seed(seed, 2), true, default_flags);
  FinetuneLossConfig lwf_flags;
  lwf_flags.ce = CeMode::kOriginal;
  lwf_flags.kd = KdMode::kOriginal;
  lwf_flags.lovasz = true;
  check_model_case(report, "model/loss_finetune_original", mix_seed(seed, 3), true, lwf_flags);

  return report;
}

}  // namespace lfss
