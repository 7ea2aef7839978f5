#pragma once

#include <span>
#include <vector>

#include "lfss/taxonomy.hpp"
#include "lfss/types.hpp"

namespace lfss {

/// Pre-softmax scores: one row per element, one column per classification
/// head, columns identified by class id.
struct LogitsMap {
  Matrix values;
  std::vector<ClassId> class_order;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
  /// Column of a class id; throws if the class has no column.
  Index col_of(ClassId id) const;
  bool has_class(ClassId id) const;
};

/// Row-stochastic probabilities with the same column layout as LogitsMap.
struct ProbMap {
  Matrix values;
  std::vector<ClassId> class_order;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
  Index col_of(ClassId id) const;
  bool has_class(ClassId id) const;
};

/// Scalar loss plus its analytic gradient with respect to the pre-softmax
/// logits that produced the probability map.
struct LossResult {
  Scalar value = 0;
  Matrix grad;  // same shape as the logits
};

/// Row-wise softmax with max-subtraction.
ProbMap softmax(const LogitsMap& logits);

/// Weighted cross-entropy, averaged over all rows; rows labeled kIgnore
/// contribute zero value and zero gradient.
LossResult weighted_ce(const ProbMap& probs, std::span<const ClassId> labels, const ClassWeights& alpha);

/// Lovasz extension of the Jaccard loss of one class, evaluated at an error
/// vector with its ground-truth foreground indicator. Exposed separately so
/// the surrogate can be checked directly against the discrete Jaccard loss.
struct LovaszTerm {
  Scalar value = 0;
  Vector grad_errors;
};
LovaszTerm lovasz_extension(const Vector& errors, const Eigen::Array<bool, Eigen::Dynamic, 1>& foreground);

/// Lovasz-Softmax: mean over class_set of the Lovasz-extended Jaccard loss
/// of per-class errors m_i(k) = 1 - P^k(x_i) if y_i = k else P^k(x_i).
/// Classes absent from the ground truth still contribute (their term is the
/// largest predicted probability). Sorting ties break by ascending element
/// index.
LossResult lovasz_softmax(const ProbMap& probs, std::span<const ClassId> labels,
                          std::span<const ClassId> class_set);

/// How the background probability is assembled in the unbiased
/// cross-entropy: from the frozen base model's base-class mass (no gradient
/// flows into background rows) or from the current model's own background
/// plus base-class mass.
enum class BackgroundTerm { kFrozenBase, kCurrentModel };

/// Cross-entropy over {u} + C_n that replaces the background probability:
/// foreground rows score the student's own column, background rows score
/// the aggregate chosen by BackgroundTerm.
LossResult unbiased_ce(const ProbMap& student, const ProbMap& base, std::span<const ClassId> labels,
                       const ClassWeights& alpha, ClassId background, BackgroundTerm term);

enum class KdMode { kOff, kOriginal, kUnbiased };

/// Knowledge distillation against a frozen teacher over {u} + C_b. The
/// unbiased mode scores the teacher's background column against the sum of
/// the student's novel-class columns; the original mode scores it against
/// the student's own background column.
LossResult kd_loss(const ProbMap& student, const ProbMap& teacher, ClassId background, KdMode mode);

/// Base-stage loss: weighted cross-entropy plus Lovasz-Softmax over the full
/// head set of the probability map.
LossResult loss_base(const ProbMap& probs, std::span<const ClassId> labels, const ClassWeights& alpha);

enum class CeMode { kOff, kOriginal, kUnbiased };

struct FinetuneLossConfig {
  CeMode ce = CeMode::kUnbiased;
  KdMode kd = KdMode::kUnbiased;
  bool lovasz = true;
  BackgroundTerm background_term = BackgroundTerm::kFrozenBase;
};

/// Fine-tune-stage loss: sum of the enabled cross-entropy, distillation and
/// Lovasz terms. The Lovasz class set is {u} + C_n, with C_n taken as the
/// student columns absent from the base map. Throws if no term is enabled.
LossResult loss_finetune(const ProbMap& student, const ProbMap& base, std::span<const ClassId> labels,
                         const ClassWeights& alpha, ClassId background, const FinetuneLossConfig& config);

}  // namespace lfss
