#include "lfss/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace lfss {

namespace {

constexpr Scalar kLogClamp = 1e-12;

Index find_col(const std::vector<ClassId>& order, ClassId id) {
  for (std::size_t c = 0; c < order.size(); ++c) {
    if (order[c] == id) return static_cast<Index>(c);
  }
  return -1;
}

Scalar clamped_log(Scalar p) { return std::log(std::max(p, kLogClamp)); }

/// Fixed (ascending) summation order so values are identical under element
/// permutation.
Scalar ordered_sum(std::vector<Scalar>& terms) {
  std::sort(terms.begin(), terms.end());
  return std::accumulate(terms.begin(), terms.end(), Scalar(0));
}

void check_labels(std::span<const ClassId> labels, Index rows, const char* where) {
  if (static_cast<Index>(labels.size()) != rows) {
    throw std::invalid_argument(std::string(where) + ": got " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(rows) + " rows");
  }
}

void check_aligned(const ProbMap& a, const ProbMap& b, const char* where) {
  if (a.rows() != b.rows()) {
    throw std::invalid_argument(std::string(where) + ": probability maps are misaligned (" +
                                std::to_string(a.rows()) + " vs " + std::to_string(b.rows()) + " rows)");
  }
}

/// d(loss)/d(logits) for one row, given d(loss)/d(probs) of that row and the
/// softmax probabilities: dz = p .* (dp - <dp, p>).
void chain_softmax_row(const RowVector& probs, const RowVector& dprobs, Matrix& grad, Index row) {
  const Scalar dot = dprobs.dot(probs);
  grad.row(row) = probs.cwiseProduct(dprobs - RowVector::Constant(probs.cols(), dot));
}

}  // namespace

Index LogitsMap::col_of(ClassId id) const {
  const Index c = find_col(class_order, id);
  if (c < 0) throw std::runtime_error("no logits column for class " + std::to_string(id));
  return c;
}

bool LogitsMap::has_class(ClassId id) const { return find_col(class_order, id) >= 0; }

Index ProbMap::col_of(ClassId id) const {
  const Index c = find_col(class_order, id);
  if (c < 0) throw std::runtime_error("no probability column for class " + std::to_string(id));
  return c;
}

bool ProbMap::has_class(ClassId id) const { return find_col(class_order, id) >= 0; }

ProbMap softmax(const LogitsMap& logits) {
  if (!logits.values.allFinite()) throw std::invalid_argument("softmax: logits must be finite");
  ProbMap out;
  out.class_order = logits.class_order;
  out.values.resize(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const Scalar m = logits.values.row(i).maxCoeff();
    RowVector e = (logits.values.row(i).array() - m).exp();
    out.values.row(i) = e / e.sum();
  }
  return out;
}

LossResult weighted_ce(const ProbMap& probs, std::span<const ClassId> labels, const ClassWeights& alpha) {
  check_labels(labels, probs.rows(), "weighted_ce");
  const Index m = probs.rows();
  LossResult res;
  res.grad = Matrix::Zero(m, probs.cols());
  if (m == 0) return res;
  const Scalar inv_m = Scalar(1) / static_cast<Scalar>(m);
  std::vector<Scalar> terms;
  terms.reserve(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    const ClassId y = labels[static_cast<std::size_t>(i)];
    if (y == kIgnore) continue;
    const Index c = probs.col_of(y);
    const Scalar a = alpha.at(y);
    terms.push_back(-a * clamped_log(probs.values(i, c)));
    res.grad.row(i) = (inv_m * a) * probs.values.row(i);
    res.grad(i, c) -= inv_m * a;
  }
  res.value = ordered_sum(terms) * inv_m;
  return res;
}

LovaszTerm lovasz_extension(const Vector& errors, const Eigen::Array<bool, Eigen::Dynamic, 1>& foreground) {
  if (errors.size() != foreground.size()) {
    throw std::invalid_argument("lovasz_extension: errors and foreground differ in length");
  }
  const Index n = errors.size();
  LovaszTerm term;
  term.grad_errors = Vector::Zero(n);
  if (n == 0) return term;

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (errors[a] != errors[b]) return errors[a] > errors[b];
    return a < b;  // deterministic tie order
  });

  const Scalar gts = static_cast<Scalar>(foreground.count());
  Scalar intersection = gts;
  Scalar uni = gts;
  Scalar prev_jaccard = 0;
  for (Index j = 0; j < n; ++j) {
    const Index i = order[static_cast<std::size_t>(j)];
    if (foreground[i]) {
      intersection -= 1;
    } else {
      uni += 1;
    }
    const Scalar jaccard = Scalar(1) - intersection / uni;  // uni >= 1 whenever n >= 1
    const Scalar g = jaccard - prev_jaccard;
    prev_jaccard = jaccard;
    term.value += errors[i] * g;
    term.grad_errors[i] = g;
  }
  return term;
}

LossResult lovasz_softmax(const ProbMap& probs, std::span<const ClassId> labels,
                          std::span<const ClassId> class_set) {
  check_labels(labels, probs.rows(), "lovasz_softmax");
  if (class_set.empty()) throw std::invalid_argument("lovasz_softmax: empty class set");

  // rows that participate (not ignore-labeled)
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(probs.rows()));
  for (Index i = 0; i < probs.rows(); ++i) {
    const ClassId y = labels[static_cast<std::size_t>(i)];
    if (y == kIgnore) continue;
    if (!probs.has_class(y)) throw std::runtime_error("lovasz_softmax: label class " + std::to_string(y) +
                                                      " has no probability column");
    rows.push_back(i);
  }

  LossResult res;
  res.grad = Matrix::Zero(probs.rows(), probs.cols());
  const Index n = static_cast<Index>(rows.size());
  const Scalar inv_k = Scalar(1) / static_cast<Scalar>(class_set.size());

  Matrix dprobs = Matrix::Zero(probs.rows(), probs.cols());
  for (ClassId k : class_set) {
    const Index c = probs.col_of(k);
    if (n == 0) continue;
    Vector errors(n);
    Eigen::Array<bool, Eigen::Dynamic, 1> fg(n);
    for (Index j = 0; j < n; ++j) {
      const Index i = rows[static_cast<std::size_t>(j)];
      const bool is_fg = labels[static_cast<std::size_t>(i)] == k;
      fg[j] = is_fg;
      errors[j] = is_fg ? Scalar(1) - probs.values(i, c) : probs.values(i, c);
    }
    const LovaszTerm term = lovasz_extension(errors, fg);
    res.value += inv_k * term.value;
    for (Index j = 0; j < n; ++j) {
      const Index i = rows[static_cast<std::size_t>(j)];
      dprobs(i, c) += inv_k * (fg[j] ? -term.grad_errors[j] : term.grad_errors[j]);
    }
  }
  for (Index i : rows) {
    chain_softmax_row(probs.values.row(i), dprobs.row(i), res.grad, i);
  }
  return res;
}

LossResult unbiased_ce(const ProbMap& student, const ProbMap& base, std::span<const ClassId> labels,
                       const ClassWeights& alpha, ClassId background, BackgroundTerm term) {
  check_aligned(student, base, "unbiased_ce");
  check_labels(labels, student.rows(), "unbiased_ce");
  const Index m = student.rows();
  LossResult res;
  res.grad = Matrix::Zero(m, student.cols());
  if (m == 0) return res;
  const Scalar inv_m = Scalar(1) / static_cast<Scalar>(m);

  // base columns other than the background make up C_b
  std::vector<Index> base_cols_in_base;
  std::vector<Index> base_cols_in_student;
  for (ClassId k : base.class_order) {
    if (k == background) continue;
    base_cols_in_base.push_back(base.col_of(k));
    if (term == BackgroundTerm::kCurrentModel) base_cols_in_student.push_back(student.col_of(k));
  }
  const Index u_student = student.col_of(background);

  std::vector<Scalar> terms;
  terms.reserve(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    const ClassId y = labels[static_cast<std::size_t>(i)];
    if (y == kIgnore) continue;
    const Scalar a = alpha.at(y);
    if (y != background) {
      const Index c = student.col_of(y);
      const Scalar p = student.values(i, c);
      terms.push_back(-a * clamped_log(p));
      RowVector dprobs = RowVector::Zero(student.cols());
      dprobs[c] = -a * inv_m / std::max(p, kLogClamp);
      chain_softmax_row(student.values.row(i), dprobs, res.grad, i);
    } else if (term == BackgroundTerm::kFrozenBase) {
      Scalar p = 0;
      for (Index c : base_cols_in_base) p += base.values(i, c);
      terms.push_back(-a * clamped_log(p));
      // frozen teacher mass: background rows carry no gradient
    } else {
      Scalar p = student.values(i, u_student);
      for (Index c : base_cols_in_student) p += student.values(i, c);
      terms.push_back(-a * clamped_log(p));
      const Scalar d = -a * inv_m / std::max(p, kLogClamp);
      RowVector dprobs = RowVector::Zero(student.cols());
      dprobs[u_student] = d;
      for (Index c : base_cols_in_student) dprobs[c] = d;
      chain_softmax_row(student.values.row(i), dprobs, res.grad, i);
    }
  }
  res.value = ordered_sum(terms) * inv_m;
  return res;
}

LossResult kd_loss(const ProbMap& student, const ProbMap& teacher, ClassId background, KdMode mode) {
  if (mode == KdMode::kOff) throw std::invalid_argument("kd_loss: mode is off");
  check_aligned(student, teacher, "kd_loss");
  const Index m = student.rows();
  LossResult res;
  res.grad = Matrix::Zero(m, student.cols());
  if (m == 0) return res;
  const Scalar inv_m = Scalar(1) / static_cast<Scalar>(m);

  const Index u_teacher = teacher.col_of(background);
  const Index u_student = student.col_of(background);
  // teacher base columns paired with the matching student columns
  std::vector<std::pair<Index, Index>> paired;  // (teacher col, student col)
  for (ClassId k : teacher.class_order) {
    if (k == background) continue;
    paired.emplace_back(teacher.col_of(k), student.col_of(k));
  }
  // student columns absent from the teacher: the novel classes
  std::vector<Index> novel_cols;
  for (ClassId k : student.class_order) {
    if (!teacher.has_class(k)) novel_cols.push_back(student.col_of(k));
  }

  std::vector<Scalar> terms;
  terms.reserve(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    Scalar element = 0;
    RowVector dprobs = RowVector::Zero(student.cols());
    for (const auto& [tc, sc] : paired) {
      const Scalar t = teacher.values(i, tc);
      const Scalar p = student.values(i, sc);
      element -= t * clamped_log(p);
      dprobs[sc] += -t * inv_m / std::max(p, kLogClamp);
    }
    const Scalar t_u = teacher.values(i, u_teacher);
    if (mode == KdMode::kUnbiased) {
      Scalar p = 0;
      for (Index c : novel_cols) p += student.values(i, c);
      element -= t_u * clamped_log(p);
      const Scalar d = -t_u * inv_m / std::max(p, kLogClamp);
      for (Index c : novel_cols) dprobs[c] += d;
    } else {
      const Scalar p = student.values(i, u_student);
      element -= t_u * clamped_log(p);
      dprobs[u_student] += -t_u * inv_m / std::max(p, kLogClamp);
    }
    terms.push_back(element);
    chain_softmax_row(student.values.row(i), dprobs, res.grad, i);
  }
  res.value = ordered_sum(terms) * inv_m;
  return res;
}

LossResult loss_base(const ProbMap& probs, std::span<const ClassId> labels, const ClassWeights& alpha) {
  LossResult ce = weighted_ce(probs, labels, alpha);
  const LossResult ls = lovasz_softmax(probs, labels, probs.class_order);
  ce.value += ls.value;
  ce.grad += ls.grad;
  return ce;
}

LossResult loss_finetune(const ProbMap& student, const ProbMap& base, std::span<const ClassId> labels,
                         const ClassWeights& alpha, ClassId background, const FinetuneLossConfig& config) {
  if (config.ce == CeMode::kOff && config.kd == KdMode::kOff && !config.lovasz) {
    throw std::invalid_argument("loss_finetune: no loss terms enabled");
  }
  LossResult res;
  res.grad = Matrix::Zero(student.rows(), student.cols());

  if (config.ce == CeMode::kOriginal) {
    const LossResult ce = weighted_ce(student, labels, alpha);
    res.value += ce.value;
    res.grad += ce.grad;
  } else if (config.ce == CeMode::kUnbiased) {
    const LossResult ce = unbiased_ce(student, base, labels, alpha, background, config.background_term);
    res.value += ce.value;
    res.grad += ce.grad;
  }

  if (config.kd != KdMode::kOff) {
    const LossResult kd = kd_loss(student, base, background, config.kd);
    res.value += kd.value;
    res.grad += kd.grad;
  }

  if (config.lovasz) {
    std::vector<ClassId> class_set;
    class_set.push_back(background);
    for (ClassId k : student.class_order) {
      if (!base.has_class(k)) class_set.push_back(k);
    }
    const LossResult ls = lovasz_softmax(student, labels, class_set);
    res.value += ls.value;
    res.grad += ls.grad;
  }
  return res;
}

}  // namespace lfss
