#include "lfss/evaluation.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace lfss {

ConfusionMatrix ConfusionMatrix::zero(std::span<const ClassId> classes) {
  if (classes.empty()) throw std::invalid_argument("confusion matrix needs at least one class");
  ConfusionMatrix m;
  m.class_order.assign(classes.begin(), classes.end());
  const Index n = static_cast<Index>(classes.size());
  m.counts = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, n);
  return m;
}

namespace {

Index index_of(const std::vector<ClassId>& order, ClassId id) {
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] == id) return static_cast<Index>(i);
  }
  return -1;
}

}  // namespace

void ConfusionMatrix::accumulate(std::span<const ClassId> predictions, std::span<const ClassId> truths) {
  if (predictions.size() != truths.size()) {
    throw std::invalid_argument("accumulate: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(truths.size()) + " truths");
  }
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const ClassId t = truths[i];
    if (t == kIgnore) continue;
    const Index ti = index_of(class_order, t);
    if (ti < 0) throw std::runtime_error("accumulate: unknown truth class " + std::to_string(t));
    const Index pi = index_of(class_order, predictions[i]);
    if (pi < 0) throw std::runtime_error("accumulate: unknown predicted class " + std::to_string(predictions[i]));
    counts(ti, pi) += 1;
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.class_order != class_order) throw std::invalid_argument("merge: class orders differ");
  counts += other.counts;
}

std::optional<Scalar> ConfusionMatrix::iou(ClassId id) const {
  const Index i = index_of(class_order, id);
  if (i < 0) throw std::runtime_error("iou: unknown class " + std::to_string(id));
  const std::int64_t tp = counts(i, i);
  const std::int64_t fn = counts.row(i).sum() - tp;
  const std::int64_t fp = counts.col(i).sum() - tp;
  const std::int64_t uni = tp + fp + fn;
  if (uni == 0) return std::nullopt;
  return Scalar(100) * static_cast<Scalar>(tp) / static_cast<Scalar>(uni);
}

namespace {

std::optional<Scalar> mean_iou(const std::vector<std::optional<Scalar>>& ious, bool absent_as_zero) {
  Scalar sum = 0;
  int n = 0;
  for (const auto& v : ious) {
    if (v.has_value()) {
      sum += *v;
      ++n;
    } else if (absent_as_zero) {
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<Scalar>(n);
}

std::string format_iou(const std::optional<Scalar>& v) {
  if (!v.has_value()) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << *v;
  return os.str();
}

}  // namespace

EvalReport make_report(const ConfusionMatrix& conf, const Taxonomy& tax, const EvalOptions& options) {
  EvalReport rep;
  rep.class_order = conf.class_order;
  rep.evaluated_points = conf.total();
  std::vector<std::optional<Scalar>> base_ious, novel_ious, overall_ious;
  for (ClassId id : conf.class_order) {
    rep.class_names.push_back(tax.name(id));
    const auto v = conf.iou(id);
    rep.per_class_iou.push_back(v);
    const bool is_base = std::find(tax.base.begin(), tax.base.end(), id) != tax.base.end();
    const bool is_novel = std::find(tax.novel.begin(), tax.novel.end(), id) != tax.novel.end();
    if (is_base) base_ious.push_back(v);
    if (is_novel) novel_ious.push_back(v);
    if (is_base || is_novel || (id == tax.background && options.include_background_in_miou)) {
      overall_ious.push_back(v);
    }
  }
  rep.miou_base = mean_iou(base_ious, options.absent_classes_as_zero);
  rep.miou_novel = mean_iou(novel_ious, options.absent_classes_as_zero);
  rep.miou = mean_iou(overall_ious, options.absent_classes_as_zero);
  return rep;
}

std::string EvalReport::summary_table() const {
  std::ostringstream os;
  os << "points evaluated: " << evaluated_points << "\n";
  os << std::left << std::setw(10) << "" << std::setw(10) << "mIoU_b" << std::setw(10) << "mIoU_n"
     << std::setw(10) << "mIoU" << "\n";
  os << std::left << std::setw(10) << "model" << std::setw(10) << format_iou(miou_base) << std::setw(10)
     << format_iou(miou_novel) << std::setw(10) << format_iou(miou) << "\n";
  return os.str();
}

std::string EvalReport::per_class_csv() const {
  std::ostringstream header, row;
  for (std::size_t i = 0; i < class_order.size(); ++i) {
    header << class_names[i] << ",";
    row << format_iou(per_class_iou[i]) << ",";
  }
  header << "mIoU_b,mIoU_n,mIoU";
  row << format_iou(miou_base) << "," << format_iou(miou_novel) << "," << format_iou(miou);
  return header.str() + "\n" + row.str() + "\n";
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  nlohmann::json per_class;
  for (std::size_t i = 0; i < class_order.size(); ++i) {
    nlohmann::json entry;
    entry["name"] = class_names[i];
    if (per_class_iou[i].has_value()) {
      entry["iou"] = *per_class_iou[i];
    } else {
      entry["iou"] = nullptr;
    }
    per_class[std::to_string(class_order[i])] = entry;
  }
  j["per_class"] = per_class;
  j["miou_base"] = miou_base.has_value() ? nlohmann::json(*miou_base) : nlohmann::json(nullptr);
  j["miou_novel"] = miou_novel.has_value() ? nlohmann::json(*miou_novel) : nlohmann::json(nullptr);
  j["miou"] = miou.has_value() ? nlohmann::json(*miou) : nlohmann::json(nullptr);
  j["evaluated_points"] = evaluated_points;
  if (!manifest_reference.empty()) j["manifest"] = manifest_reference;
  return j;
}

}  // namespace lfss
