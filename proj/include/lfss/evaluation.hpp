#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lfss/taxonomy.hpp"
#include "lfss/types.hpp"

namespace lfss {

/// Truth-by-prediction counts over a fixed class order. Ignore-labeled
/// points are skipped. Matrices over the same order merge associatively, so
/// per-frame matrices can be accumulated in any grouping.
struct ConfusionMatrix {
  std::vector<ClassId> class_order;
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;  // row: truth, col: prediction

  static ConfusionMatrix zero(std::span<const ClassId> classes);

  void accumulate(std::span<const ClassId> predictions, std::span<const ClassId> truths);
  void merge(const ConfusionMatrix& other);

  std::int64_t total() const { return counts.sum(); }

  /// IoU in percent: 100 TP / (TP + FP + FN); nullopt when the union is
  /// empty (class absent from both truth and prediction).
  std::optional<Scalar> iou(ClassId id) const;
};

struct EvalOptions {
  bool include_background_in_miou = false;
  bool absent_classes_as_zero = false;
};

/// Per-class IoU plus the base/novel/overall means. Means average only over
/// present classes unless absent_classes_as_zero is set; the background
/// class never enters mIoU_b or mIoU_n and joins the overall mean only when
/// include_background_in_miou is set.
struct EvalReport {
  std::vector<ClassId> class_order;
  std::vector<std::string> class_names;
  std::vector<std::optional<Scalar>> per_class_iou;  // percent
  std::optional<Scalar> miou_base;
  std::optional<Scalar> miou_novel;
  std::optional<Scalar> miou;
  std::int64_t evaluated_points = 0;
  std::string manifest_reference;  // run manifest this report belongs to, when produced by the CLI

  /// Compact mIoU_b / mIoU_n / mIoU summary.
  std::string summary_table() const;
  /// Per-class CSV: one header row of class names plus the three means, one
  /// value row ("-" marks absent classes).
  std::string per_class_csv() const;
  nlohmann::json to_json() const;
};

EvalReport make_report(const ConfusionMatrix& conf, const Taxonomy& tax, const EvalOptions& options);

}  // namespace lfss
