#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lfss/types.hpp"

namespace lfss {

/// Class universe for one experiment: a background class u, the base set and
/// the novel set, plus the mapping from raw dataset ids into this space.
/// Background is a real class with its own head but belongs to neither set;
/// raw ids may also map to kIgnore, which drops elements from losses/metrics.
struct Taxonomy {
  ClassId background = 0;
  std::vector<ClassId> base;
  std::vector<ClassId> novel;
  std::map<std::uint16_t, ClassId> raw_to_class;
  std::map<ClassId, std::string> names;

  /// Checks the structural invariants (disjoint sets, mapped ids known).
  void validate() const;

  bool contains(ClassId id) const;

  /// Background first, then base, then novel, in declared order.
  std::vector<ClassId> all_classes() const;
  std::vector<ClassId> base_stage_classes() const;   // {u} + base
  std::vector<ClassId> novel_stage_classes() const;  // {u} + novel

  std::string name(ClassId id) const;

  /// Maps raw semantic ids to class ids; throws naming the first unknown id.
  std::vector<ClassId> classes_from_raw(std::span<const std::uint16_t> raw) const;

  /// Canonical (smallest) raw id that maps to the class; used when writing
  /// prediction label files. Throws if no raw id maps to it.
  std::uint16_t raw_for_class(ClassId id) const;

  /// Stable hash of the full class structure; stored in checkpoints so a
  /// model cannot be loaded against a different taxonomy.
  std::uint64_t fingerprint() const;
};

/// Novel ids become background; base ids and u pass through; ignore preserved.
std::vector<ClassId> remap_for_base(std::span<const ClassId> labels, const Taxonomy& tax);

/// Base ids become background; novel ids and u pass through; ignore preserved.
std::vector<ClassId> remap_for_novel(std::span<const ClassId> labels, const Taxonomy& tax);

/// Inverse-frequency weights with a frequency floor.
struct ClassWeights {
  std::map<ClassId, Scalar> weights;
  Scalar at(ClassId id) const;
};

/// alpha_k = 1 / max(count_k / total, floor). Counts must cover the stage's
/// class set; zero counts are floored rather than producing infinities.
ClassWeights class_weights(const std::map<ClassId, std::int64_t>& counts, Scalar frequency_floor);

}  // namespace lfss
