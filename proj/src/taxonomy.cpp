#include "lfss/taxonomy.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lfss/hash.hpp"

namespace lfss {

namespace {

bool in_list(const std::vector<ClassId>& v, ClassId id) {
  return std::find(v.begin(), v.end(), id) != v.end();
}

}  // namespace

void Taxonomy::validate() const {
  if (background == kIgnore) throw std::invalid_argument("taxonomy: background cannot be the ignore marker");
  if (in_list(base, background) || in_list(novel, background)) {
    throw std::invalid_argument("taxonomy: background id " + std::to_string(background) +
                                " must not appear in base or novel sets");
  }
  std::set<ClassId> seen;
  for (ClassId id : base) {
    if (id == kIgnore) throw std::invalid_argument("taxonomy: ignore marker cannot be a base class");
    if (!seen.insert(id).second) throw std::invalid_argument("taxonomy: duplicate base class " + std::to_string(id));
  }
  for (ClassId id : novel) {
    if (id == kIgnore) throw std::invalid_argument("taxonomy: ignore marker cannot be a novel class");
    if (!seen.insert(id).second) {
      throw std::invalid_argument("taxonomy: class " + std::to_string(id) + " appears in both base and novel sets");
    }
  }
  for (const auto& [raw, cls] : raw_to_class) {
    if (cls != kIgnore && !contains(cls)) {
      throw std::invalid_argument("taxonomy: raw id " + std::to_string(raw) + " maps to unknown class " +
                                  std::to_string(cls));
    }
  }
}

bool Taxonomy::contains(ClassId id) const {
  return id == background || in_list(base, id) || in_list(novel, id);
}

std::vector<ClassId> Taxonomy::all_classes() const {
  std::vector<ClassId> out;
  out.reserve(1 + base.size() + novel.size());
  out.push_back(background);
  out.insert(out.end(), base.begin(), base.end());
  out.insert(out.end(), novel.begin(), novel.end());
  return out;
}

std::vector<ClassId> Taxonomy::base_stage_classes() const {
  std::vector<ClassId> out;
  out.reserve(1 + base.size());
  out.push_back(background);
  out.insert(out.end(), base.begin(), base.end());
  return out;
}

std::vector<ClassId> Taxonomy::novel_stage_classes() const {
  std::vector<ClassId> out;
  out.reserve(1 + novel.size());
  out.push_back(background);
  out.insert(out.end(), novel.begin(), novel.end());
  return out;
}

std::string Taxonomy::name(ClassId id) const {
  if (auto it = names.find(id); it != names.end()) return it->second;
  return "class" + std::to_string(id);
}

std::vector<ClassId> Taxonomy::classes_from_raw(std::span<const std::uint16_t> raw) const {
  std::vector<ClassId> out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto it = raw_to_class.find(raw[i]);
    if (it == raw_to_class.end()) {
      throw std::runtime_error("unknown raw semantic id " + std::to_string(raw[i]) + " at element " +
                               std::to_string(i));
    }
    out.push_back(it->second);
  }
  return out;
}

std::uint16_t Taxonomy::raw_for_class(ClassId id) const {
  for (const auto& [raw, cls] : raw_to_class) {  // map is ordered: smallest raw wins
    if (cls == id) return raw;
  }
  throw std::runtime_error("no raw id maps to class " + std::to_string(id) +
                           "; add one to the taxonomy to write labels for it");
}

std::uint64_t Taxonomy::fingerprint() const {
  std::ostringstream os;
  os << "bg=" << background << ";base=";
  for (ClassId id : base) os << id << ",";
  os << ";novel=";
  for (ClassId id : novel) os << id << ",";
  os << ";raw=";
  for (const auto& [raw, cls] : raw_to_class) os << raw << ":" << cls << ",";
  return fnv1a64(os.str());
}

namespace {

std::vector<ClassId> remap(std::span<const ClassId> labels, const Taxonomy& tax,
                           const std::vector<ClassId>& folded) {
  std::vector<ClassId> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const ClassId id = labels[i];
    if (id == kIgnore) {
      out.push_back(kIgnore);
      continue;
    }
    if (!tax.contains(id)) {
      throw std::runtime_error("label id " + std::to_string(id) + " at element " + std::to_string(i) +
                               " is not in the taxonomy");
    }
    out.push_back(in_list(folded, id) ? tax.background : id);
  }
  return out;
}

}  // namespace

std::vector<ClassId> remap_for_base(std::span<const ClassId> labels, const Taxonomy& tax) {
  return remap(labels, tax, tax.novel);
}

std::vector<ClassId> remap_for_novel(std::span<const ClassId> labels, const Taxonomy& tax) {
  return remap(labels, tax, tax.base);
}

Scalar ClassWeights::at(ClassId id) const {
  auto it = weights.find(id);
  if (it == weights.end()) throw std::runtime_error("no class weight for class " + std::to_string(id));
  return it->second;
}

ClassWeights class_weights(const std::map<ClassId, std::int64_t>& counts, Scalar frequency_floor) {
  if (frequency_floor <= 0) throw std::invalid_argument("class_weights: frequency floor must be positive");
  std::int64_t total = 0;
  for (const auto& [id, count] : counts) {
    if (count < 0) {
      throw std::invalid_argument("class_weights: negative count for class " + std::to_string(id));
    }
    total += count;
  }
  if (total <= 0) throw std::invalid_argument("class_weights: total count must be positive");
  ClassWeights out;
  for (const auto& [id, count] : counts) {
    const Scalar freq = static_cast<Scalar>(count) / static_cast<Scalar>(total);
    out.weights[id] = 1.0 / std::max(freq, frequency_floor);
  }
  return out;
}

}  // namespace lfss
