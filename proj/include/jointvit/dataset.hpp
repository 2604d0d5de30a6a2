#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "jointvit/error.hpp"
#include "jointvit/tensor.hpp"

namespace jointvit {

/// SaO2 categories; the numeric value is the class index used everywhere.
enum class SaO2Class : int { Low = 0, BorderlineLow = 1, Normal = 2 };

inline constexpr std::size_t kNumSaO2Classes = 3;

inline std::string_view class_name(SaO2Class c) {
  switch (c) {
    case SaO2Class::Low: return "Low";
    case SaO2Class::BorderlineLow: return "BorderlineLow";
    case SaO2Class::Normal: return "Normal";
  }
  return "?";
}

inline std::optional<SaO2Class> parse_class_name(std::string_view name) {
  if (name == "Low") return SaO2Class::Low;
  if (name == "BorderlineLow" || name == "Borderline Low") return SaO2Class::BorderlineLow;
  if (name == "Normal") return SaO2Class::Normal;
  return std::nullopt;
}

inline int class_index(SaO2Class c) { return static_cast<int>(c); }

/// Clinical ranges: 96-100 Normal, 93-95 Borderline Low, 89-92 Low.
/// Continuous values split at the midpoints 92.5 and 95.5; anything below
/// 89 is still Low.
inline SaO2Class sao2_to_class(double sao2_percent) {
  require(std::isfinite(sao2_percent) && sao2_percent > 0.0 && sao2_percent <= 100.0,
          ErrorKind::Domain,
          "SaO2 percent must lie in (0, 100], got " + std::to_string(sao2_percent));
  if (sao2_percent < 92.5) return SaO2Class::Low;
  if (sao2_percent < 95.5) return SaO2Class::BorderlineLow;
  return SaO2Class::Normal;
}

/// Half-open percent interval [lo, hi) that maps to each class, used for
/// sampling synthetic labels.
inline std::array<double, 2> class_sao2_range(SaO2Class c) {
  switch (c) {
    case SaO2Class::Low: return {89.0, 92.5};
    case SaO2Class::BorderlineLow: return {92.5, 95.5};
    case SaO2Class::Normal: return {95.5, 100.0};
  }
  return {0.0, 0.0};
}

/// Representative percent for corpora labelled by class name only.
inline double class_representative_percent(SaO2Class c) {
  switch (c) {
    case SaO2Class::Low: return 90.5;
    case SaO2Class::BorderlineLow: return 94.0;
    case SaO2Class::Normal: return 98.0;
  }
  return 0.0;
}

struct LabeledInstance {
  std::string instance_id;
  std::vector<Tensor> slices;  // each H x W x C
  double sao2_percent = 0.0;
  SaO2Class sao2_class = SaO2Class::Normal;
  bool is_augmented = false;
  std::string source_id;

  static LabeledInstance original(std::string id, std::vector<Tensor> slices,
                                  double sao2_percent) {
    LabeledInstance inst;
    inst.source_id = id;
    inst.instance_id = std::move(id);
    inst.slices = std::move(slices);
    inst.sao2_percent = sao2_percent;
    inst.sao2_class = sao2_to_class(sao2_percent);
    inst.validate();
    return inst;
  }

  int label() const { return class_index(sao2_class); }

  void validate() const {
    require(!instance_id.empty(), ErrorKind::Contract, "instance id must not be empty");
    require(!slices.empty(), ErrorKind::Contract,
            "instance '" + instance_id + "' has no slices");
    for (const Tensor& s : slices) {
      require(s.rank() == 3 && s.shape() == slices.front().shape(), ErrorKind::Dimension,
              "instance '" + instance_id + "' has inconsistent slice shapes");
    }
    require(sao2_class == sao2_to_class(sao2_percent), ErrorKind::Contract,
            "instance '" + instance_id + "' class disagrees with its SaO2 value");
    require(is_augmented ? (!source_id.empty() && source_id != instance_id)
                         : source_id == instance_id,
            ErrorKind::Contract, "instance '" + instance_id + "' has an invalid source id");
  }
};

enum class Provenance { Synthetic, Folder, Augmented };

using ClassCounts = std::array<std::size_t, kNumSaO2Classes>;

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<LabeledInstance> instances, Provenance provenance)
      : instances_(std::move(instances)), provenance_(provenance) {
    validate();
  }

  const std::vector<LabeledInstance>& instances() const { return instances_; }
  const ClassCounts& class_counts() const { return counts_; }
  Provenance provenance() const { return provenance_; }
  std::size_t size() const { return instances_.size(); }
  bool empty() const { return instances_.empty(); }
  const LabeledInstance& operator[](std::size_t i) const { return instances_[i]; }

  /// Shape of every slice, or nullopt for an empty dataset.
  std::optional<Shape> slice_shape() const {
    if (instances_.empty()) return std::nullopt;
    return instances_.front().slices.front().shape();
  }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(instances_.size());
    for (const auto& inst : instances_) out.push_back(inst.label());
    return out;
  }

  /// Instances selected by index, in the given order.
  Dataset subset(const std::vector<std::size_t>& indices) const {
    std::vector<LabeledInstance> picked;
    picked.reserve(indices.size());
    for (std::size_t i : indices) picked.push_back(instances_.at(i));
    return Dataset(std::move(picked), provenance_);
  }

  static ClassCounts count_classes(const std::vector<LabeledInstance>& instances) {
    ClassCounts counts{};
    for (const auto& inst : instances) ++counts[static_cast<std::size_t>(inst.label())];
    return counts;
  }

 private:
  void validate() {
    std::unordered_set<std::string> ids;
    std::optional<Shape> shape;
    for (const auto& inst : instances_) {
      inst.validate();
      require(ids.insert(inst.instance_id).second, ErrorKind::Contract,
              "duplicate instance id '" + inst.instance_id + "'");
      if (!shape) shape = inst.slices.front().shape();
      require(inst.slices.front().shape() == *shape, ErrorKind::Dimension,
              "instance '" + inst.instance_id + "' slice shape " +
                  shape_string(inst.slices.front().shape()) + " differs from dataset shape " +
                  shape_string(*shape));
    }
    counts_ = count_classes(instances_);
  }

  std::vector<LabeledInstance> instances_;
  ClassCounts counts_{};
  Provenance provenance_ = Provenance::Synthetic;
};

}  // namespace jointvit
