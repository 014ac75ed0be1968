#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "torml/labels.hpp"

namespace torml {

/// Common surface for the four classifiers. `predict_proba` returns one
/// probability per label in canonical order; the attribution and evasion
/// machinery only talks to models through this interface.
class MultiLabelModel {
 public:
  virtual ~MultiLabelModel() = default;

  virtual std::string kind() const = 0;

  /// Hash of the feature layout this model accepts as raw input.
  virtual std::uint64_t schema_hash() const = 0;

  virtual std::vector<double> predict_proba(
      std::span<const double> features) const = 0;

  /// Default: threshold each label probability. An empty prediction is a
  /// legal outcome here; the 1-4 label invariant only binds loaded data.
  virtual LabelSet predict(std::span<const double> features,
                           double threshold = 0.5) const {
    auto p = predict_proba(features);
    LabelSet out;
    for (int i = 0; i < int(p.size()) && i < kNumLabels; ++i)
      if (p[i] >= threshold) out.set(i);
    return out;
  }
};

}  // namespace torml
