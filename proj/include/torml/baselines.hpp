#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "torml/dataset.hpp"
#include "torml/forest.hpp"
#include "torml/labels.hpp"
#include "torml/metrics.hpp"
#include "torml/predictor.hpp"
#include "torml/serialize.hpp"

namespace torml {

inline constexpr char kModelMagic[9] = "TMLMODEL";
inline constexpr std::uint32_t kModelVersion = 1;

namespace io_detail {

inline void write_model_header(io::ByteWriter& w, std::uint8_t kind,
                               std::uint64_t schema_hash) {
  for (int i = 0; i < 8; ++i) w.u8(std::uint8_t(kModelMagic[i]));
  w.u32(kModelVersion);
  w.u8(kind);
  w.u64(schema_hash);
  w.u32(kNumLabels);
  for (auto name : kLabelNames) w.str(std::string(name));
}

struct ModelHeader {
  std::uint8_t kind = 0;
  std::uint64_t schema_hash = 0;
};

inline ModelHeader read_model_header(io::ByteReader& r) {
  for (int i = 0; i < 8; ++i)
    if (r.u8() != std::uint8_t(kModelMagic[i]))
      throw std::runtime_error("not a model file (bad magic)");
  const auto version = r.u32();
  if (version != kModelVersion)
    throw std::runtime_error("unsupported model file version " +
                             std::to_string(version));
  ModelHeader h;
  h.kind = r.u8();
  h.schema_hash = r.u64();
  const auto nl = r.u32();
  if (nl != kNumLabels)
    throw std::runtime_error("model file has wrong label count");
  for (int i = 0; i < kNumLabels; ++i)
    if (r.str() != kLabelNames[i])
      throw std::runtime_error("model file has non-canonical label order");
  return h;
}

}  // namespace io_detail

struct BaselineParams {
  ForestParams forest;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::vector<double>> feature_matrix(const Dataset& d) {
  std::vector<std::vector<double>> x;
  x.reserve(d.samples.size());
  for (const auto& s : d.samples) x.push_back(s.features);
  return x;
}

}  // namespace detail

/// Binary Relevance: one independent binary forest per label.
class BRModel : public MultiLabelModel {
 public:
  std::string kind() const override { return "br"; }
  std::uint64_t schema_hash() const override { return schema_hash_; }

  std::vector<double> predict_proba(
      std::span<const double> features) const override {
    std::vector<double> p(kNumLabels);
    for (int k = 0; k < kNumLabels; ++k)
      p[k] = forests_[k].predict_proba(features)[1];
    return p;
  }

  const RandomForest& forest(int label) const { return forests_[label]; }

  void save(const std::string& path) const {
    io::ByteWriter w;
    io_detail::write_model_header(w, 0, schema_hash_);
    for (const auto& f : forests_) f.serialize(w);
    w.save(path);
  }

  friend BRModel fit_br(const Dataset&, const BaselineParams&);
  friend BRModel load_br(io::ByteReader&, std::uint64_t);

 private:
  std::array<RandomForest, kNumLabels> forests_;
  std::uint64_t schema_hash_ = 0;
};

inline BRModel fit_br(const Dataset& train, const BaselineParams& params) {
  if (train.samples.empty()) throw std::invalid_argument("empty train set");
  BRModel model;
  model.schema_hash_ = train.schema.hash();
  auto x = detail::feature_matrix(train);
  for (int k = 0; k < kNumLabels; ++k) {
    std::vector<int> y;
    y.reserve(train.samples.size());
    for (const auto& s : train.samples) y.push_back(s.labels.test(k) ? 1 : 0);
    ForestParams fp = params.forest;
    fp.seed = derive_seed(params.seed, 0xB0, std::uint64_t(k));
    model.forests_[k] = fit_forest(x, y, 2, fp);
  }
  return model;
}

inline BRModel load_br(io::ByteReader& r, std::uint64_t schema_hash) {
  BRModel m;
  m.schema_hash_ = schema_hash;
  for (int k = 0; k < kNumLabels; ++k)
    m.forests_[k] = RandomForest::deserialize(r);
  return m;
}

/// Classifier Chains in canonical label order: forest k trains on the
/// features plus the true bits of labels 0..k-1, and consumes its own
/// thresholded predictions at inference.
class CCModel : public MultiLabelModel {
 public:
  std::string kind() const override { return "cc"; }
  std::uint64_t schema_hash() const override { return schema_hash_; }

  std::vector<double> predict_proba(
      std::span<const double> features) const override {
    std::vector<double> augmented(features.begin(), features.end());
    std::vector<double> p(kNumLabels);
    for (int k = 0; k < kNumLabels; ++k) {
      p[k] = forests_[k].predict_proba(augmented)[1];
      augmented.push_back(p[k] >= 0.5 ? 1.0 : 0.0);
    }
    return p;
  }

  const RandomForest& forest(int label) const { return forests_[label]; }

  void save(const std::string& path) const {
    io::ByteWriter w;
    io_detail::write_model_header(w, 1, schema_hash_);
    for (const auto& f : forests_) f.serialize(w);
    w.save(path);
  }

  friend CCModel fit_cc(const Dataset&, const BaselineParams&);
  friend CCModel load_cc(io::ByteReader&, std::uint64_t);

 private:
  std::array<RandomForest, kNumLabels> forests_;
  std::uint64_t schema_hash_ = 0;
};

inline CCModel fit_cc(const Dataset& train, const BaselineParams& params) {
  if (train.samples.empty()) throw std::invalid_argument("empty train set");
  CCModel model;
  model.schema_hash_ = train.schema.hash();
  auto x = detail::feature_matrix(train);
  for (int k = 0; k < kNumLabels; ++k) {
    std::vector<int> y;
    y.reserve(train.samples.size());
    for (const auto& s : train.samples) y.push_back(s.labels.test(k) ? 1 : 0);
    ForestParams fp = params.forest;
    fp.seed = derive_seed(params.seed, 0xC0, std::uint64_t(k));
    model.forests_[k] = fit_forest(x, y, 2, fp);
    // Teacher forcing: append the true bit for the next link.
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i].push_back(train.samples[i].labels.test(k) ? 1.0 : 0.0);
  }
  return model;
}

inline CCModel load_cc(io::ByteReader& r, std::uint64_t schema_hash) {
  CCModel m;
  m.schema_hash_ = schema_hash;
  for (int k = 0; k < kNumLabels; ++k)
    m.forests_[k] = RandomForest::deserialize(r);
  return m;
}

/// Label Powerset: every distinct training combination becomes one class of
/// a multiclass forest. Predictions are always combinations seen in
/// training.
class LPModel : public MultiLabelModel {
 public:
  std::string kind() const override { return "lp"; }
  std::uint64_t schema_hash() const override { return schema_hash_; }

  /// Per-label marginal: the summed probability of the combination classes
  /// containing that label.
  std::vector<double> predict_proba(
      std::span<const double> features) const override {
    auto combo_probs = forest_.predict_proba(features);
    std::vector<double> p(kNumLabels, 0.0);
    for (std::size_t c = 0; c < combos_.size(); ++c)
      for (int k = 0; k < kNumLabels; ++k)
        if (combos_[c].test(k)) p[k] += combo_probs[c];
    return p;
  }

  /// Arg-max combination, ties to the lowest class id.
  LabelSet predict(std::span<const double> features,
                   double /*threshold*/ = 0.5) const override {
    return combos_[forest_.predict_class(features)];
  }

  const std::vector<LabelSet>& combinations() const { return combos_; }
  const RandomForest& forest() const { return forest_; }

  void save(const std::string& path) const {
    io::ByteWriter w;
    io_detail::write_model_header(w, 2, schema_hash_);
    w.u32(std::uint32_t(combos_.size()));
    for (const auto& c : combos_) w.u32(c.bits());
    forest_.serialize(w);
    w.save(path);
  }

  friend LPModel fit_lp(const Dataset&, const BaselineParams&);
  friend LPModel load_lp(io::ByteReader&, std::uint64_t);

 private:
  std::vector<LabelSet> combos_;  // class id -> combination
  RandomForest forest_;
  std::uint64_t schema_hash_ = 0;
};

inline LPModel fit_lp(const Dataset& train, const BaselineParams& params) {
  if (train.samples.empty()) throw std::invalid_argument("empty train set");
  LPModel model;
  model.schema_hash_ = train.schema.hash();

  std::map<std::uint16_t, int> combo_ids;  // ascending bit patterns
  for (const auto& s : train.samples) combo_ids.emplace(s.labels.bits(), 0);
  int next = 0;
  for (auto& [bits, id] : combo_ids) {
    id = next++;
    model.combos_.push_back(LabelSet(bits));
  }

  std::vector<int> y;
  y.reserve(train.samples.size());
  for (const auto& s : train.samples) y.push_back(combo_ids[s.labels.bits()]);
  ForestParams fp = params.forest;
  fp.seed = derive_seed(params.seed, 0xD0);
  model.forest_ = fit_forest(detail::feature_matrix(train), y,
                             int(model.combos_.size()), fp);
  return model;
}

inline LPModel load_lp(io::ByteReader& r, std::uint64_t schema_hash) {
  LPModel m;
  m.schema_hash_ = schema_hash;
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i)
    m.combos_.push_back(LabelSet(std::uint16_t(r.u32())));
  m.forest_ = RandomForest::deserialize(r);
  return m;
}

/// Predicts a whole dataset into a truth/prediction batch.
template <typename Model>
PredictionBatch predict_batch(const Model& model, const Dataset& data,
                              double threshold = 0.5) {
  PredictionBatch b;
  for (const auto& s : data.samples) {
    LabelSet pred = model.predict(s.features, threshold);
    std::vector<bool> t(kNumLabels), p(kNumLabels);
    for (int k = 0; k < kNumLabels; ++k) {
      t[k] = s.labels.test(k);
      p[k] = pred.test(k);
    }
    b.y_true.push_back(std::move(t));
    b.y_pred.push_back(std::move(p));
  }
  return b;
}

}  // namespace torml
