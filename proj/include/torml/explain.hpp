#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "torml/csv.hpp"
#include "torml/dataset.hpp"
#include "torml/predictor.hpp"
#include "torml/random.hpp"

namespace torml {

/// Rows of training data realizing the interventional expectation: a
/// coalition's value is the mean model output over hybrids of the explained
/// sample and each background row.
struct BackgroundSet {
  std::vector<std::vector<double>> rows;

  static BackgroundSet from_dataset(const Dataset& data, int budget,
                                    std::uint64_t seed) {
    if (budget < 1) throw std::invalid_argument("background budget must be >= 1");
    BackgroundSet bg;
    if (data.size() <= budget) {
      for (const auto& s : data.samples) bg.rows.push_back(s.features);
      return bg;
    }
    Rng rng(derive_seed(seed, 0xB6));
    for (int i : rng.sample_without_replacement(data.size(), budget))
      bg.rows.push_back(data.samples[i].features);
    return bg;
  }
};

/// Per-feature attribution of one (sample, label) model output.
struct Attribution {
  std::vector<int> positions;  // attributed feature positions
  std::vector<double> phi;     // aligned with positions
  double base_value = 0.0;
  double model_output = 0.0;
  double sampling_residual = 0.0;  // raw residual before redistribution

  double reconstructed() const {
    return base_value + std::accumulate(phi.begin(), phi.end(), 0.0);
  }
};

namespace explain_detail {

class CoalitionEvaluator {
 public:
  CoalitionEvaluator(const MultiLabelModel& model,
                     std::span<const double> sample, int label,
                     const BackgroundSet& bg, std::vector<int> positions)
      : model_(model),
        label_(label),
        bg_(bg),
        positions_(std::move(positions)),
        sample_(sample.begin(), sample.end()) {
    if (bg_.rows.empty()) throw std::invalid_argument("empty background set");
    for (int p : positions_)
      if (p < 0 || p >= int(sample_.size()))
        throw std::invalid_argument("attributed position out of range");
    hybrid_.resize(sample_.size());
  }

  const std::vector<int>& positions() const { return positions_; }
  int n() const { return int(positions_.size()); }

  /// Mean model output over the background with coalition members (bits of
  /// `mask` over `positions`) taken from the sample.
  double value(std::uint64_t mask) const {
    double acc = 0;
    for (const auto& row : bg_.rows) {
      // Non-attributed positions always follow the sample.
      hybrid_ = sample_;
      for (int k = 0; k < n(); ++k)
        if (!(mask >> k & 1)) hybrid_[positions_[k]] = row[positions_[k]];
      acc += model_.predict_proba(hybrid_)[label_];
    }
    return acc / double(bg_.rows.size());
  }

 private:
  const MultiLabelModel& model_;
  int label_;
  const BackgroundSet& bg_;
  std::vector<int> positions_;
  std::vector<double> sample_;
  mutable std::vector<double> hybrid_;
};

}  // namespace explain_detail

inline std::vector<int> all_positions(int n_features) {
  std::vector<int> p(n_features);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

/// f(S) of the attribution game: mean model output for `label` on hybrids
/// taking the features in S from the sample and the rest from each
/// background row.
inline double coalition_value(const MultiLabelModel& model,
                              std::span<const double> sample,
                              const std::vector<int>& coalition, int label,
                              const BackgroundSet& bg,
                              const std::vector<int>& positions) {
  explain_detail::CoalitionEvaluator eval(model, sample, label, bg, positions);
  std::uint64_t mask = 0;
  for (int c : coalition) {
    auto it = std::find(positions.begin(), positions.end(), c);
    if (it == positions.end())
      throw std::invalid_argument("coalition member not in attributed set");
    mask |= std::uint64_t(1) << (it - positions.begin());
  }
  return eval.value(mask);
}

/// Exact Shapley values by full subset enumeration (2^n coalitions).
inline Attribution exact_shapley(const MultiLabelModel& model,
                                 std::span<const double> sample, int label,
                                 const BackgroundSet& bg,
                                 const std::vector<int>& positions) {
  explain_detail::CoalitionEvaluator eval(model, sample, label, bg, positions);
  const int n = eval.n();
  if (n < 1) throw std::invalid_argument("nothing to attribute");
  if (n > 20)
    throw std::invalid_argument(
        "exact estimator is limited to 20 features; use the sampled one");

  const std::uint64_t full = (std::uint64_t(1) << n) - 1;
  std::vector<double> v(full + 1);
  for (std::uint64_t mask = 0; mask <= full; ++mask) v[mask] = eval.value(mask);

  // w(s) = s! (n-1-s)! / n! = 1 / (n * C(n-1, s))
  std::vector<double> w(n);
  for (int s = 0; s < n; ++s) {
    double binom = 1.0;
    for (int k = 1; k <= s; ++k) binom = binom * double(n - 1 - s + k) / k;
    w[s] = 1.0 / (double(n) * binom);
  }

  Attribution a;
  a.positions = eval.positions();
  a.phi.assign(n, 0.0);
  for (std::uint64_t mask = 0; mask <= full; ++mask) {
    const int s = std::popcount(mask);
    for (int i = 0; i < n; ++i) {
      if (mask >> i & 1) continue;
      a.phi[i] += w[s] * (v[mask | (std::uint64_t(1) << i)] - v[mask]);
    }
  }
  a.base_value = v[0];
  a.model_output = v[full];
  return a;
}

/// Monte Carlo Shapley: mean marginal contribution over uniformly random
/// feature permutations. The residual against local accuracy is spread
/// uniformly and also reported raw.
inline Attribution sampled_shapley(const MultiLabelModel& model,
                                   std::span<const double> sample, int label,
                                   const BackgroundSet& bg, int n_perms,
                                   std::uint64_t seed,
                                   const std::vector<int>& positions) {
  if (n_perms < 1) throw std::invalid_argument("need at least 1 permutation");
  explain_detail::CoalitionEvaluator eval(model, sample, label, bg, positions);
  const int n = eval.n();
  if (n < 1) throw std::invalid_argument("nothing to attribute");
  if (n > 63) throw std::invalid_argument("sampled estimator caps at 63 features");

  Attribution a;
  a.positions = eval.positions();
  a.phi.assign(n, 0.0);
  a.base_value = eval.value(0);
  a.model_output = eval.value((std::uint64_t(1) << n) - 1);

  Rng rng(derive_seed(seed, 0xA7));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int p = 0; p < n_perms; ++p) {
    rng.shuffle(order);
    std::uint64_t mask = 0;
    double prev = a.base_value;
    for (int step = 0; step < n; ++step) {
      const int i = order[step];
      mask |= std::uint64_t(1) << i;
      const double cur = step + 1 == n ? a.model_output : eval.value(mask);
      a.phi[i] += cur - prev;
      prev = cur;
    }
  }
  for (double& p : a.phi) p /= double(n_perms);

  const double target = a.model_output - a.base_value;
  const double sum = std::accumulate(a.phi.begin(), a.phi.end(), 0.0);
  a.sampling_residual = target - sum;
  for (double& p : a.phi) p += a.sampling_residual / double(n);
  return a;
}

/// Mean absolute attribution per (label, feature). Rows follow `labels`,
/// columns follow the shared attributed positions.
struct GlobalImportance {
  std::vector<int> labels;
  std::vector<int> positions;
  std::vector<std::vector<double>> mean_abs_phi;  // [label][position]

  /// Top-k positions for one label row, by importance descending (ties by
  /// position).
  std::vector<int> top_k(int label_row, int k) const {
    std::vector<int> idx(positions.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return mean_abs_phi[label_row][a] > mean_abs_phi[label_row][b];
    });
    idx.resize(std::min<std::size_t>(idx.size(), std::size_t(k)));
    std::vector<int> out;
    for (int i : idx) out.push_back(positions[i]);
    return out;
  }
};

inline GlobalImportance global_importance(
    const std::vector<int>& labels,
    const std::vector<std::vector<Attribution>>& per_label_attributions) {
  if (labels.size() != per_label_attributions.size())
    throw std::invalid_argument("label/attribution row mismatch");
  GlobalImportance g;
  g.labels = labels;
  for (std::size_t l = 0; l < labels.size(); ++l) {
    const auto& rows = per_label_attributions[l];
    if (rows.empty()) throw std::invalid_argument("no attributions for label");
    if (g.positions.empty()) g.positions = rows[0].positions;
    std::vector<double> acc(g.positions.size(), 0.0);
    for (const auto& a : rows) {
      if (a.positions != g.positions)
        throw std::invalid_argument("attribution position sets differ");
      for (std::size_t i = 0; i < a.phi.size(); ++i)
        acc[i] += std::abs(a.phi[i]);
    }
    for (double& v : acc) v /= double(rows.size());
    g.mean_abs_phi.push_back(std::move(acc));
  }
  return g;
}

/// Computes attributions for every (sample, label) pair, optionally on a
/// thread pool. Per-pair seeds derive from (seed, sample, label), so the
/// result is identical at any thread count.
inline std::vector<std::vector<Attribution>> explain_dataset(
    const MultiLabelModel& model, const Dataset& data,
    const std::vector<int>& labels, const BackgroundSet& bg, bool exact,
    int n_perms, std::uint64_t seed, const std::vector<int>& positions,
    int threads = 1) {
  std::vector<std::vector<Attribution>> out(
      labels.size(), std::vector<Attribution>(data.samples.size()));
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t l = 0; l < labels.size(); ++l)
    for (std::size_t s = 0; s < data.samples.size(); ++s)
      pairs.emplace_back(int(l), int(s));

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const auto [l, s] = pairs[k];
      const auto& features = data.samples[s].features;
      out[l][s] =
          exact ? exact_shapley(model, features, labels[l], bg, positions)
                : sampled_shapley(
                      model, features, labels[l], bg, n_perms,
                      derive_seed(seed, std::uint64_t(s), std::uint64_t(labels[l])),
                      positions);
    }
  };

  threads = std::max(1, threads);
  if (threads == 1 || pairs.size() < 2) {
    work(0, pairs.size());
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (pairs.size() + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const std::size_t begin = std::min(pairs.size(), std::size_t(t) * chunk);
    const std::size_t end = std::min(pairs.size(), begin + chunk);
    if (begin < end) pool.emplace_back(work, begin, end);
  }
  for (auto& th : pool) th.join();
  return out;
}

// ---- Plot-data exports ----

/// (sample, feature, shap value, feature value) rows for summary plots.
inline std::string summary_data(const std::vector<Attribution>& rows,
                                const Dataset& data) {
  std::string out = "sample,feature_index,shap_value,feature_value\n";
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const auto& a = rows[s];
    for (std::size_t i = 0; i < a.positions.size(); ++i) {
      out += std::to_string(s) + ',' +
             data.schema.at(a.positions[i]).name + ',' +
             csv::format_number(a.phi[i]) + ',' +
             csv::format_number(data.samples[s].features[a.positions[i]]) +
             '\n';
    }
  }
  return out;
}

/// Signed contributions ordered by magnitude, with the running total from
/// base value to model output.
inline std::string force_data(const std::vector<Attribution>& rows,
                              const Dataset& data) {
  std::string out =
      "sample,rank,feature_index,contribution,cumulative,base_value,"
      "model_output\n";
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const auto& a = rows[s];
    std::vector<int> order(a.positions.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
      return std::abs(a.phi[x]) > std::abs(a.phi[y]);
    });
    double cumulative = a.base_value;
    for (std::size_t r = 0; r < order.size(); ++r) {
      const int i = order[r];
      cumulative += a.phi[i];
      out += std::to_string(s) + ',' + std::to_string(r) + ',' +
             data.schema.at(a.positions[i]).name + ',' +
             csv::format_number(a.phi[i]) + ',' +
             csv::format_number(cumulative) + ',' +
             csv::format_number(a.base_value) + ',' +
             csv::format_number(a.model_output) + '\n';
    }
  }
  return out;
}

/// Cumulative contribution path over features ranked least to most
/// important; starts at the base value and ends at the model output.
inline std::string decision_data(const std::vector<Attribution>& rows,
                                 const Dataset& data) {
  std::string out = "sample,step,feature_index,cumulative\n";
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const auto& a = rows[s];
    std::vector<int> order(a.positions.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
      return std::abs(a.phi[x]) < std::abs(a.phi[y]);
    });
    out += std::to_string(s) + ",0,base," + csv::format_number(a.base_value) +
           '\n';
    double cumulative = a.base_value;
    for (std::size_t r = 0; r < order.size(); ++r) {
      const int i = order[r];
      cumulative += a.phi[i];
      out += std::to_string(s) + ',' + std::to_string(r + 1) + ',' +
             data.schema.at(a.positions[i]).name + ',' +
             csv::format_number(cumulative) + '\n';
    }
  }
  return out;
}

/// (primary feature value, shap of primary, secondary feature value) per
/// sample.
inline std::string dependence_data(const std::vector<Attribution>& rows,
                                   const Dataset& data, int primary_position,
                                   int secondary_position) {
  std::string out = "sample,primary_value,shap_primary,secondary_value\n";
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const auto& a = rows[s];
    auto it = std::find(a.positions.begin(), a.positions.end(),
                        primary_position);
    if (it == a.positions.end())
      throw std::invalid_argument("primary feature was not attributed");
    const double phi = a.phi[it - a.positions.begin()];
    out += std::to_string(s) + ',' +
           csv::format_number(data.samples[s].features[primary_position]) +
           ',' + csv::format_number(phi) + ',' +
           csv::format_number(data.samples[s].features[secondary_position]) +
           '\n';
  }
  return out;
}

}  // namespace torml
