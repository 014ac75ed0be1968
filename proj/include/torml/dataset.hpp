#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "torml/csv.hpp"
#include "torml/labels.hpp"
#include "torml/random.hpp"
#include "torml/schema.hpp"

namespace torml {

/// One classifier instance: a feature vector plus its multi-label set.
struct TraceSample {
  std::vector<double> features;
  LabelSet labels;
  std::string source_id;
};

struct Dataset {
  FeatureSchema schema;
  std::vector<TraceSample> samples;
  std::string name;

  int size() const { return static_cast<int>(samples.size()); }
  int feature_count() const { return schema.size(); }

  /// Values of one feature column across all samples.
  std::vector<double> column(int pos) const {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.features.at(pos));
    return out;
  }
};

/// Linear interpolation between closest ranks: rank h = (n-1)*p/100,
/// result = v[floor(h)] + frac(h) * (v[floor(h)+1] - v[floor(h)]) over the
/// sorted values.
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of empty list");
  if (!(p >= 0.0 && p <= 100.0))
    throw std::invalid_argument("percentile p outside [0,100]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p / 100.0;
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= values.size()) return values.back();
  const double frac = h - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

namespace detail {

inline void validate_header(const std::vector<std::string_view>& cells,
                            const FeatureSchema& schema) {
  const int want = schema.size() + 1;
  if (static_cast<int>(cells.size()) != want) {
    std::ostringstream os;
    os << "header has " << cells.size() << " columns, expected " << want
       << " (" << schema.size() << " features + labels)";
    throw std::runtime_error(os.str());
  }
  for (int i = 0; i < schema.size(); ++i) {
    if (cells[i] != schema.at(i).name) {
      std::ostringstream os;
      os << "header column " << i << " is '" << std::string(cells[i])
         << "', expected '" << schema.at(i).name << "'";
      throw std::runtime_error(os.str());
    }
  }
  if (cells.back() != "labels")
    throw std::runtime_error("last header column must be 'labels'");
}

}  // namespace detail

/// Loads a feature CSV against an explicit schema. Every parse problem is
/// reported with its 1-based data row number.
inline Dataset load_csv(const std::string& path, const FeatureSchema& schema) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw std::runtime_error("empty file: " + path);
  detail::validate_header(csv::split(lines[0], ','), schema);

  Dataset data;
  data.schema = schema;
  data.name = path;
  const int ncols = schema.size() + 1;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty() && li + 1 == lines.size()) break;  // trailing newline
    const int row = static_cast<int>(li);
    auto cells = csv::split(lines[li], ',');
    if (static_cast<int>(cells.size()) != ncols &&
        static_cast<int>(cells.size()) != ncols + 1) {
      std::ostringstream os;
      os << "row " << row << ": has " << cells.size() << " columns, expected "
         << ncols;
      throw std::runtime_error(os.str());
    }
    TraceSample s;
    s.features.reserve(schema.size());
    for (int c = 0; c < schema.size(); ++c)
      s.features.push_back(csv::parse_number(cells[c], row, c));
    try {
      s.labels = LabelSet::parse(cells[schema.size()]);
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "row " << row << ": " << e.what();
      throw std::runtime_error(os.str());
    }
    const int n = s.labels.count();
    if (n < 1 || n > 4) {
      std::ostringstream os;
      os << "row " << row << ": sample carries " << n
         << " labels, expected 1-4";
      throw std::runtime_error(os.str());
    }
    if (static_cast<int>(cells.size()) == ncols + 1)
      s.source_id = std::string(cells[ncols]);
    data.samples.push_back(std::move(s));
  }
  return data;
}

/// Loads a feature CSV, deriving the (possibly reduced) schema from the
/// header. Column names must be known feature_NNN names in ascending index
/// order, followed by `labels`.
inline Dataset load_csv(const std::string& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw std::runtime_error("empty file: " + path);
  auto cells = csv::split(lines[0], ',');
  if (cells.size() < 2 || cells.back() != "labels")
    throw std::runtime_error("header must end with a 'labels' column");
  const auto& full = default_schema();
  std::vector<int> positions;
  int prev = -1;
  for (std::size_t c = 0; c + 1 < cells.size(); ++c) {
    int pos = -1;
    for (int i = 0; i < full.size(); ++i)
      if (full.at(i).name == cells[c]) {
        pos = i;
        break;
      }
    if (pos < 0)
      throw std::runtime_error("unknown feature column: " +
                               std::string(cells[c]));
    if (pos <= prev)
      throw std::runtime_error("feature columns out of order at: " +
                               std::string(cells[c]));
    positions.push_back(pos);
    prev = pos;
  }
  return load_csv(path, full.reduced(positions));
}

inline std::string to_csv(const Dataset& data, bool with_source_id = false) {
  std::string out;
  for (int i = 0; i < data.schema.size(); ++i) {
    out += data.schema.at(i).name;
    out += ',';
  }
  out += "labels";
  if (with_source_id) out += ",source_id";
  out += '\n';
  for (const auto& s : data.samples) {
    for (double v : s.features) {
      out += csv::format_number(v);
      out += ',';
    }
    out += s.labels.to_string();
    if (with_source_id) {
      out += ',';
      out += s.source_id;
    }
    out += '\n';
  }
  return out;
}

inline void write_csv(const Dataset& data, const std::string& path,
                      bool with_source_id = false) {
  csv::write_file(path, to_csv(data, with_source_id));
}

/// Deterministic shuffle by seed, then prefix/suffix split.
/// Train size = floor(fraction * N).
inline std::pair<Dataset, Dataset> split(const Dataset& data,
                                         double train_fraction,
                                         std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train fraction must be in (0,1)");
  if (data.size() < 2)
    throw std::invalid_argument("need at least 2 samples to split");
  std::vector<int> order(data.samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, /*stream=*/1));
  rng.shuffle(order);
  const int train_n =
      static_cast<int>(std::floor(train_fraction * data.size()));
  Dataset train{data.schema, {}, data.name + ":train"};
  Dataset test{data.schema, {}, data.name + ":test"};
  for (int i = 0; i < data.size(); ++i) {
    (i < train_n ? train : test).samples.push_back(data.samples[order[i]]);
  }
  return {std::move(train), std::move(test)};
}

/// Removes every feature whose value is zero for all samples. Returns the
/// reduced dataset and the removed original indices, ascending.
inline std::pair<Dataset, std::vector<int>> drop_zero_variance(
    const Dataset& data) {
  if (data.samples.empty())
    throw std::invalid_argument("drop_zero_variance on empty dataset");
  std::vector<int> keep_positions, removed;
  for (int p = 0; p < data.feature_count(); ++p) {
    bool all_zero = true;
    for (const auto& s : data.samples)
      if (s.features[p] != 0.0) {
        all_zero = false;
        break;
      }
    if (all_zero)
      removed.push_back(data.schema.at(p).index);
    else
      keep_positions.push_back(p);
  }
  Dataset out;
  out.schema = data.schema.reduced(keep_positions);
  out.name = data.name;
  out.samples.reserve(data.samples.size());
  for (const auto& s : data.samples) {
    TraceSample r;
    r.labels = s.labels;
    r.source_id = s.source_id;
    r.features.reserve(keep_positions.size());
    for (int p : keep_positions) r.features.push_back(s.features[p]);
    out.samples.push_back(std::move(r));
  }
  return {std::move(out), std::move(removed)};
}

/// Projects a dataset onto a subset of feature positions (by original
/// index), e.g. to apply a model's stored reduction to fresh data.
inline Dataset project_to_indices(const Dataset& data,
                                  const std::vector<int>& original_indices) {
  std::vector<int> positions;
  positions.reserve(original_indices.size());
  for (int idx : original_indices) {
    int p = data.schema.position_of(idx);
    if (p < 0)
      throw std::runtime_error("dataset lacks feature index " +
                               std::to_string(idx));
    positions.push_back(p);
  }
  Dataset out;
  out.schema = data.schema.reduced(positions);
  out.name = data.name;
  for (const auto& s : data.samples) {
    TraceSample r;
    r.labels = s.labels;
    r.source_id = s.source_id;
    r.features.reserve(positions.size());
    for (int p : positions) r.features.push_back(s.features[p]);
    out.samples.push_back(std::move(r));
  }
  return out;
}

inline LabelGraph cooccurrence_graph(const Dataset& data) {
  if (data.samples.empty())
    throw std::invalid_argument("cooccurrence_graph on empty dataset");
  LabelGraph g;
  for (const auto& s : data.samples)
    for (int i = 0; i < kNumLabels; ++i) {
      if (!s.labels.test(i)) continue;
      for (int j = i + 1; j < kNumLabels; ++j)
        if (s.labels.test(j)) g.add_edge(i, j);
    }
  return g;
}

inline std::array<int, kNumLabels> class_distribution(const Dataset& data) {
  std::array<int, kNumLabels> counts{};
  for (const auto& s : data.samples)
    for (int i = 0; i < kNumLabels; ++i)
      if (s.labels.test(i)) ++counts[i];
  return counts;
}

inline int distinct_combinations(const Dataset& data) {
  std::set<std::uint16_t> combos;
  for (const auto& s : data.samples) combos.insert(s.labels.bits());
  return static_cast<int>(combos.size());
}

/// Projects every sample's labels onto `keep`; samples whose projection is
/// empty are dropped.
inline Dataset filter_to_labels(const Dataset& data, LabelSet keep) {
  if (keep.empty()) throw std::invalid_argument("keep set must be non-empty");
  Dataset out{data.schema, {}, data.name};
  for (const auto& s : data.samples) {
    LabelSet projected = s.labels.intersect(keep);
    if (projected.empty()) continue;
    TraceSample r = s;
    r.labels = projected;
    out.samples.push_back(std::move(r));
  }
  return out;
}

}  // namespace torml
