#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "torml/csv.hpp"
#include "torml/labels.hpp"

namespace torml {

/// Aligned truth/prediction matrices, one row per instance.
struct PredictionBatch {
  std::vector<std::vector<bool>> y_true;
  std::vector<std::vector<bool>> y_pred;

  int rows() const { return static_cast<int>(y_true.size()); }
  int labels() const { return y_true.empty() ? 0 : static_cast<int>(y_true[0].size()); }

  void validate() const {
    if (y_true.empty() || y_true.size() != y_pred.size())
      throw std::invalid_argument("prediction batch shape mismatch");
    const std::size_t width = y_true[0].size();
    for (std::size_t r = 0; r < y_true.size(); ++r)
      if (y_true[r].size() != width || y_pred[r].size() != width)
        throw std::invalid_argument("ragged prediction batch");
  }
};

/// A ratio metric. `degenerate` marks the 0/0 convention (value forced to 0),
/// e.g. precision of a class that was never predicted.
struct MetricValue {
  double value = 0.0;
  bool degenerate = false;
};

namespace detail {

struct Tally {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Tally tally(const PredictionBatch& b) {
  b.validate();
  Tally t;
  for (int r = 0; r < b.rows(); ++r)
    for (int l = 0; l < b.labels(); ++l) {
      const bool a = b.y_true[r][l], p = b.y_pred[r][l];
      if (p && a) ++t.tp;
      else if (p && !a) ++t.fp;
      else if (!p && a) ++t.fn;
      else ++t.tn;
    }
  return t;
}

inline MetricValue ratio(long long num, long long den) {
  if (den == 0) return {0.0, true};
  return {static_cast<double>(num) / static_cast<double>(den), false};
}

}  // namespace detail

inline MetricValue micro_precision(const PredictionBatch& b) {
  auto t = detail::tally(b);
  return detail::ratio(t.tp, t.tp + t.fp);
}

inline MetricValue micro_recall(const PredictionBatch& b) {
  auto t = detail::tally(b);
  return detail::ratio(t.tp, t.tp + t.fn);
}

/// Fraction of label bits predicted incorrectly.
inline double hamming_loss(const PredictionBatch& b) {
  auto t = detail::tally(b);
  const long long total = t.tp + t.fp + t.fn + t.tn;
  return static_cast<double>(t.fp + t.fn) / static_cast<double>(total);
}

/// (TP + TN) / all bits, computed as the exact complement of hamming loss.
inline double elementwise_accuracy(const PredictionBatch& b) {
  return 1.0 - hamming_loss(b);
}

/// Fraction of rows whose whole label set is predicted exactly.
inline double subset_accuracy(const PredictionBatch& b) {
  b.validate();
  int exact = 0;
  for (int r = 0; r < b.rows(); ++r)
    if (b.y_true[r] == b.y_pred[r]) ++exact;
  return static_cast<double>(exact) / static_cast<double>(b.rows());
}

struct ClasswisePR {
  MetricValue precision;
  MetricValue recall;
};

inline std::vector<ClasswisePR> classwise_pr(const PredictionBatch& b) {
  b.validate();
  std::vector<ClasswisePR> out(b.labels());
  for (int l = 0; l < b.labels(); ++l) {
    long long tp = 0, fp = 0, fn = 0;
    for (int r = 0; r < b.rows(); ++r) {
      const bool a = b.y_true[r][l], p = b.y_pred[r][l];
      if (p && a) ++tp;
      else if (p && !a) ++fp;
      else if (!p && a) ++fn;
    }
    out[l].precision = detail::ratio(tp, tp + fp);
    out[l].recall = detail::ratio(tp, tp + fn);
  }
  return out;
}

struct EvaluationSummary {
  MetricValue map;  // micro-average precision
  MetricValue mar;  // micro-average recall
  double hamming = 0.0;
  double subset = 0.0;
  double elementwise = 0.0;
};

inline EvaluationSummary evaluate_batch(const PredictionBatch& b) {
  EvaluationSummary s;
  s.map = micro_precision(b);
  s.mar = micro_recall(b);
  s.hamming = hamming_loss(b);
  s.subset = subset_accuracy(b);
  s.elementwise = elementwise_accuracy(b);
  return s;
}

/// One row shaped like the comparison table: model, MAP, MAR, HL, AC
/// (subset accuracy) plus element-wise accuracy last.
inline std::string summary_csv(const std::string& model_name,
                               const EvaluationSummary& s) {
  std::string out =
      "model,micro_precision,micro_recall,hamming_loss,subset_accuracy,"
      "elementwise_accuracy\n";
  out += model_name;
  out += ',' + csv::format_number(s.map.value);
  out += ',' + csv::format_number(s.mar.value);
  out += ',' + csv::format_number(s.hamming);
  out += ',' + csv::format_number(s.subset);
  out += ',' + csv::format_number(s.elementwise);
  out += '\n';
  return out;
}

/// Class-wise precision/recall table; degenerate 0/0 cells are flagged.
inline std::string classwise_csv(const std::vector<ClasswisePR>& rows) {
  std::string out = "class,precision,recall,precision_degenerate,recall_degenerate\n";
  for (std::size_t l = 0; l < rows.size(); ++l) {
    out += l < kLabelNames.size() ? std::string(kLabelNames[l])
                                  : "label_" + std::to_string(l);
    out += ',' + csv::format_number(rows[l].precision.value);
    out += ',' + csv::format_number(rows[l].recall.value);
    out += rows[l].precision.degenerate ? ",1" : ",0";
    out += rows[l].recall.degenerate ? ",1" : ",0";
    out += '\n';
  }
  return out;
}

}  // namespace torml
