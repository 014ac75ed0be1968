#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace torml {

inline constexpr int kNumLabels = 10;

/// Canonical label order. All bitsets, reports and model files index labels
/// in this order.
inline constexpr std::array<std::string_view, kNumLabels> kLabelNames = {
    "Backdoor", "Downloader", "Grayware", "Keylogger", "Miner",
    "Ransomware", "Spyware", "Unknown", "Virus", "Worm"};

enum class Label : int {
  Backdoor = 0,
  Downloader = 1,
  Grayware = 2,
  Keylogger = 3,
  Miner = 4,
  Ransomware = 5,
  Spyware = 6,
  Unknown = 7,
  Virus = 8,
  Worm = 9,
};

inline int label_index(std::string_view name) {
  for (int i = 0; i < kNumLabels; ++i)
    if (kLabelNames[i] == name) return i;
  throw std::invalid_argument("unknown label name: " + std::string(name));
}

/// Fixed 10-slot boolean set over the canonical label order.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::uint16_t bits) : bits_(bits & kMask) {}

  static LabelSet of(std::initializer_list<Label> labels) {
    LabelSet s;
    for (Label l : labels) s.set(static_cast<int>(l));
    return s;
  }

  bool test(int i) const { return (bits_ >> i) & 1u; }
  bool test(Label l) const { return test(static_cast<int>(l)); }
  void set(int i, bool v = true) {
    if (v)
      bits_ |= std::uint16_t(1u << i);
    else
      bits_ &= std::uint16_t(~(1u << i));
  }
  int count() const { return std::popcount(bits_); }
  bool empty() const { return bits_ == 0; }
  std::uint16_t bits() const { return bits_; }

  LabelSet intersect(LabelSet other) const {
    return LabelSet(std::uint16_t(bits_ & other.bits_));
  }

  bool operator==(const LabelSet&) const = default;
  bool operator<(const LabelSet& o) const { return bits_ < o.bits_; }

  /// Parses a `|`-separated list of canonical names, e.g.
  /// "Downloader|Grayware". Empty input or unknown names throw.
  static LabelSet parse(std::string_view text) {
    if (text.empty()) throw std::invalid_argument("empty label cell");
    LabelSet s;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t bar = text.find('|', pos);
      std::string_view name = text.substr(
          pos, bar == std::string_view::npos ? std::string_view::npos
                                             : bar - pos);
      s.set(label_index(name));
      if (bar == std::string_view::npos) break;
      pos = bar + 1;
    }
    return s;
  }

  std::string to_string() const {
    std::string out;
    for (int i = 0; i < kNumLabels; ++i) {
      if (!test(i)) continue;
      if (!out.empty()) out += '|';
      out += kLabelNames[i];
    }
    return out;
  }

 private:
  static constexpr std::uint16_t kMask = (1u << kNumLabels) - 1;
  std::uint16_t bits_ = 0;
};

/// Symmetric co-occurrence adjacency over the 10 labels, diagonal false.
struct LabelGraph {
  std::array<std::array<bool, kNumLabels>, kNumLabels> adjacency{};

  bool edge(int i, int j) const { return adjacency[i][j]; }
  void add_edge(int i, int j) {
    if (i == j) return;
    adjacency[i][j] = true;
    adjacency[j][i] = true;
  }
  int edge_count() const {
    int n = 0;
    for (int i = 0; i < kNumLabels; ++i)
      for (int j = i + 1; j < kNumLabels; ++j)
        if (adjacency[i][j]) ++n;
    return n;
  }
  bool isolated(int i) const {
    for (int j = 0; j < kNumLabels; ++j)
      if (adjacency[i][j]) return false;
    return true;
  }
};

}  // namespace torml
