#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace torml {

inline constexpr int kNumFeatures = 215;
inline constexpr int kNumConnectionFeatures = 175;  // indices 0-174
inline constexpr int kNumHostFeatures = 40;         // indices 175-214

enum class FeatureGroup { Connection, Host };

struct FeatureDescriptor {
  int index = 0;  // index in the full 215-wide layout
  std::string name;
  FeatureGroup group = FeatureGroup::Connection;
  std::string description;
};

/// Ordered feature descriptors. The default schema has all 215 entries;
/// reduced schemas (after constant-feature removal) keep the original
/// index-bearing names so feature identity survives reduction.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<FeatureDescriptor> entries)
      : entries_(std::move(entries)) {}

  int size() const { return static_cast<int>(entries_.size()); }
  const FeatureDescriptor& at(int pos) const { return entries_.at(pos); }
  const std::vector<FeatureDescriptor>& entries() const { return entries_; }

  /// Column position of the feature with the given original index, or -1.
  int position_of(int original_index) const {
    for (int p = 0; p < size(); ++p)
      if (entries_[p].index == original_index) return p;
    return -1;
  }

  /// Schema keeping only the listed positions (ascending).
  FeatureSchema reduced(const std::vector<int>& keep_positions) const {
    std::vector<FeatureDescriptor> kept;
    kept.reserve(keep_positions.size());
    for (int p : keep_positions) kept.push_back(entries_.at(p));
    return FeatureSchema(std::move(kept));
  }

  /// FNV-1a over the ordered column names; identifies the feature layout
  /// a model was trained against.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& e : entries_) {
      for (char c : e.name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
      }
      h ^= '\n';
      h *= 1099511628211ull;
    }
    return h;
  }

  bool operator==(const FeatureSchema& o) const {
    if (size() != o.size()) return false;
    for (int p = 0; p < size(); ++p)
      if (entries_[p].name != o.entries_[p].name) return false;
    return true;
  }

 private:
  std::vector<FeatureDescriptor> entries_;
};

inline std::string feature_column_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "feature_%03d", index);
  return buf;
}

namespace detail {

inline std::string connection_feature_description(int i) {
  static constexpr const char* kStatNames[4] = {"max", "mean", "std",
                                                "p75"};
  static constexpr const char* kDirNames[3] = {"total", "outgoing",
                                               "incoming"};
  static constexpr const char* kPctNames[4] = {"p25", "p50", "p75", "p100"};
  if (i < 12)
    return std::string(kStatNames[i % 4]) + " of " + kDirNames[i / 4] +
           " inter-arrival times";
  if (i < 24)
    return std::string(kPctNames[(i - 12) % 4]) + " of " +
           kDirNames[(i - 12) / 4] + " packet times";
  if (i == 24) return "total packet count";
  if (i == 25) return "outgoing packet count";
  if (i == 26) return "incoming packet count";
  if (i == 27) return "outgoing packets in first 30";
  if (i == 28) return "incoming packets in first 30";
  if (i == 29) return "outgoing packets in last 30";
  if (i == 30) return "incoming packets in last 30";
  if (i == 31) return "std of outgoing concentration per 20-packet chunk";
  if (i == 32) return "mean of outgoing concentration per 20-packet chunk";
  if (i == 33) return "mean packets per second";
  if (i == 34) return "std of packets per second";
  if (i == 35) return "mean outgoing packet ordering";
  if (i == 36) return "mean incoming packet ordering";
  if (i == 37) return "std of outgoing packet ordering";
  if (i == 38) return "std of incoming packet ordering";
  if (i == 39) return "median of outgoing concentration per 20-packet chunk";
  if (i == 40) return "median packets per second";
  if (i == 41) return "min packets per second";
  if (i == 42) return "max packets per second";
  if (i == 43) return "max of outgoing concentration per 20-packet chunk";
  if (i == 44) return "percentage of incoming packets";
  if (i == 45) return "percentage of outgoing packets";
  if (i < 117)
    return "alternative concentration, span " + std::to_string(i - 46);
  if (i < 138)
    return "alternative packets per second, second " + std::to_string(i - 117);
  if (i == 138) return "sum of alternative concentration features";
  if (i == 139) return "sum of alternative packets-per-second features";
  if (i == 140) return "sum of inter-arrival time features";
  if (i == 141) return "sum of packet time percentile features";
  if (i == 142) return "sum of packet count features";
  return "zero padding";
}

inline std::string host_feature_description(int i) {
  static constexpr const char* kAgg[3] = {"mean", "median", "mode"};
  switch (i) {
    case 175: return "number of Tor connections";
    case 176: return "number of failed/rejected Tor connection attempts (S0/REJ)";
    case 177: return "rate of Tor connections per second";
    case 178: return "rate of failed connection attempts per second";
    case 179: return "number of unique destination ports";
    case 180: return "most used destination port";
    case 181: return "number of non-standard destination ports";
    case 182: return "most frequent non-standard destination port";
    case 183: return "average duration of Tor connections (seconds)";
    case 184: return "smallest duration Tor connection (seconds)";
    case 185: return "max duration Tor connection (seconds)";
    case 186: return "number of short-duration Tor connections (under 1 minute)";
    case 187: return "average time gap between Tor connection starts";
    case 206: return "total DNS queries with NXDOMAIN";
    case 207: return "total DNS queries with REFUSED";
    case 208: return "total DNS queries with SERVFAIL";
    case 209: return "total onion domain accesses";
    case 210: return "total unique onion domains accessed";
    case 211: return "total rejected onion domain queries";
    case 212: return "total onion domains accessed";
    case 213: return "total links with consensus seen";
    case 214: return "total URLs with tor keyword";
    default: break;
  }
  if (i >= 188 && i <= 190)
    return std::string(kAgg[i - 188]) + " of total packets per Tor connection";
  if (i >= 191 && i <= 193)
    return std::string(kAgg[i - 191]) + " of total data per Tor connection";
  if (i >= 194 && i <= 196)
    return std::string(kAgg[i - 194]) + " of data sent per Tor connection";
  if (i >= 197 && i <= 199)
    return std::string(kAgg[i - 197]) + " of packets sent per Tor connection";
  if (i >= 200 && i <= 202)
    return std::string(kAgg[i - 200]) + " of packets received per Tor connection";
  if (i >= 203 && i <= 205)
    return std::string(kAgg[i - 203]) + " of data received per Tor connection";
  throw std::logic_error("bad host feature index");
}

}  // namespace detail

/// The full 215-feature layout: 0-174 connection-level, 175-214 host-level.
inline const FeatureSchema& default_schema() {
  static const FeatureSchema schema = [] {
    std::vector<FeatureDescriptor> entries;
    entries.reserve(kNumFeatures);
    for (int i = 0; i < kNumFeatures; ++i) {
      FeatureDescriptor d;
      d.index = i;
      d.name = feature_column_name(i);
      d.group = i < kNumConnectionFeatures ? FeatureGroup::Connection
                                           : FeatureGroup::Host;
      d.description = i < kNumConnectionFeatures
                          ? detail::connection_feature_description(i)
                          : detail::host_feature_description(i);
      entries.push_back(std::move(d));
    }
    return FeatureSchema(std::move(entries));
  }();
  return schema;
}

}  // namespace torml
