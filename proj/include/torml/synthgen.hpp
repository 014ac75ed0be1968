#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "torml/csv.hpp"
#include "torml/dataset.hpp"
#include "torml/labels.hpp"
#include "torml/random.hpp"
#include "torml/schema.hpp"

namespace torml {

/// Class-conditional normal for one feature. `grid` > 0 snaps drawn values
/// to multiples of the grid, so value-token models see repeated values
/// across samples; 0 leaves values continuous.
struct FeatureSignal {
  int index = 0;  // original feature index
  double mean = 0.0;
  double std = 0.0;
  double grid = 0.0;
};

/// One label combination and how to draw its samples. Features not listed
/// as signals are drawn from the background normal.
struct ClassProfile {
  LabelSet combo;
  int count = 0;
  std::vector<FeatureSignal> signals;
  double background_mean = 0.0;
  double background_std = 0.0;
  double background_grid = 0.0;
};

struct GeneratorConfig {
  std::vector<ClassProfile> profiles;
  std::uint64_t seed = 0;
  FeatureSchema schema;
  bool clamp_nonnegative = true;

  void validate() const {
    if (profiles.empty())
      throw std::invalid_argument("generator config has no profiles");
    std::set<std::uint16_t> combos;
    for (const auto& p : profiles) {
      if (p.count <= 0)
        throw std::invalid_argument("profile count must be positive");
      if (!combos.insert(p.combo.bits()).second)
        throw std::invalid_argument("duplicate combo: " +
                                    p.combo.to_string());
      for (const auto& s : p.signals) {
        if (s.std < 0.0)
          throw std::invalid_argument("signal std must be >= 0");
        if (schema.position_of(s.index) < 0)
          throw std::invalid_argument("signal index " +
                                      std::to_string(s.index) +
                                      " not in schema");
      }
      if (p.background_std < 0.0)
        throw std::invalid_argument("background std must be >= 0");
    }
  }
};

namespace detail {

inline double snap(double v, double grid) {
  if (grid <= 0.0) return v;
  return std::round(v / grid) * grid;
}

}  // namespace detail

/// Draws `count` samples per profile. Deterministic: each profile uses a
/// substream derived from (seed, profile index).
inline Dataset generate(const GeneratorConfig& config) {
  config.validate();
  Dataset data;
  data.schema = config.schema;
  data.name = "synthetic";
  const int nf = config.schema.size();
  for (std::size_t pi = 0; pi < config.profiles.size(); ++pi) {
    const auto& profile = config.profiles[pi];
    // Signal lookup by column position.
    std::vector<const FeatureSignal*> by_pos(nf, nullptr);
    for (const auto& s : profile.signals)
      by_pos[config.schema.position_of(s.index)] = &s;
    Rng rng(derive_seed(config.seed, pi));
    for (int k = 0; k < profile.count; ++k) {
      TraceSample sample;
      sample.labels = profile.combo;
      sample.features.resize(nf);
      for (int pos = 0; pos < nf; ++pos) {
        const FeatureSignal* sig = by_pos[pos];
        const double mean = sig ? sig->mean : profile.background_mean;
        const double std = sig ? sig->std : profile.background_std;
        const double grid = sig ? sig->grid : profile.background_grid;
        double v = mean + std * rng.gaussian();
        if (config.clamp_nonnegative && v < 0.0) v = 0.0;
        sample.features[pos] = detail::snap(v, grid);
      }
      std::ostringstream id;
      id << "synth-" << pi << "-" << k;
      sample.source_id = id.str();
      data.samples.push_back(std::move(sample));
    }
  }
  return data;
}

namespace d5 {

// Indices that are zero for every sample in the mirrored corpus: the padded
// connection features plus the host counters this profile leaves unused.
inline std::vector<int> zero_indices() {
  std::vector<int> z;
  for (int i = 143; i <= 174; ++i) z.push_back(i);
  z.push_back(176);
  z.push_back(178);
  for (int i = 206; i <= 214; ++i) z.push_back(i);
  return z;
}

struct LabelSignalTable {
  Label label;
  int frequency;  // class total, used as merge priority (rarer wins)
  std::vector<FeatureSignal> signals;
};

/// Per-label planted signals, two kinds:
///
///  * Level signals: mean shifts with per-class spreads. Duration features
///    183/185 separate Ransomware (long, high-variance connections) from
///    Downloader (short, tight); 202/196/200 carry Grayware and 187/194/199
///    carry Miner. Any threshold model can pick these up.
///
///  * Lattice signals: same mean and spread as the background noise but
///    snapped to a different value grid. Axis-aligned splits see nothing
///    (the marginals coincide); a value-token model sees class-exclusive
///    vocabulary entries. Rare classes are built this way, mirroring how
///    the token dictionary carries classes the forests miss; Ransomware
///    additionally gets a weak mid-level aura as a secondary cue.
inline std::vector<FeatureSignal> spread(std::initializer_list<int> indices,
                                         double mean, double std,
                                         double grid) {
  std::vector<FeatureSignal> out;
  for (int i : indices) out.push_back({i, mean, std, grid});
  return out;
}

inline const std::vector<LabelSignalTable>& label_signals() {
  static const std::vector<LabelSignalTable> table = [] {
    std::vector<LabelSignalTable> t;
    t.push_back({Label::Downloader, 1186,
                 {{183, 7.58, 1.0, 0.1}, {185, 13.63, 1.6, 0.1}}});
    t.push_back({Label::Grayware, 1263,
                 {{202, 55.0, 6.0, 1.0},
                  {196, 480.0, 40.0, 10.0},
                  {200, 48.0, 6.0, 1.0}}});
    LabelSignalTable ransomware{Label::Ransomware, 365,
                                {{183, 21.14, 11.0, 0.1},
                                 {185, 48.01, 26.0, 0.1},
                                 {199, 150.0, 60.0, 0.5},
                                 {17, 9.0, 4.5, 0.01},
                                 {16, 5.0, 2.8, 0.01}}};
    for (const auto& s : spread({190, 191, 197, 203, 181, 175, 10, 11, 30, 33},
                                1.45, 0.45, 0.25))
      ransomware.signals.push_back(s);
    t.push_back(std::move(ransomware));
    t.push_back({Label::Miner, 384,
                 {{187, 3.5, 0.6, 0.1},
                  {194, 900.0, 80.0, 20.0},
                  {199, 64.0, 6.0, 0.5}}});
    t.push_back({Label::Backdoor, 59,
                 spread({201, 189, 35, 36, 0, 4}, 1.0, 0.25, 0.07)});
    t.push_back({Label::Keylogger, 15,
                 spread({198, 205, 40, 37, 1, 12}, 1.0, 0.25, 0.07)});
    t.push_back({Label::Spyware, 45,
                 spread({195, 192, 41, 34, 2, 13}, 1.0, 0.25, 0.07)});
    t.push_back({Label::Virus, 59,
                 spread({193, 186, 204, 39, 3, 14}, 1.0, 0.25, 0.07)});
    t.push_back(
        {Label::Worm, 75, spread({184, 42, 38, 5, 6, 15}, 1.0, 0.25, 0.07)});
    t.push_back({Label::Unknown, 179,
                 spread({177, 179, 7, 8, 9, 18}, 1.0, 0.25, 0.07)});
    return t;
  }();
  return table;
}

struct ComboCount {
  LabelSet combo;
  int count;
};

/// Fixed allocation of each class total across its co-occurring
/// combinations: 22 distinct combinations, Unknown isolated, per-label
/// column sums matching the D5 class distribution, 2,027 samples in total.
inline std::vector<ComboCount> combo_table() {
  using enum Label;
  return {
      {LabelSet::of({Downloader, Grayware}), 677},
      {LabelSet::of({Downloader}), 139},
      {LabelSet::of({Grayware}), 55},
      {LabelSet::of({Ransomware}), 130},
      {LabelSet::of({Ransomware, Downloader}), 100},
      {LabelSet::of({Ransomware, Grayware, Downloader}), 100},
      {LabelSet::of({Ransomware, Grayware}), 35},
      {LabelSet::of({Miner}), 69},
      {LabelSet::of({Miner, Grayware}), 140},
      {LabelSet::of({Miner, Downloader, Grayware}), 150},
      {LabelSet::of({Virus}), 39},
      {LabelSet::of({Virus, Grayware}), 20},
      {LabelSet::of({Spyware}), 20},
      {LabelSet::of({Spyware, Grayware}), 25},
      {LabelSet::of({Backdoor}), 39},
      {LabelSet::of({Backdoor, Downloader}), 20},
      {LabelSet::of({Keylogger}), 9},
      {LabelSet::of({Keylogger, Grayware}), 6},
      {LabelSet::of({Worm}), 20},
      {LabelSet::of({Worm, Grayware}), 30},
      {LabelSet::of({Worm, Grayware, Miner}), 25},
      {LabelSet::of({Unknown}), 179},
  };
}

/// Merges the member labels' signal lists for one combination. When two
/// labels plant the same feature the rarer class wins, so e.g. a
/// Ransomware+Downloader trace keeps Ransomware's connection durations.
inline std::vector<FeatureSignal> merged_signals(LabelSet combo) {
  std::map<int, std::pair<int, FeatureSignal>> chosen;  // index -> (freq, sig)
  for (const auto& row : label_signals()) {
    if (!combo.test(row.label)) continue;
    for (const auto& sig : row.signals) {
      auto it = chosen.find(sig.index);
      if (it == chosen.end() || row.frequency < it->second.first)
        chosen[sig.index] = {row.frequency, sig};
    }
  }
  std::vector<FeatureSignal> out;
  out.reserve(chosen.size());
  for (const auto& [idx, entry] : chosen) out.push_back(entry.second);
  return out;
}

}  // namespace d5

/// Generator mirroring the D5 corpus: class totals, 22 label combinations
/// with Unknown isolated, and the documented feature-class relationships.
inline GeneratorConfig default_d5_profile(std::uint64_t seed = 1) {
  GeneratorConfig config;
  config.seed = seed;
  config.schema = default_schema();
  config.clamp_nonnegative = true;
  const auto zeros = d5::zero_indices();
  for (const auto& cc : d5::combo_table()) {
    ClassProfile p;
    p.combo = cc.combo;
    p.count = cc.count;
    p.background_mean = 1.0;
    p.background_std = 0.25;
    p.background_grid = 0.05;
    p.signals = d5::merged_signals(cc.combo);
    for (int z : zeros) p.signals.push_back({z, 0.0, 0.0, 0.0});
    config.profiles.push_back(std::move(p));
  }
  return config;
}

/// Serializes a generator config in simple `key = value` form.
inline std::string config_to_text(const GeneratorConfig& config) {
  std::string out;
  out += "seed = " + std::to_string(config.seed) + "\n";
  out += std::string("clamp_nonnegative = ") +
         (config.clamp_nonnegative ? "true" : "false") + "\n";
  for (std::size_t i = 0; i < config.profiles.size(); ++i) {
    const auto& p = config.profiles[i];
    const std::string prefix = "profile." + std::to_string(i) + ".";
    out += prefix + "combo = " + p.combo.to_string() + "\n";
    out += prefix + "count = " + std::to_string(p.count) + "\n";
    out += prefix + "background = " + csv::format_number(p.background_mean) +
           "," + csv::format_number(p.background_std) + "," +
           csv::format_number(p.background_grid) + "\n";
    for (const auto& s : p.signals)
      out += prefix + "signal." + std::to_string(s.index) + " = " +
             csv::format_number(s.mean) + "," + csv::format_number(s.std) +
             "," + csv::format_number(s.grid) + "\n";
  }
  return out;
}

/// Parses the `key = value` generator config format. The schema is always
/// the full default layout.
inline GeneratorConfig config_from_text(const std::string& text) {
  GeneratorConfig config;
  config.schema = default_schema();
  std::map<int, ClassProfile> profiles;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const char* ws = " \t";
    auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return std::string();
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key == "seed") {
      config.seed = std::stoull(value);
    } else if (key == "clamp_nonnegative") {
      config.clamp_nonnegative = (value == "true" || value == "1");
    } else if (key.rfind("profile.", 0) == 0) {
      std::string rest = key.substr(8);
      auto dot = rest.find('.');
      if (dot == std::string::npos)
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": bad profile key");
      const int pi = std::stoi(rest.substr(0, dot));
      std::string field = rest.substr(dot + 1);
      ClassProfile& p = profiles[pi];
      if (field == "combo") {
        p.combo = LabelSet::parse(value);
      } else if (field == "count") {
        p.count = std::stoi(value);
      } else if (field == "background") {
        auto parts = csv::split(value, ',');
        if (parts.size() < 2)
          throw std::runtime_error("config line " + std::to_string(lineno) +
                                   ": background needs mean,std[,grid]");
        p.background_mean = csv::parse_number(parts[0], lineno, 0);
        p.background_std = csv::parse_number(parts[1], lineno, 1);
        if (parts.size() > 2)
          p.background_grid = csv::parse_number(parts[2], lineno, 2);
      } else if (field.rfind("signal.", 0) == 0) {
        FeatureSignal s;
        s.index = std::stoi(field.substr(7));
        auto parts = csv::split(value, ',');
        if (parts.size() < 2)
          throw std::runtime_error("config line " + std::to_string(lineno) +
                                   ": signal needs mean,std[,grid]");
        s.mean = csv::parse_number(parts[0], lineno, 0);
        s.std = csv::parse_number(parts[1], lineno, 1);
        if (parts.size() > 2) s.grid = csv::parse_number(parts[2], lineno, 2);
        p.signals.push_back(s);
      } else {
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": unknown profile field '" + field + "'");
      }
    } else {
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": unknown key '" + key + "'");
    }
  }
  for (auto& [pi, p] : profiles) config.profiles.push_back(std::move(p));
  config.validate();
  return config;
}

}  // namespace torml
