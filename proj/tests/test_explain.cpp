#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "torml/baselines.hpp"
#include "torml/explain.hpp"
#include "torml/synthgen.hpp"

using namespace torml;

namespace {

// A fixed additive "model": p(label 0) = clamp(w . x + c). Lets us compare
// against closed forms.
class LinearStub : public MultiLabelModel {
 public:
  LinearStub(std::vector<double> w, double c) : w_(std::move(w)), c_(c) {}
  std::string kind() const override { return "stub"; }
  std::uint64_t schema_hash() const override { return 0; }
  std::vector<double> predict_proba(
      std::span<const double> x) const override {
    double s = c_;
    for (std::size_t i = 0; i < w_.size(); ++i) s += w_[i] * x[i];
    std::vector<double> p(kNumLabels, 0.0);
    p[0] = std::clamp(s, 0.0, 1.0);
    return p;
  }

 private:
  std::vector<double> w_;
  double c_;
};

BackgroundSet zero_background(int width, int rows = 3) {
  BackgroundSet bg;
  for (int r = 0; r < rows; ++r)
    bg.rows.push_back(std::vector<double>(width, 0.0));
  return bg;
}

// Independent oracle: Shapley values by full permutation enumeration.
std::vector<double> permutation_oracle(const MultiLabelModel& model,
                                       std::span<const double> sample,
                                       int label, const BackgroundSet& bg,
                                       const std::vector<int>& positions) {
  const int n = int(positions.size());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> phi(n, 0.0);
  long count = 0;
  do {
    std::vector<int> coalition;
    double prev = coalition_value(model, sample, coalition, label, bg, positions);
    for (int k = 0; k < n; ++k) {
      coalition.push_back(positions[perm[k]]);
      const double cur =
          coalition_value(model, sample, coalition, label, bg, positions);
      phi[perm[k]] += cur - prev;
      prev = cur;
    }
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (double& v : phi) v /= double(count);
  return phi;
}

Dataset small_planted(int per_combo, std::uint64_t seed) {
  GeneratorConfig config;
  config.seed = seed;
  config.schema = default_schema().reduced({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto add = [&](LabelSet combo, std::vector<FeatureSignal> sig) {
    ClassProfile p;
    p.combo = combo;
    p.count = per_combo;
    p.background_mean = 0.5;
    p.background_std = 0.4;
    p.signals = std::move(sig);
    config.profiles.push_back(p);
  };
  add(LabelSet::of({Label::Downloader}), {{2, 4.0, 0.5, 0}});
  add(LabelSet::of({Label::Ransomware}), {{5, 4.0, 0.5, 0}});
  return generate(config);
}

}  // namespace

TEST_CASE("coalition value endpoints") {
  LinearStub model({0.2, 0.3, 0.1}, 0.05);
  std::vector<double> sample = {1.0, 1.0, 1.0};
  auto bg = zero_background(3);
  auto positions = all_positions(3);

  CHECK(coalition_value(model, sample, {0, 1, 2}, 0, bg, positions) ==
        Catch::Approx(0.65));
  CHECK(coalition_value(model, sample, {}, 0, bg, positions) ==
        Catch::Approx(0.05));
  // Single-feature model: the coalition with that feature pins the output.
  LinearStub single({0.0, 0.7, 0.0}, 0.1);
  CHECK(coalition_value(single, sample, {1}, 0, bg, positions) ==
        Catch::Approx(0.8));
}

TEST_CASE("exact shapley on an additive model with zero background") {
  // f(x) = x0 + 2*x1 (feature 2 unused), all weights inside the clamp.
  LinearStub model({0.1, 0.2, 0.0}, 0.0);
  std::vector<double> sample = {1.0, 2.0, 3.0};
  auto bg = zero_background(3);
  auto a = exact_shapley(model, sample, 0, bg, all_positions(3));
  CHECK(a.phi[0] == Catch::Approx(0.1).margin(1e-12));
  CHECK(a.phi[1] == Catch::Approx(0.4).margin(1e-12));
  CHECK(a.phi[2] == Catch::Approx(0.0).margin(1e-12));
  CHECK(std::abs(a.reconstructed() - a.model_output) < 1e-9);
  CHECK(a.base_value == Catch::Approx(0.0));
}

TEST_CASE("dummy and symmetry axioms") {
  LinearStub model({0.15, 0.15, 0.0, 0.1}, 0.2);
  std::vector<double> sample = {1.0, 1.0, 5.0, 2.0};
  BackgroundSet bg;
  bg.rows = {{0.2, 0.2, 1.0, 0.1}, {0.4, 0.4, 2.0, 0.3}};
  auto a = exact_shapley(model, sample, 0, bg, all_positions(4));
  CHECK(a.phi[2] == Catch::Approx(0.0).margin(1e-12));      // dummy
  CHECK(a.phi[0] == Catch::Approx(a.phi[1]).margin(1e-12)); // symmetric pair
}

TEST_CASE("exact equals the permutation-enumeration oracle") {
  Dataset d = small_planted(25, 3);
  auto model = fit_br(d, {.forest = {.n_trees = 12}, .seed = 2});
  auto bg = BackgroundSet::from_dataset(d, 8, 5);
  // 6 attributed features keeps 6! = 720 permutations tractable.
  std::vector<int> positions = {0, 1, 2, 3, 4, 5};
  for (int s : {0, 30}) {
    for (int label : {int(Label::Downloader), int(Label::Ransomware)}) {
      auto a = exact_shapley(model, d.samples[s].features, label, bg, positions);
      auto oracle =
          permutation_oracle(model, d.samples[s].features, label, bg, positions);
      for (int i = 0; i < 6; ++i)
        CHECK(a.phi[i] == Catch::Approx(oracle[i]).margin(1e-9));
      CHECK(std::abs(a.reconstructed() - a.model_output) < 1e-9);
    }
  }
}

TEST_CASE("local accuracy holds under a different background") {
  Dataset d = small_planted(20, 7);
  auto model = fit_br(d, {.forest = {.n_trees = 10}, .seed = 3});
  auto bg1 = BackgroundSet::from_dataset(d, 5, 11);
  auto bg2 = BackgroundSet::from_dataset(d, 11, 23);
  auto positions = all_positions(d.feature_count());
  const auto& x = d.samples[4].features;
  auto a1 = sampled_shapley(model, x, 1, bg1, 50, 9, positions);
  auto a2 = sampled_shapley(model, x, 1, bg2, 50, 9, positions);
  CHECK(std::abs(a1.reconstructed() - a1.model_output) < 1e-9);
  CHECK(std::abs(a2.reconstructed() - a2.model_output) < 1e-9);
  CHECK(a1.model_output == Catch::Approx(a2.model_output));
  CHECK(a1.base_value != a2.base_value);
}

TEST_CASE("sampled estimator is deterministic and converges to exact") {
  Dataset d = small_planted(25, 13);
  auto model = fit_br(d, {.forest = {.n_trees = 10}, .seed = 4});
  auto bg = BackgroundSet::from_dataset(d, 6, 31);
  auto positions = all_positions(d.feature_count());  // 10 features
  const auto& x = d.samples[2].features;

  auto s1 = sampled_shapley(model, x, 1, bg, 300, 17, positions);
  auto s2 = sampled_shapley(model, x, 1, bg, 300, 17, positions);
  CHECK(s1.phi == s2.phi);
  CHECK(s1.sampling_residual == s2.sampling_residual);

  auto ex = exact_shapley(model, x, 1, bg, positions);
  double mean_abs = 0;
  for (int i = 0; i < 10; ++i) mean_abs += std::abs(s1.phi[i] - ex.phi[i]);
  mean_abs /= 10;
  CHECK(mean_abs <= 0.02);

  auto better = sampled_shapley(model, x, 1, bg, 2000, 17, positions);
  double mean_abs2 = 0;
  for (int i = 0; i < 10; ++i) mean_abs2 += std::abs(better.phi[i] - ex.phi[i]);
  mean_abs2 /= 10;
  CHECK(mean_abs2 <= 0.01);
}

TEST_CASE("dummy axiom holds statistically for the sampled estimator") {
  LinearStub model({0.2, 0.0, 0.3}, 0.1);
  std::vector<double> sample = {0.9, 4.0, 0.8};
  auto bg = zero_background(3, 2);
  auto a = sampled_shapley(model, sample, 0, bg, 500, 3, all_positions(3));
  // Feature 1 never moves the model; only the redistributed residual may
  // touch it, and that residual is tiny here.
  CHECK(std::abs(a.phi[1]) < 1e-9);
}

TEST_CASE("exact estimator refuses too many features") {
  LinearStub model(std::vector<double>(25, 0.01), 0.0);
  std::vector<double> sample(25, 1.0);
  auto bg = zero_background(25, 1);
  CHECK_THROWS(exact_shapley(model, sample, 0, bg, all_positions(25)));
}

TEST_CASE("global importance aggregates absolute values") {
  Attribution a, b;
  a.positions = b.positions = {0, 1, 2};
  a.phi = {1.0, -2.0, 0.0};
  b.phi = {3.0, 2.0, 0.0};
  auto g = global_importance({1}, {{a, b}});
  CHECK(g.mean_abs_phi[0][0] == Catch::Approx(2.0));
  CHECK(g.mean_abs_phi[0][1] == Catch::Approx(2.0));
  CHECK(g.mean_abs_phi[0][2] == 0.0);
  auto top = g.top_k(0, 2);
  CHECK(top == std::vector<int>{0, 1});

  auto single = global_importance({1}, {{a}});
  CHECK(single.mean_abs_phi[0][1] == Catch::Approx(2.0));

  Attribution zero;
  zero.positions = {0};
  zero.phi = {0.0};
  auto gz = global_importance({0}, {{zero}});
  CHECK(gz.mean_abs_phi[0][0] == 0.0);
}

TEST_CASE("explain_dataset is identical at any thread count") {
  Dataset d = small_planted(6, 17);
  auto model = fit_br(d, {.forest = {.n_trees = 6}, .seed = 5});
  auto bg = BackgroundSet::from_dataset(d, 4, 3);
  auto positions = all_positions(d.feature_count());
  auto one = explain_dataset(model, d, {1, 5}, bg, false, 40, 7, positions, 1);
  auto four = explain_dataset(model, d, {1, 5}, bg, false, 40, 7, positions, 4);
  REQUIRE(one.size() == four.size());
  for (std::size_t l = 0; l < one.size(); ++l)
    for (std::size_t s = 0; s < one[l].size(); ++s)
      CHECK(one[l][s].phi == four[l][s].phi);
}

TEST_CASE("plot data exports are internally consistent") {
  Dataset d = small_planted(8, 19);
  auto model = fit_br(d, {.forest = {.n_trees = 8}, .seed = 6});
  auto bg = BackgroundSet::from_dataset(d, 5, 3);
  auto positions = all_positions(d.feature_count());
  auto rows = explain_dataset(model, d, {1}, bg, false, 30, 11, positions, 1)[0];

  auto force = force_data(rows, d);
  // Each sample's last cumulative equals its model output column.
  auto lines = csv::split(force, '\n');
  REQUIRE(lines.size() > 2);
  for (std::size_t li = 1; li + 1 < lines.size(); ++li) {
    auto cells = csv::split(lines[li], ',');
    REQUIRE(cells.size() == 7);
    if (li + 2 == lines.size() ||
        csv::split(lines[li + 1], ',')[0] != cells[0]) {
      const double cumulative = csv::parse_number(cells[4], 0, 4);
      const double output = csv::parse_number(cells[6], 0, 6);
      CHECK(cumulative == Catch::Approx(output).margin(1e-9));
    }
  }

  auto decision = decision_data(rows, d);
  auto dlines = csv::split(decision, '\n');
  auto first_cells = csv::split(dlines[1], ',');
  CHECK(first_cells[2] == std::string_view("base"));
  CHECK(csv::parse_number(first_cells[3], 0, 3) ==
        Catch::Approx(rows[0].base_value));

  auto dep = dependence_data(rows, d, 2, 5);
  auto dep_lines = csv::split(dep, '\n');
  // Header + one row per sample + trailing empty piece.
  CHECK(dep_lines.size() == std::size_t(d.size()) + 2);

  auto summary = summary_data(rows, d);
  CHECK(summary.find("feature_000") != std::string::npos);
}

TEST_CASE("planted signals surface in forest attributions") {
  Dataset d = small_planted(30, 23);
  auto model = fit_br(d, {.forest = {.n_trees = 20}, .seed = 8});
  auto bg = BackgroundSet::from_dataset(d, 10, 3);
  auto positions = all_positions(d.feature_count());
  // Explain Downloader over Downloader samples: feature 2 dominates.
  Dataset dl{d.schema, {}, ""};
  for (const auto& s : d.samples)
    if (s.labels.test(Label::Downloader)) dl.samples.push_back(s);
  auto rows = explain_dataset(model, dl, {int(Label::Downloader)}, bg, false,
                              60, 13, positions, 1)[0];
  auto g = global_importance({int(Label::Downloader)}, {rows});
  // In a two-class toy either class's signal is informative for both labels;
  // the planted Downloader feature must sit among the top two.
  auto top = g.top_k(0, 2);
  CHECK((top[0] == 2 || top[1] == 2));
}
