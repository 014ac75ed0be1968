#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "torml/metrics.hpp"
#include "torml/random.hpp"

using namespace torml;

namespace {

PredictionBatch hand_case() {
  // TP=2, FP=1, FN=1 across three labels.
  PredictionBatch b;
  b.y_true = {{true, false, true}, {false, true, false}};
  b.y_pred = {{true, true, true}, {false, false, false}};
  return b;
}

PredictionBatch random_batch(Rng& rng, int max_rows = 50, int labels = 10) {
  PredictionBatch b;
  const int rows = 1 + int(rng.below(max_rows));
  for (int r = 0; r < rows; ++r) {
    std::vector<bool> t, p;
    for (int l = 0; l < labels; ++l) {
      t.push_back(rng.uniform() < 0.3);
      p.push_back(rng.uniform() < 0.3);
    }
    b.y_true.push_back(t);
    b.y_pred.push_back(p);
  }
  return b;
}

}  // namespace

TEST_CASE("micro precision and recall on the hand-tallied case") {
  auto b = hand_case();
  CHECK(micro_precision(b).value == Catch::Approx(2.0 / 3.0));
  CHECK_FALSE(micro_precision(b).degenerate);
  CHECK(micro_recall(b).value == Catch::Approx(2.0 / 3.0));
  CHECK(hamming_loss(b) == Catch::Approx(1.0 / 3.0));
  CHECK(elementwise_accuracy(b) == Catch::Approx(2.0 / 3.0));
  CHECK(subset_accuracy(b) == 0.0);
}

TEST_CASE("perfect and degenerate batches") {
  PredictionBatch perfect;
  perfect.y_true = {{true, false}, {false, true}};
  perfect.y_pred = perfect.y_true;
  CHECK(micro_precision(perfect).value == 1.0);
  CHECK(micro_recall(perfect).value == 1.0);
  CHECK(hamming_loss(perfect) == 0.0);
  CHECK(subset_accuracy(perfect) == 1.0);
  CHECK(elementwise_accuracy(perfect) == 1.0);

  PredictionBatch none;
  none.y_true = {{true, false}, {true, true}};
  none.y_pred = {{false, false}, {false, false}};
  auto mp = micro_precision(none);
  CHECK(mp.value == 0.0);
  CHECK(mp.degenerate);
  CHECK(micro_recall(none).value == 0.0);
  CHECK_FALSE(micro_recall(none).degenerate);

  PredictionBatch complement;
  complement.y_true = {{true, false}};
  complement.y_pred = {{false, true}};
  CHECK(hamming_loss(complement) == 1.0);

  PredictionBatch all_pos = none;
  all_pos.y_pred = {{true, true}, {true, true}};
  CHECK(micro_recall(all_pos).value == 1.0);
}

TEST_CASE("single wrong bit out of ten") {
  PredictionBatch b;
  b.y_true = {std::vector<bool>(10, false)};
  b.y_pred = {std::vector<bool>(10, false)};
  b.y_true[0][4] = true;
  CHECK(elementwise_accuracy(b) == Catch::Approx(0.9));
  CHECK(subset_accuracy(b) == 0.0);
}

TEST_CASE("classwise precision and recall patterns") {
  auto b = hand_case();
  auto rows = classwise_pr(b);
  CHECK(rows[0].precision.value == 1.0);
  CHECK(rows[0].recall.value == 1.0);

  // Label present but never predicted: flagged-zero precision, zero recall.
  PredictionBatch p1;
  p1.y_true = {{true, false}, {true, false}};
  p1.y_pred = {{false, false}, {false, true}};
  auto r = classwise_pr(p1);
  CHECK(r[0].precision.degenerate);
  CHECK(r[0].precision.value == 0.0);
  CHECK(r[0].recall.value == 0.0);
  CHECK_FALSE(r[0].recall.degenerate);

  // Label predicted only when true: precision 1.
  PredictionBatch p2;
  p2.y_true = {{true}, {true}, {false}};
  p2.y_pred = {{true}, {false}, {false}};
  auto r2 = classwise_pr(p2);
  CHECK(r2[0].precision.value == 1.0);
  CHECK(r2[0].recall.value == Catch::Approx(0.5));
}

TEST_CASE("batch validation rejects bad shapes") {
  PredictionBatch b;
  CHECK_THROWS(micro_precision(b));
  b.y_true = {{true}};
  b.y_pred = {{true}, {false}};
  CHECK_THROWS(hamming_loss(b));
  b.y_pred = {{true, false}};
  CHECK_THROWS(subset_accuracy(b));
}

TEST_CASE("all metrics agree with the brute-force tally oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    auto b = random_batch(rng);
    CHECK(micro_precision(b).value == oracle::micro_precision_ref(b));
    CHECK(micro_recall(b).value == oracle::micro_recall_ref(b));
    CHECK(hamming_loss(b) == oracle::hamming_ref(b));
    CHECK(subset_accuracy(b) == oracle::subset_ref(b));
    CHECK(elementwise_accuracy(b) == 1.0 - oracle::hamming_ref(b));
  }
}

TEST_CASE("elementwise accuracy complements hamming loss exactly") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    auto b = random_batch(rng);
    CHECK(elementwise_accuracy(b) + hamming_loss(b) == 1.0);
  }
}

TEST_CASE("micro precision equals recall when positive totals match") {
  Rng rng(31);
  int seen = 0;
  for (int trial = 0; trial < 2000 && seen < 25; ++trial) {
    auto b = random_batch(rng, 8, 4);
    long pred = 0, act = 0;
    for (std::size_t r = 0; r < b.y_true.size(); ++r)
      for (std::size_t l = 0; l < b.y_true[r].size(); ++l) {
        pred += b.y_pred[r][l];
        act += b.y_true[r][l];
      }
    if (pred != act || pred == 0) continue;
    ++seen;
    CHECK(micro_precision(b).value == micro_recall(b).value);
  }
  REQUIRE(seen > 0);
}

TEST_CASE("report writers emit the documented columns") {
  auto b = hand_case();
  auto s = evaluate_batch(b);
  auto csv_text = summary_csv("br", s);
  CHECK(csv_text.find("model,micro_precision,micro_recall,hamming_loss,"
                      "subset_accuracy,elementwise_accuracy\n") == 0);
  CHECK(csv_text.find("br,") != std::string::npos);

  PredictionBatch ten;
  ten.y_true = {std::vector<bool>(10, true)};
  ten.y_pred = {std::vector<bool>(10, false)};
  auto rows = classwise_pr(ten);
  auto table = classwise_csv(rows);
  CHECK(table.find("Ransomware,0,0,1,0") != std::string::npos);
}
