#include <memory>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "perprompt/backends.hpp"
#include "perprompt/errors.hpp"
#include "perprompt/predictor.hpp"

using namespace perprompt;
using testing::record;

TEST_CASE("F1 for gold [A,B] and prediction [A,A]") {
  const std::vector<std::string> gold{"A", "B"}, pred{"A", "A"};
  const auto f1 = f1_scores(gold, pred);
  CHECK(f1.micro == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(f1.macro == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("micro F1 equals accuracy for single-label predictions") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> label(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> gold(17), pred(17);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      gold[i] = "L" + std::to_string(label(rng));
      pred[i] = "L" + std::to_string(label(rng));
      correct += gold[i] == pred[i];
    }
    const auto f1 = f1_scores(gold, pred);
    CHECK(f1.micro == doctest::Approx(static_cast<double>(correct) / 17.0));
    CHECK(f1.macro >= 0.0);
    CHECK(f1.macro <= 1.0);
  }
  CHECK(f1_scores(std::vector<std::string>{"A"}, std::vector<std::string>{"A"}).macro == 1.0);
}

TEST_CASE("majority vote breaks ties by summed similarity, then by label") {
  LabeledPool pool;
  pool.entries = {{"n1", {}}, {"n2", {}}, {"n3", {}}, {"n4", {}}};
  pool.labels = {"B", "A", "B", "A"};
  NeighborSet nb{{"n1", 0.9}, {"n2", 0.8}, {"n3", 0.1}, {"n4", 0.5}};
  CHECK(majority_vote(nb, pool) == "A");  // 1.3 vs 1.0
  NeighborSet even{{"n1", 0.5}, {"n2", 0.5}};
  CHECK(majority_vote(even, pool) == "A");
  NeighborSet clear{{"n1", 0.1}, {"n3", 0.1}, {"n2", 0.9}};
  CHECK(majority_vote(clear, pool) == "B");
}

TEST_CASE("knn prediction is invariant to scaling the query") {
  LabeledPool pool;
  pool.entries = {{"a", {1, 0, 0}}, {"b", {0.9, 0.1, 0}}, {"c", {0, 1, 0}}, {"d", {0, 0.8, 0.3}}};
  pool.labels = {"X", "X", "Y", "Y"};
  const KnnPredictor knn(pool, 3);
  const auto r = record("q", {{1}}, "X");
  const std::vector<double> q{0.2, 1.0, 0.1};
  const std::vector<double> q_scaled{2.0, 10.0, 1.0};
  CHECK(knn.predict(r, q) == "Y");
  CHECK(knn.predict(r, q_scaled) == knn.predict(r, q));
}

TEST_CASE("the oracle predictor returns the stored label") {
  const auto r = record("q", {{1}}, "Z");
  CHECK(OraclePredictor{}.predict(r, {}) == "Z");
}

namespace {

class ScriptedModel final : public ResponseModel {
 public:
  explicit ScriptedModel(std::string reply) : reply_(std::move(reply)) {}
  std::string id() const override { return "scripted"; }
  std::string respond(const std::string& prompt) override {
    last_prompt = prompt;
    return reply_;
  }
  std::string last_prompt;

 private:
  std::string reply_;
};

}  // namespace

TEST_CASE("the remote predictor requires an exact vocabulary answer") {
  const auto r = record("q", {{1, 2}}, "A");
  const std::vector<std::string> metrics{"m1", "m2"}, vocab{"alpha", "beta"};
  auto ok = std::make_shared<ScriptedModel>("  beta \n");
  CHECK(RemotePredictor(ok, metrics, vocab).predict(r, {}) == "beta");
  CHECK(ok->last_prompt.find("alpha, beta") != std::string::npos);
  auto bad = std::make_shared<ScriptedModel>("Beta");
  CHECK_THROWS_AS(RemotePredictor(bad, metrics, vocab).predict(r, {}), VocabularyError);
}

TEST_CASE("evaluate_predictor scores a predictor over records") {
  const std::vector<SubjectRecord> recs{record("a", {{1}}, "A"), record("b", {{1}}, "B")};
  const std::vector<std::vector<double>> flats(2, std::vector<double>{1.0});
  const auto f1 = evaluate_predictor(OraclePredictor{}, recs, flats);
  CHECK(f1.micro == 1.0);
  CHECK(f1.macro == 1.0);
  CHECK_THROWS(evaluate_predictor(OraclePredictor{}, std::vector<SubjectRecord>{}, {}));
}
