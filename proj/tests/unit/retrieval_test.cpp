#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles/brute_force.hpp"
#include "perprompt/errors.hpp"
#include "perprompt/retrieval.hpp"

using namespace perprompt;

TEST_CASE("cosine of [1,2,2] and [2,1,2] is 8/9") {
  const std::vector<double> a{1, 2, 2}, b{2, 1, 2};
  CHECK(cosine_similarity(a, b) == doctest::Approx(0.8888888888888888).epsilon(1e-15));
}

TEST_CASE("cosine is symmetric, bounded and scale invariant") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d(0.0, 1.0);
  std::uniform_real_distribution<double> scale(0.1, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(7), b(7);
    for (double& x : a) x = d(rng);
    for (double& x : b) x = d(rng);
    const double c = cosine_similarity(a, b);
    CHECK(c == cosine_similarity(b, a));
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    auto scaled = a;
    const double s = scale(rng);
    for (double& x : scaled) x *= s;
    CHECK(cosine_similarity(scaled, b) == doctest::Approx(c).epsilon(1e-12));
  }
}

TEST_CASE("cosine with a zero vector is 0 and mismatched lengths throw") {
  const std::vector<double> zero(3, 0.0), a{1, 2, 3};
  CHECK(cosine_similarity(zero, a) == 0.0);
  CHECK(cosine_similarity(a, zero) == 0.0);
  CHECK_THROWS_AS(cosine_similarity(a, std::vector<double>{1, 2}), DimensionError);
}

TEST_CASE("top_k breaks score ties by ascending id and excludes the target") {
  const std::vector<PoolEntry> pool{{"c", {1, 0}}, {"a", {1, 0}}, {"b", {0, 1}}, {"self", {1, 0}}};
  const auto got = top_k_similar(std::vector<double>{1, 0}, pool, 3, "self");
  REQUIRE(got.size() == 3);
  CHECK(got[0].id == "a");
  CHECK(got[1].id == "c");
  CHECK(got[2].id == "b");
  CHECK(got[2].score == 0.0);
}

TEST_CASE("top_k returns the whole eligible pool when k exceeds it") {
  const std::vector<PoolEntry> pool{{"a", {1, 0}}, {"b", {0, 1}}};
  CHECK(top_k_similar(std::vector<double>{1, 1}, pool, 10).size() == 2);
  CHECK_THROWS_AS(top_k_similar(std::vector<double>{1, 1}, pool, 0), SchemaError);
  CHECK_THROWS_AS(top_k_similar(std::vector<double>{1, 1}, std::vector<PoolEntry>{}, 1), SchemaError);
}

TEST_CASE("top_k agrees with the rank-counting oracle on random pools") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> d(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(-2, 2);
  for (std::size_t size : {1, 2, 7, 50, 200}) {
    std::vector<PoolEntry> pool;
    for (std::size_t i = 0; i < size; ++i) {
      std::vector<double> v(6);
      // Coarse integer entries create exact score ties.
      for (double& x : v) x = (i % 3 == 0) ? coarse(rng) : d(rng);
      pool.push_back({"id" + std::to_string(i), v});
    }
    for (std::size_t k : {1, 3, 10, 250}) {
      for (std::size_t q = 0; q < std::min<std::size_t>(size, 10); ++q) {
        const auto got = top_k_similar(pool[q].vector, pool, k, pool[q].id);
        const auto want = oracle::top_k(pool[q].vector, pool, k, pool[q].id);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
          CHECK(got[i].id == want[i].id);
          CHECK(std::abs(got[i].score - want[i].score) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("encoder output has the configured width and is deterministic in eval mode") {
  Rng rng(1);
  const Mlp enc = make_encoder(12, EncoderConfig{16, 8, 0.4}, rng);
  const std::vector<double> x(12, 0.5);
  const auto a = encode(enc, x, Mode::kEval);
  CHECK(a.size() == 8);
  CHECK(a == encode(enc, x, Mode::kEval));
  CHECK_THROWS_AS(encode(enc, std::vector<double>(11, 0.0), Mode::kEval), DimensionError);
  Rng drop(2);
  CHECK(encode(enc, x, Mode::kTrain, &drop).size() == 8);
}
