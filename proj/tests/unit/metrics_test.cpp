#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "dep/metrics.hpp"
#include "metric_oracle.hpp"

namespace dep::metrics {
namespace {

NormalizationSpec articles_kept() {
  NormalizationSpec n;
  n.strip_articles = false;
  return n;
}

TEST(Normalize, FullPipeline) {
  EXPECT_EQ(normalize("  The Cat, sat!  ", {}), "cat sat");
  EXPECT_EQ(normalize("An apple_pie", {}), "applepie");
  EXPECT_EQ(normalize("Theater a-b", {}), "theater ab");
  EXPECT_EQ(normalize("Café  THE", {}), "café");
}

TEST(Normalize, IdempotentUnderEveryFlagCombination) {
  std::mt19937_64 rng(11);
  for (int mask = 0; mask < 16; ++mask) {
    NormalizationSpec spec{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0, (mask & 8) != 0};
    for (int i = 0; i < 300; ++i) {
      const std::string s = oracle::random_text(rng);
      const std::string once = normalize(s, spec);
      ASSERT_EQ(normalize(once, spec), once) << "mask " << mask << " input '" << s << "'";
    }
  }
}

TEST(Accuracy, Counting) {
  std::vector<AnswerPair> pairs = {{"A", "A"}, {"B", "B"}, {"C", "D"}};
  EXPECT_DOUBLE_EQ(accuracy(pairs, default_normalization(kAccuracy)).score, 2.0 / 3.0);
}

TEST(Accuracy, EmptyInputIsFlagged) {
  MetricValue v = accuracy(std::span<const AnswerPair>{});
  EXPECT_EQ(v.score, 0.0);
  EXPECT_TRUE(v.empty_input);
}

TEST(Accuracy, SingleLetterChoicesSurviveDefaultNormalization) {
  EXPECT_EQ(accuracy_score("A", "B", default_normalization(kAccuracy)), 0.0);
  EXPECT_EQ(accuracy_score("a", "A", default_normalization(kAccuracy)), 1.0);
}

TEST(ExactMatch, Examples) {
  std::vector<std::string> paris = {"paris"};
  EXPECT_EQ(exact_match_score("Paris.", paris, {}), 1.0);

  NormalizationSpec case_sensitive;
  case_sensitive.lowercase = false;
  std::vector<std::string> upper = {"Paris"};
  EXPECT_EQ(exact_match_score("paris", upper, case_sensitive), 0.0);

  std::vector<std::string> empty = {""};
  EXPECT_EQ(exact_match_score("", empty, {}), 1.0);
}

TEST(ExactMatch, AnyAcceptableGold) {
  std::vector<std::string> golds = {"Lyon", "Paris"};
  EXPECT_EQ(exact_match_score("paris", golds, {}), 1.0);
  EXPECT_EQ(exact_match_score("rome", golds, {}), 0.0);
}

TEST(TokenF1, HandDerivedExample) {
  std::vector<std::string> gold = {"cat sat down"};
  EXPECT_EQ(token_f1_score("the cat sat", gold, articles_kept()), 2.0 / 3.0);
}

TEST(TokenF1, EmptyRules) {
  std::vector<std::string> empty = {""};
  std::vector<std::string> some = {"x"};
  EXPECT_EQ(token_f1_score("", empty, {}), 1.0);
  EXPECT_EQ(token_f1_score("x", empty, {}), 0.0);
  EXPECT_EQ(token_f1_score("", some, {}), 0.0);
  EXPECT_EQ(token_f1_score("same words here", std::vector<std::string>{"same words here"}, {}), 1.0);
}

TEST(TokenF1, MultisetOverlap) {
  // pred tokens {b,b,b}, gold {b,b,c}: overlap 2, P = 2/3, R = 2/3
  EXPECT_NEAR(token_f1_score("b b b", std::vector<std::string>{"b b c"}, articles_kept()), 2.0 / 3.0, 1e-15);
}

TEST(Properties, RangeAndPermutationInvariance) {
  std::mt19937_64 rng(5);
  auto pairs = oracle::random_pairs(rng, 200);
  std::vector<MultiAnswerPair> multi;
  for (const auto& p : pairs) multi.push_back({p.prediction, p.golds});
  const double em = exact_match(multi).score;
  const double f1 = token_f1(multi).score;
  for (const auto& p : multi) {
    const double s = token_f1_score(p.prediction, p.golds, {});
    ASSERT_GE(s, 0.0);
    ASSERT_LE(s, 1.0);
  }
  std::shuffle(multi.begin(), multi.end(), rng);
  EXPECT_NEAR(exact_match(multi).score, em, 1e-12);
  EXPECT_NEAR(token_f1(multi).score, f1, 1e-12);
}

TEST(Oracle, AgreesOnRandomPairs) {
  std::mt19937_64 rng(20261016);
  auto pairs = oracle::random_pairs(rng, 1000);
  for (int mask = 0; mask < 16; ++mask) {
    NormalizationSpec spec{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0, (mask & 8) != 0};
    std::vector<AnswerPair> single;
    std::vector<MultiAnswerPair> multi;
    for (const auto& p : pairs) {
      single.push_back({p.prediction, p.golds.front()});
      multi.push_back({p.prediction, p.golds});
    }
    EXPECT_NEAR(accuracy(single, spec).score, oracle::mean_accuracy(pairs, spec), 1e-12) << mask;
    EXPECT_NEAR(exact_match(multi, spec).score, oracle::mean_exact_match(pairs, spec), 1e-12) << mask;
    EXPECT_NEAR(token_f1(multi, spec).score, oracle::mean_token_f1(pairs, spec), 1e-12) << mask;
  }
}

}  // namespace
}  // namespace dep::metrics
