#include <gtest/gtest.h>

#include <cmath>

#include "oracle.hpp"
#include "ots/eval.hpp"
#include "ots/tasks.hpp"

using namespace ots;

TEST(PassAtK, MatchesSubsetCounting) {
  for (std::size_t n = 1; n <= 8; ++n)
    for (std::size_t c = 0; c <= n; ++c)
      for (std::size_t k = 1; k <= n; ++k) {
        const auto [hit, total] = oracle::subset_counts(n, c, k);
        const Rational r = pass_at_k_exact(n, c, k);
        EXPECT_EQ(static_cast<std::uint64_t>(r.num) * total, hit * static_cast<std::uint64_t>(r.den));
        EXPECT_EQ(pass_at_k(n, c, k), static_cast<double>(hit) / static_cast<double>(total));
      }
}

TEST(PassAtK, EdgeCasesAndErrors) {
  EXPECT_EQ(pass_at_k(10, 0, 3), 0.0);
  EXPECT_EQ(pass_at_k(10, 10, 1), 1.0);
  EXPECT_EQ(pass_at_k(10, 8, 3), 1.0);  // n - c < k
  EXPECT_EQ(pass_at_k_exact(4, 1, 2), (Rational{1, 2}));
  EXPECT_THROW(pass_at_k(4, 5, 1), ArgumentError);
  EXPECT_THROW(pass_at_k(4, 1, 0), ArgumentError);
  EXPECT_THROW(pass_at_k(4, 1, 5), ArgumentError);
  // beyond 128-bit binomials the product form takes over
  EXPECT_THROW(pass_at_k_exact(400, 10, 200), ArgumentError);
  const double big = pass_at_k(400, 10, 200);
  EXPECT_GT(big, 0.99);
  EXPECT_LE(big, 1.0);
}

TEST(PassAtK, NonDecreasingInK) {
  for (std::size_t c = 0; c <= 20; ++c) {
    double prev = 0.0;
    for (std::size_t k = 1; k <= 64; ++k) {
      const double v = pass_at_k(64, c, k);
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(Answers, ExtractBetweenDelimiters) {
  const Vocabulary v = countdown::vocabulary();
  EXPECT_EQ(extract_answer(v, countdown::encode("3+4=7__")), "7");
  EXPECT_EQ(extract_answer(v, countdown::encode("1=2;3+4=17")), "17");
  EXPECT_EQ(extract_answer(v, countdown::encode("3+4_")), std::nullopt);
  EXPECT_EQ(extract_answer(v, countdown::encode("3+4=_")), std::nullopt);
  const Vocabulary plain = Vocabulary::make(3);
  EXPECT_EQ(extract_answer(plain, std::vector<Token>{0, 2}), "0 2");
}

TEST(MajorityVote, ModeWithFirstOccurrenceTies) {
  using A = std::optional<std::string>;
  const std::vector<A> a{"3", "5", std::nullopt, "5", "3"};
  EXPECT_EQ(majority_vote(a), "3");
  const std::vector<A> b{std::nullopt, std::nullopt, "4"};
  EXPECT_EQ(majority_vote(b), "4");
  const std::vector<A> c{std::nullopt, std::nullopt};
  EXPECT_EQ(majority_vote(c), std::nullopt);
  EXPECT_THROW(majority_vote(std::span<const A>{}), ArgumentError);
}

TEST(ArSimilarity, HammingToIdentity) {
  const std::vector<std::size_t> id{0, 1, 2, 3};
  const std::vector<std::size_t> swap{1, 0, 2, 3};
  const std::vector<std::size_t> rev{3, 2, 1, 0};
  EXPECT_EQ(ar_similarity(id, 4), 0u);
  EXPECT_EQ(ar_similarity(swap, 4), 2u);
  EXPECT_EQ(ar_similarity(rev, 4), 4u);
  const std::vector<std::size_t> bad{0, 0, 1, 2};
  EXPECT_THROW(ar_similarity(bad, 4), ArgumentError);
  EXPECT_THROW(ar_similarity(id, 5), ArgumentError);
}

TEST(Correlation, WeightedFitMatchesClosedForm) {
  // accuracies 1/2, 1/4, 0 at distances 0, 2, 4 with counts 2, 4, 2:
  // weighted mean x = 2, mean y = 1/4, Sxx = 16, Sxy = -2 -> slope -1/8
  const auto fit = fit_buckets({{0, 2, 1}, {2, 4, 1}, {4, 2, 0}});
  ASSERT_TRUE(fit.slope);
  EXPECT_DOUBLE_EQ(*fit.slope, -0.125);
  EXPECT_DOUBLE_EQ(*fit.intercept, 0.5);
  EXPECT_FALSE(fit_buckets({{3, 5, 2}}).slope);
  EXPECT_FALSE(fit_buckets({}).slope);
}

TEST(Correlation, BucketsFromSamples) {
  const std::vector<OrderSample> s{{1, true}, {1, false}, {3, true}, {3, true}};
  const auto fit = order_accuracy_correlation(s);
  ASSERT_EQ(fit.buckets.size(), 2u);
  EXPECT_EQ(fit.buckets[0].accuracy(), 0.5);
  EXPECT_DOUBLE_EQ(*fit.slope, 0.25);
}

TEST(Tradeoff, CurvesAreMonotoneAndFlatWhenDeterministic) {
  RandomStream rng(41);
  const auto chain = oracle::random_chain(3, rng);
  const auto m = chain.model();
  std::vector<chain_task::Instance> insts;
  std::vector<Problem> problems;
  for (std::size_t i = 0; i < 6; ++i) {
    RandomStream r = rng.derive({i});
    insts.push_back(chain_task::generate(m, r, 2, 6, -4.0));
  }
  for (const auto& inst : insts) problems.push_back(chain_task::to_problem(inst, m));
  const std::vector<StrategySpec> specs{{Strategy::random, 1.0}, {Strategy::low_confidence, 0.0}};
  const auto ks = power_of_two_ks(8);
  EXPECT_EQ(ks, (std::vector<std::size_t>{1, 2, 4, 8}));
  StudyConfig sc;
  sc.gen_len = 6;
  sc.steps = 6;
  sc.workers = 3;
  const auto rep = tradeoff_study(m, problems, specs, 8, ks, sc);
  for (const auto& c : rep.curves)
    for (std::size_t i = 1; i < c.pass_at_k.size(); ++i) EXPECT_GE(c.pass_at_k[i], c.pass_at_k[i - 1]);
  const auto& flat = rep.curves[1].pass_at_k;
  for (double v : flat) EXPECT_EQ(v, flat.front());
  EXPECT_EQ(rep.curves[1].mean_distinct, 1.0);

  sc.workers = 1;
  const auto again = tradeoff_study(m, problems, specs, 8, ks, sc);
  for (std::size_t i = 0; i < rep.samples.size(); ++i) EXPECT_EQ(again.samples[i].tokens, rep.samples[i].tokens);
  const std::vector<std::size_t> too_big{9};
  EXPECT_THROW(tradeoff_study(m, problems, specs, 8, too_big, sc), ArgumentError);
}

TEST(MajorityVoteDecode, CostsSamplesTimesSteps) {
  const auto inst = countdown::Instance{"x", {3, 4}, 7, "3+4=7"};
  const auto prior = countdown::make_prior(inst, 16, {}, RandomStream(1));
  DecodeConfig d;
  d.gen_len = 16;
  d.steps = 8;
  d.block_size = 4;
  d.temperature = 0.4;
  const auto v = majority_vote_decode(prior, countdown::to_problem(inst), d, 5, 3);
  EXPECT_EQ(v.nfe, 40u);
  EXPECT_EQ(v.answers.size(), 5u);
  EXPECT_EQ(v.answer, majority_vote(v.answers));
}
