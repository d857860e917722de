#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "oracle.hpp"
#include "ots/decode.hpp"

using namespace ots;

TEST(PlanSteps, RemaindersGoToEarlierBlocksAndSteps) {
  // blocks of 4, 4, 2 tokens; 5 steps -> 2, 2, 1 per block
  const auto plan = plan_steps(BlockLayout(10, 4), 5);
  ASSERT_EQ(plan.size(), 5u);
  std::vector<std::size_t> blocks, counts;
  for (const auto& p : plan) {
    blocks.push_back(p.block);
    counts.push_back(p.count);
  }
  EXPECT_EQ(blocks, (std::vector<std::size_t>{0, 0, 1, 1, 2}));
  EXPECT_EQ(counts, (std::vector<std::size_t>{2, 2, 2, 2, 2}));
  EXPECT_TRUE(plan[1].last_in_block);
  EXPECT_FALSE(plan[2].last_in_block);

  EXPECT_EQ(tokens_per_step(BlockLayout(7, 7), 3), (std::vector<std::size_t>{3, 2, 2}));
  EXPECT_EQ(tokens_per_step(BlockLayout(8, 4), 3), (std::vector<std::size_t>{2, 2, 4}));
}

TEST(PlanSteps, RejectsImpossibleSchedules) {
  EXPECT_THROW(plan_steps(BlockLayout(4, 4), 5), ArgumentError);  // S > L
  EXPECT_THROW(plan_steps(BlockLayout(8, 2), 3), ArgumentError);  // S < blocks
  EXPECT_THROW(plan_steps(BlockLayout(5, 4), 4), ArgumentError);  // short last block gets 2 steps
  EXPECT_THROW(plan_steps(BlockLayout(4, 4), 0), ArgumentError);
}

TEST(Gumbel, ArgmaxSamplesSoftmax) {
  DenoiserOutput logits(1, 3);
  const std::vector<double> p{0.5, 0.3, 0.2};
  for (std::size_t a = 0; a < 3; ++a) logits.logp[a] = std::log(p[a]);
  RandomStream rng(1);
  std::vector<int> hits(3, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++hits[static_cast<std::size_t>(detail::argmax_row(gumbel_perturb(logits, 1.0, rng).row(0)))];
  for (std::size_t a = 0; a < 3; ++a) EXPECT_NEAR(hits[a] / double(n), p[a], 0.01);
}

TEST(Gumbel, TemperatureScalesTheDistribution) {
  // argmax(l + tau g) samples softmax(l / tau): at tau = 0.5 the odds square.
  DenoiserOutput logits(1, 2);
  logits.logp = {std::log(0.6), std::log(0.4)};
  RandomStream rng(2);
  int first = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) first += detail::argmax_row(gumbel_perturb(logits, 0.5, rng).row(0)) == 0;
  EXPECT_NEAR(first / double(n), 0.36 / (0.36 + 0.16), 0.01);
  EXPECT_EQ(gumbel_perturb(logits, 0.0, rng), logits);
  EXPECT_THROW(gumbel_perturb(logits, -1.0, rng), ArgumentError);
}

TEST(Proposal, ConfidenceSources) {
  DenoiserOutput raw(1, 2);
  raw.logp = {std::log(0.9), std::log(0.1)};
  DenoiserOutput pert = raw;
  pert.logp[1] = 5.0;
  const Proposal pre = propose_from(raw, pert, ConfidenceSource::pre_noise);
  EXPECT_EQ(pre.tokens[0], 1);
  EXPECT_NEAR(pre.confidence[0], 0.1, 1e-15);
  const Proposal post = propose_from(raw, pert, ConfidenceSource::post_noise);
  EXPECT_EQ(post.confidence[0], 5.0);
}

TEST(Transfer, LowConfidencePicksMostConfidentLowestIndexFirst) {
  MaskedSeq x = MaskedSeq::fully_masked({}, BlockLayout(6, 3), 2);
  Proposal p{{0, 1, 0, 1, 1, 1}, {0.5, 0.9, 0.9, 1.0, 1.0, 1.0}};
  RandomStream rng(0);
  const auto tr = transfer_tokens(x, p, 2, Strategy::low_confidence, rng);
  EXPECT_EQ(tr.positions, (std::vector<std::size_t>{1, 2}));  // block 0 only, tie -> lower index
  EXPECT_EQ(tr.x.gen, (std::vector<Token>{2, 1, 0, 2, 2, 2}));
  const auto ar = transfer_tokens(tr.x, p, 1, Strategy::ar, rng);
  EXPECT_EQ(ar.positions, (std::vector<std::size_t>{0}));
  EXPECT_THROW(transfer_tokens(ar.x, p, 4, Strategy::ar, rng), ArgumentError);  // block 1 has 3 masks
}

TEST(Transfer, RandomSubsetIsUniform) {
  const MaskedSeq x = MaskedSeq::fully_masked({}, BlockLayout(4, 4), 2);
  const Proposal p{{0, 0, 0, 0}, {1, 1, 1, 1}};
  std::map<std::vector<std::size_t>, int> seen;
  const int n = 60000;
  for (int i = 0; i < n; ++i) {
    RandomStream rng = RandomStream(3).derive({static_cast<std::uint64_t>(i)});
    auto pos = transfer_tokens(x, p, 2, Strategy::random, rng).positions;
    std::sort(pos.begin(), pos.end());
    ++seen[pos];
  }
  ASSERT_EQ(seen.size(), 6u);
  for (const auto& [k, c] : seen) EXPECT_NEAR(c / double(n), 1.0 / 6.0, 0.01);
}

TEST(FillMasks, KeepsCommittedTokens) {
  MaskedSeq x = MaskedSeq::fully_masked({}, BlockLayout(3, 3), 2);
  x.gen[1] = 0;
  const std::vector<Token> prop{1, 1, 1};
  EXPECT_EQ(fill_masks(x, prop).gen, (std::vector<Token>{1, 0, 1}));
}

TEST(Decode, ArAtZeroTemperatureIsTheGreedyWalk) {
  RandomStream rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = oracle::random_chain(3, rng);
    const std::vector<Token> prompt{static_cast<Token>(rng.below(3))};
    DecodeConfig cfg;
    cfg.gen_len = 6;
    cfg.strategy = Strategy::ar;
    const auto t = decode(c.model(), prompt, cfg);
    EXPECT_EQ(t.final.gen, oracle::greedy_walk(c, prompt, 6));
    EXPECT_EQ(t.unmask_order, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  }
}

TEST(Decode, RecordsFollowThePlan) {
  RandomStream rng(6);
  const auto c = oracle::random_chain(3, rng);
  DecodeConfig cfg;
  cfg.gen_len = 10;
  cfg.steps = 5;
  cfg.block_size = 4;
  cfg.strategy = Strategy::random;
  cfg.temperature = 1.0;
  cfg.seed = 17;
  const auto t = decode(c.model(), {0}, cfg);
  EXPECT_EQ(t.nfe, 5u);
  ASSERT_EQ(t.steps.size(), 5u);
  const auto plan = plan_steps(cfg.layout(), 5);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(t.steps[k].positions.size(), plan[k].count);
    for (std::size_t pos : t.steps[k].positions) EXPECT_EQ(pos / 4, plan[k].block);
  }
  auto order = t.unmask_order;
  std::sort(order.begin(), order.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(order[i], i);
  EXPECT_TRUE(t.final.complete());
  EXPECT_EQ(decode(c.model(), {0}, cfg), t);  // same seed, same trajectory
}

TEST(Decode, LowConfidenceAtZeroIgnoresTheSeed) {
  RandomStream rng(7);
  const auto c = oracle::random_chain(4, rng);
  DecodeConfig cfg;
  cfg.gen_len = 8;
  cfg.steps = 4;
  cfg.seed = 1;
  const auto a = decode(c.model(), {1, 2}, cfg);
  cfg.seed = 999;
  EXPECT_EQ(decode(c.model(), {1, 2}, cfg), a);
}

TEST(Decode, RejectsBadConfig) {
  RandomStream rng(8);
  const auto m = oracle::random_chain(2, rng).model();
  DecodeConfig cfg;
  cfg.gen_len = 4;
  cfg.steps = 8;
  EXPECT_THROW(decode(m, {}, cfg), ArgumentError);
  cfg.steps = 4;
  cfg.temperature = -0.1;
  EXPECT_THROW(decode(m, {}, cfg), ArgumentError);
  cfg.temperature = 0.0;
  EXPECT_THROW(decode(m, {7}, cfg), VocabMismatch);
}
