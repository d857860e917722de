#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "oracle.hpp"
#include "ots/search.hpp"

using namespace ots;

namespace {

Candidate cand(std::vector<Token> gen, double cum, std::size_t parent, std::size_t draw) {
  Candidate c;
  c.beam.x = MaskedSeq::fully_masked({}, BlockLayout(gen.size(), gen.size()), 9);
  c.beam.x.gen = std::move(gen);
  c.beam.cumulative = cum;
  c.parent = parent;
  c.draw = draw;
  return c;
}

std::vector<Token> random_prompt(RandomStream& rng, std::size_t v, std::size_t n) {
  std::vector<Token> p(n);
  for (auto& t : p) t = static_cast<Token>(rng.below(v));
  return p;
}

}  // namespace

TEST(Prune, OrdersByScoreThenParentThenTokens) {
  const std::vector<Candidate> c{cand({1, 1}, -1.0, 0, 0), cand({0, 1}, -1.0, 1, 0), cand({0, 0}, -1.0, 1, 1),
                                 cand({1, 0}, -0.5, 2, 0)};
  EXPECT_EQ(prune(c, 3, false), (std::vector<std::size_t>{3, 0, 2}));
  EXPECT_EQ(prune(c, 10, false).size(), 4u);
  EXPECT_THROW(prune(std::span<const Candidate>{}, 2), Error);
}

TEST(Prune, DedupePrefersDistinctThenRefills) {
  const std::vector<Candidate> c{cand({1}, -1.0, 0, 0), cand({1}, -1.0, 0, 1), cand({0}, -2.0, 0, 2),
                                 cand({1}, -1.0, 1, 0)};
  EXPECT_EQ(prune(c, 2, true), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(prune(c, 2, false), (std::vector<std::size_t>{0, 1}));
  // only two distinct sequences: the third slot takes the best duplicate
  EXPECT_EQ(prune(c, 3, true), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(SearchConfig, BoundaryMask) {
  SearchConfig cfg;
  cfg.gen_len = 8;
  cfg.steps = 4;
  cfg.block_size = 4;
  EXPECT_EQ(cfg.boundary_mask(), (std::vector<bool>{false, true, false, true}));
  cfg.interval = 3;
  EXPECT_EQ(cfg.boundary_mask(), (std::vector<bool>{false, false, true, false}));
  cfg.beam = 0;
  EXPECT_THROW(cfg.validate(), ArgumentError);
  cfg.beam = 2;
  cfg.steps = 1;  // fewer steps than blocks
  EXPECT_THROW(cfg.validate(), ArgumentError);
}

TEST(OrderTokenSearch, BeamOfOneIsPlainDecode) {
  RandomStream rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto chain = oracle::random_chain(4, rng);
    const auto prompt = random_prompt(rng, 4, 3);
    for (Strategy st : {Strategy::low_confidence, Strategy::random}) {
      SearchConfig s;
      s.gen_len = 8;
      s.steps = 4;
      s.block_size = 4;
      s.beam = 1;
      s.temperature = 0.7;
      s.strategy = st;
      s.seed = 100 + static_cast<std::uint64_t>(trial);
      DecodeConfig d;
      d.gen_len = 8;
      d.steps = 4;
      d.block_size = 4;
      d.temperature = 0.7;
      d.strategy = st;
      d.seed = s.seed;
      const auto res = order_token_search(chain.model(), prompt, s);
      const auto t = decode(chain.model(), prompt, d);
      EXPECT_EQ(res.best.final.gen, t.final.gen);
      EXPECT_EQ(res.best.unmask_order, t.unmask_order);
    }
  }
}

TEST(OrderTokenSearch, NfeCountersMatchPrediction) {
  RandomStream rng(32);
  const auto chain = oracle::random_chain(3, rng);
  for (std::size_t beam : {1u, 2u, 4u})
    for (std::size_t ctx : {1u, 3u}) {
      SearchConfig s;
      s.gen_len = 12;
      s.steps = 6;
      s.block_size = 4;
      s.beam = beam;
      s.context_samples = ctx;
      const auto res = order_token_search(chain.model(), {0}, s);
      const auto p = predict_nfe(s);
      EXPECT_EQ(res.nfe.denoise_positions(), p.denoise);
      EXPECT_EQ(res.nfe.score_positions(), p.score);
      EXPECT_EQ(res.empty_intervals, 0u);
    }
}

TEST(OrderTokenSearch, TopkMatchesTreeEnumeration) {
  RandomStream rng(33);
  for (int trial = 0; trial < 15; ++trial) {
    const auto chain = oracle::random_chain(2, rng, 1.5);
    const auto prompt = random_prompt(rng, 2, 1);
    SearchConfig s;
    s.gen_len = 4;
    s.steps = 2;
    s.block_size = 2;
    s.beam = 4;
    s.expansion = ExpansionMode::deterministic_topk;
    const auto res = order_token_search(chain.model(), prompt, s);
    EXPECT_NEAR(res.score, oracle::best_topk_tree(chain, prompt, 4, 2, 2), 1e-9);
  }
}

TEST(OrderTokenSearch, StoredIntervalsReproduceScores) {
  RandomStream rng(34);
  const auto chain = oracle::random_chain(3, rng);
  for (Estimator est : {Estimator::ots, Estimator::future_blocks, Estimator::all_blocks})
    for (CumulativeRule rule : {CumulativeRule::inclusive, CumulativeRule::exclusive}) {
      SearchConfig s;
      s.gen_len = 9;
      s.steps = 6;
      s.block_size = 3;
      s.beam = 3;
      s.estimator = est;
      s.cumulative = rule;
      s.context_samples = 2;
      s.seed = 5;
      const auto res = order_token_search(chain.model(), {1, 2}, s);
      for (const auto& b : res.beams) EXPECT_NEAR(recompute_cumulative(chain.model(), b, s), b.cumulative, 1e-12);
    }
}

TEST(OrderTokenSearch, ExclusiveRuleLagsOneBlock) {
  RandomStream rng(35);
  const auto chain = oracle::random_chain(3, rng);
  SearchConfig s;
  s.gen_len = 6;
  s.steps = 3;
  s.block_size = 2;
  s.beam = 2;
  s.cumulative = CumulativeRule::exclusive;
  const auto res = order_token_search(chain.model(), {0}, s);
  const auto& bs = res.block_scores;
  EXPECT_NEAR(res.score, bs[0] + bs[1], 1e-12);
  s.cumulative = CumulativeRule::inclusive;
  const auto inc = order_token_search(chain.model(), {0}, s);
  EXPECT_NEAR(inc.score, inc.block_scores[0] + inc.block_scores[1] + inc.block_scores[2], 1e-12);
}

TEST(OrderTokenSearch, AuditShowsTopKSurvive) {
  RandomStream rng(36);
  const auto chain = oracle::random_chain(3, rng);
  SearchConfig s;
  s.gen_len = 8;
  s.steps = 8;
  s.block_size = 2;
  s.beam = 3;
  s.temperature = 1.0;
  s.seed = 3;
  const auto res = order_token_search(chain.model(), {2}, s);
  ASSERT_EQ(res.audit.size(), 4u);
  for (const auto& b : res.audit) {
    ASSERT_EQ(b.candidates.size(), 9u);
    ASSERT_EQ(b.survivors.size(), 3u);
    double worst_kept = INFINITY, best_cut = -INFINITY;
    for (const auto& c : b.candidates) {
      if (c.survived) worst_kept = std::min(worst_kept, c.cumulative);
      else best_cut = std::max(best_cut, c.cumulative);
    }
    // dedupe can keep a worse distinct sequence over a duplicate
    std::set<std::vector<Token>> cut_distinct;
    for (const auto& c : b.candidates)
      if (!c.survived && c.cumulative > worst_kept) cut_distinct.insert(c.tokens);
    for (const auto& t : cut_distinct) {
      bool dup = false;
      for (std::size_t i : b.survivors) dup |= b.candidates[i].tokens == t;
      EXPECT_TRUE(dup);
    }
  }
  double best = -INFINITY;
  for (const auto& b : res.beams) best = std::max(best, b.cumulative);
  EXPECT_EQ(res.score, best);
}

TEST(OrderTokenSearch, DeterministicPerSeed) {
  RandomStream rng(37);
  const auto chain = oracle::random_chain(4, rng);
  SearchConfig s;
  s.gen_len = 8;
  s.steps = 4;
  s.block_size = 4;
  s.beam = 3;
  s.seed = 77;
  const auto a = order_token_search(chain.model(), {1}, s);
  const auto b = order_token_search(chain.model(), {1}, s);
  EXPECT_EQ(a.best, b.best);
  EXPECT_EQ(a.score, b.score);
}

TEST(OrderSearch, MatchesOrderEnumeration) {
  RandomStream rng(38);
  for (int trial = 0; trial < 15; ++trial) {
    const auto chain = oracle::random_chain(2, rng, 1.5);
    const auto prompt = random_prompt(rng, 2, 1);
    QuadraticSearchConfig q;
    q.gen_len = 3;
    q.beam = 6;
    const auto res = order_search(chain.model(), prompt, q);
    EXPECT_NEAR(res.score, oracle::best_over_orders(chain, prompt, 3, 2), 1e-9);
    EXPECT_NEAR(res.score, oracle::sequence_logprob(chain, prompt, res.best.final.gen), 1e-9);
  }
}

TEST(TokenSearch, WideBeamIsViterbi) {
  RandomStream rng(39);
  for (int trial = 0; trial < 15; ++trial) {
    const auto chain = oracle::random_chain(2, rng, 1.5);
    const auto prompt = random_prompt(rng, 2, 1);
    QuadraticSearchConfig q;
    q.gen_len = 4;
    q.beam = 16;  // every prefix survives
    const auto res = token_search(chain.model(), prompt, q);
    EXPECT_NEAR(res.score, oracle::viterbi(chain, prompt, 4), 1e-9);
    q.beam = 2;
    const auto narrow = token_search(chain.model(), prompt, q);
    EXPECT_LE(narrow.score, res.score + 1e-12);
    EXPECT_NEAR(narrow.score, oracle::sequence_logprob(chain, prompt, narrow.best.final.gen), 1e-9);
  }
}

TEST(QuadraticSearch, NfeCounters) {
  RandomStream rng(40);
  const auto chain = oracle::random_chain(3, rng);
  QuadraticSearchConfig q;
  q.gen_len = 5;
  q.beam = 3;
  const auto res = order_search(chain.model(), {0}, q);
  const auto p = predict_nfe_quadratic(3, 5);
  EXPECT_EQ(res.nfe.denoise_evals, p.denoise);
  EXPECT_EQ(res.nfe.score_evals, p.score);
}

TEST(Nfe, PaperScaleFormula) {
  SearchConfig s;
  s.gen_len = 256;
  s.steps = 128;
  s.block_size = 32;
  s.beam = 4;
  const auto p = predict_nfe(s);
  EXPECT_EQ(p.denoise, 131072u);
  EXPECT_EQ(p.score, 32768u);
  EXPECT_EQ(p.total(), 163840u);
  EXPECT_EQ(predict_nfe_majority_vote(256, 128, 5).total(), 163840u);
}
