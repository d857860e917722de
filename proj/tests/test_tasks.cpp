#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "oracle.hpp"
#include "ots/tasks.hpp"

using namespace ots;
namespace cd = ots::countdown;

TEST(Countdown, EncodeDecodeRoundTrip) {
  const std::string s = "12*3-4=32;_";
  EXPECT_EQ(cd::decode_text(cd::encode(s)), s);
  EXPECT_THROW(cd::encode("1/2"), ArgumentError);
  EXPECT_EQ(cd::pad_to(cd::encode("1"), 3), (std::vector<Token>{1, cd::kPad, cd::kPad}));
  EXPECT_THROW(cd::pad_to(cd::encode("1234"), 3), ArgumentError);
}

TEST(Countdown, EvaluateUsesPrecedence) {
  EXPECT_EQ(cd::evaluate(*cd::parse_expr("2+3*4")), 14);
  EXPECT_EQ(cd::evaluate(*cd::parse_expr("10-2-3")), 5);
  EXPECT_EQ(cd::evaluate(*cd::parse_expr("2*3-4*5")), -14);
  EXPECT_FALSE(cd::parse_expr("+3"));
  EXPECT_FALSE(cd::parse_expr("3+"));
  EXPECT_FALSE(cd::parse_expr("3++4"));
  EXPECT_FALSE(cd::parse_expr(""));
}

TEST(Countdown, VerifyDiagnoses) {
  const cd::Instance inst{"t", {3, 4, 5}, 17, "3*4+5=17"};
  auto v = [&](const std::string& s) { return cd::verify(inst, cd::pad_to(cd::encode(s), 16)).diagnosis; };
  EXPECT_EQ(v("3*4+5=17"), cd::Diagnosis::ok);
  EXPECT_EQ(v("5+4*3=17"), cd::Diagnosis::ok);
  EXPECT_EQ(v("1+1=2;3*4+5=17"), cd::Diagnosis::ok);  // last segment counts
  EXPECT_EQ(v("3*4+5=18"), cd::Diagnosis::wrong_value);
  EXPECT_EQ(v("3+4+5=17"), cd::Diagnosis::wrong_value);
  EXPECT_EQ(v("3*4+6=18"), cd::Diagnosis::wrong_operands);
  EXPECT_EQ(v("3*4=12"), cd::Diagnosis::wrong_operands);
  EXPECT_EQ(v("3*4+5"), cd::Diagnosis::parse_error);
  EXPECT_EQ(v("3*4+5=17=17"), cd::Diagnosis::parse_error);
  EXPECT_EQ(v("3*4+5=1+7"), cd::Diagnosis::parse_error);
  // padding in the middle
  const auto mid = cd::encode("3*4_+5=17_______");
  EXPECT_EQ(cd::verify(inst, mid).diagnosis, cd::Diagnosis::parse_error);
}

TEST(Countdown, GeneratedInstancesAreSolvable) {
  RandomStream rng(1);
  cd::Config cfg;
  for (int i = 0; i < 200; ++i) {
    const auto inst = cd::generate(rng, cfg);
    EXPECT_GE(inst.target, 1);
    EXPECT_LE(inst.solution.size(), cfg.gen_len);
    EXPECT_GE(inst.operands.size(), 2u);
    EXPECT_LE(inst.operands.size(), 3u);
    EXPECT_TRUE(cd::verify(inst, cd::pad_to(cd::encode(inst.solution), 16)).ok) << inst.solution;
  }
  cfg.max_operands = 5;
  EXPECT_THROW(cd::generate(rng, cfg), ArgumentError);
}

TEST(Countdown, AllExpressionsCoverOrdersAndOperators) {
  const auto e = cd::all_expressions({2, 3});
  EXPECT_EQ(e.size(), 6u);  // 2 orders x 3 operators
  std::set<std::int64_t> values;
  for (const auto& x : e) values.insert(x.value);
  EXPECT_EQ(values, (std::set<std::int64_t>{-1, 1, 5, 6}));
  EXPECT_EQ(cd::all_expressions({1, 1, 2}).size(), 27u);  // 3 distinct orders x 9
}

TEST(Countdown, PriorPutsMassOnTemplates) {
  const cd::Instance inst{"t", {6, 7}, 42, "6*7=42"};
  const auto prior = cd::make_prior(inst, 16, {}, RandomStream(2));
  // every template is a complete "expr=number" line; honest lines with a
  // negative value ("6-7=-1") do not parse as an answer
  for (const auto& t : prior.templates()) {
    if (cd::decode_text(t).find("=-") != std::string::npos) continue;
    const auto v = cd::verify(inst, t);
    EXPECT_NE(v.diagnosis, cd::Diagnosis::parse_error);
  }
  const MaskedSeq x = MaskedSeq::fully_masked(inst.prompt(), BlockLayout(16, 16), prior.vocab().mask_id);
  const auto out = predict_one(prior, x);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(log_sum_exp(out.row(i)), 0.0, 1e-12);
}

TEST(Countdown, JsonRoundTrip) {
  const cd::Instance inst{"cd-0001", {1, 2, 3}, 6, "1+2+3=6"};
  EXPECT_EQ(cd::instance_from_json(cd::to_json(inst)), inst);
}

TEST(ChainTask, VerifyUsesConditionalLogprob) {
  RandomStream rng(3);
  const auto c = oracle::random_chain(3, rng);
  const auto m = c.model();
  const chain_task::Instance inst{"c", {0, 2}, -3.0};
  const std::vector<Token> gen{1, 1, 0};
  const auto v = chain_task::verify(inst, gen, m);
  EXPECT_NEAR(v.logprob, oracle::sequence_logprob(c, {0, 2}, gen), 1e-12);
  EXPECT_EQ(v.ok, v.logprob >= -3.0);
  const std::vector<Token> masked{1, 3, 0};
  EXPECT_FALSE(chain_task::verify(inst, masked, m).ok);
}

TEST(ChainTask, GreedyContinuationAlwaysPasses) {
  RandomStream rng(4);
  const auto c = oracle::random_chain(4, rng, 2.0);
  const auto m = c.model();
  for (std::size_t i = 0; i < 30; ++i) {
    RandomStream r = rng.derive({i});
    const auto inst = chain_task::generate(m, r, 3, 6, 0.0);  // threshold above every score
    const auto greedy = chain_task::argmax_continuation(m, inst.prompt, 6);
    EXPECT_EQ(greedy, oracle::greedy_walk(c, inst.prompt, 6));
    EXPECT_TRUE(chain_task::verify(inst, greedy, m).ok);
  }
}

TEST(ChainTask, JsonKeepsMissingThreshold) {
  const chain_task::Instance a{"a", {1, 2}, kNegInf};
  EXPECT_TRUE(chain_task::to_json(a)["threshold"].is_null());
  EXPECT_EQ(chain_task::instance_from_json(chain_task::to_json(a)), a);
  const chain_task::Instance b{"b", {0}, -2.5};
  EXPECT_EQ(chain_task::instance_from_json(chain_task::to_json(b)), b);
}

TEST(ChainTask, PercentileIsNearestRank) {
  const std::vector<double> v{5, 1, 4, 2, 3};
  EXPECT_EQ(chain_task::percentile(v, 0.6), 3.0);
  EXPECT_EQ(chain_task::percentile(v, 0.0), 1.0);
  EXPECT_EQ(chain_task::percentile(v, 1.0), 5.0);
  EXPECT_THROW(chain_task::percentile({}, 0.5), ArgumentError);
}

TEST(ChainTask, FrozenThresholdReproduces) {
  const auto model = load_model(OTS_SOURCE_DIR "/models/chain6_perturbed.json");
  const double t = chain_task::calibrate_threshold(model, model.chain(), {});
  EXPECT_NEAR(t, -16.78, 5e-3);
}
