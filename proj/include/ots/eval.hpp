#pragma once

// Metrics and study harnesses: pass@k, majority voting, AR similarity, the
// order/accuracy regression and the sampling-strategy trade-off study.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ots/core.hpp"
#include "ots/decode.hpp"
#include "ots/model.hpp"
#include "ots/parallel.hpp"
#include "ots/search.hpp"

namespace ots {

// ---------------------------------------------------------------------------
// pass@k

using u128 = unsigned __int128;

struct Rational {
  u128 num = 0;
  u128 den = 1;

  bool operator==(const Rational&) const = default;
  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
};

namespace detail {

inline u128 gcd128(u128 a, u128 b) {
  while (b != 0) {
    const u128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

inline Rational reduce(u128 num, u128 den) {
  const u128 g = gcd128(num, den);
  if (g == 0) return {0, 1};
  return {num / g, den / g};
}

/// C(n, k), or nullopt if it would not fit.
inline std::optional<u128> binomial(std::size_t n, std::size_t k) {
  if (k > n) return u128{0};
  k = std::min(k, n - k);
  u128 r = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    const u128 mult = n - k + i;
    const u128 g = gcd128(r, i);
    const u128 a = r / g;
    const u128 b = mult / (i / g);
    if (a != 0 && b > ~u128{0} / a) return std::nullopt;
    r = a * b;
  }
  return r;
}

inline void check_passk_args(std::size_t n, std::size_t c, std::size_t k) {
  if (c > n) throw ArgumentError("correct count exceeds sample count");
  if (k == 0) throw ArgumentError("k must be at least 1");
  if (k > n) throw ArgumentError("k (" + std::to_string(k) + ") exceeds n (" + std::to_string(n) + ")");
}

}  // namespace detail

/// 1 - C(n-c, k) / C(n, k) as a reduced fraction; throws if C(n, k)
/// overflows 128 bits.
inline Rational pass_at_k_exact(std::size_t n, std::size_t c, std::size_t k) {
  detail::check_passk_args(n, c, k);
  const auto total = detail::binomial(n, k);
  const auto miss = detail::binomial(n - c, k);
  if (!total || !miss) throw ArgumentError("pass@k too large for exact arithmetic");
  return detail::reduce(*total - *miss, *total);
}

inline double pass_at_k(std::size_t n, std::size_t c, std::size_t k) {
  detail::check_passk_args(n, c, k);
  if (c == 0) return 0.0;
  if (n - c < k) return 1.0;
  if (detail::binomial(n, k)) return pass_at_k_exact(n, c, k).to_double();
  double miss = 1.0;
  for (std::size_t i = 0; i < k; ++i)
    miss *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
  return 1.0 - miss;
}

// ---------------------------------------------------------------------------
// Answers and voting

/// Tokens after the last open delimiter up to the next close delimiter (or
/// the end), rendered. nullopt when there is no open delimiter or the span is
/// empty.
inline std::optional<std::string> extract_answer(const Vocabulary& vocab, std::span<const Token> tokens) {
  if (!vocab.answer_delimiters) return vocab.render(tokens);
  const auto [open, close] = *vocab.answer_delimiters;
  std::size_t start = tokens.size();
  for (std::size_t i = tokens.size(); i-- > 0;)
    if (tokens[i] == open) {
      start = i + 1;
      break;
    }
  if (start > tokens.size() || start == tokens.size()) return std::nullopt;
  std::size_t end = start;
  while (end < tokens.size() && tokens[end] != close) ++end;
  if (end == start) return std::nullopt;
  return vocab.render(tokens.subspan(start, end - start));
}

/// Modal answer; ties go to the earliest first occurrence. NONE (nullopt)
/// wins only when every answer is NONE.
inline std::optional<std::string> majority_vote(std::span<const std::optional<std::string>> answers) {
  if (answers.empty()) throw ArgumentError("majority vote needs at least one answer");
  std::vector<std::string> order;
  std::map<std::string, std::size_t> counts;
  for (const auto& a : answers) {
    if (!a) continue;
    if (counts[*a]++ == 0) order.push_back(*a);
  }
  if (order.empty()) return std::nullopt;
  const std::string* best = &order.front();
  for (const auto& a : order)
    if (counts[a] > counts[*best]) best = &a;
  return *best;
}

// ---------------------------------------------------------------------------
// Order statistics

inline void check_permutation(std::span<const std::size_t> order, std::size_t len) {
  if (order.size() != len) throw ArgumentError("order length differs from L");
  std::vector<bool> seen(len, false);
  for (std::size_t p : order) {
    if (p >= len || seen[p]) throw ArgumentError("order is not a permutation of [0, L)");
    seen[p] = true;
  }
}

/// Hamming distance between an unmask order and 0, 1, ..., L-1.
inline std::size_t ar_similarity(std::span<const std::size_t> order, std::size_t len) {
  check_permutation(order, len);
  std::size_t d = 0;
  for (std::size_t i = 0; i < len; ++i) d += order[i] != i ? 1 : 0;
  return d;
}

struct DistanceBucket {
  std::size_t distance = 0;
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy() const { return count == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(count); }
};

struct CorrelationFit {
  std::optional<double> slope;  // nullopt when every sample shares one distance
  std::optional<double> intercept;
  std::vector<DistanceBucket> buckets;
};

struct OrderSample {
  std::size_t distance = 0;
  bool correct = false;
};

/// Weighted least squares of bucket accuracy on distance, weight = count.
inline CorrelationFit fit_buckets(std::vector<DistanceBucket> buckets) {
  CorrelationFit fit;
  std::erase_if(buckets, [](const DistanceBucket& b) { return b.count == 0; });
  std::sort(buckets.begin(), buckets.end(),
            [](const DistanceBucket& a, const DistanceBucket& b) { return a.distance < b.distance; });
  fit.buckets = buckets;
  double w = 0.0, mx = 0.0, my = 0.0;
  for (const auto& b : buckets) {
    const double wi = static_cast<double>(b.count);
    w += wi;
    mx += wi * static_cast<double>(b.distance);
    my += wi * b.accuracy();
  }
  if (w == 0.0) return fit;
  mx /= w;
  my /= w;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& b : buckets) {
    const double wi = static_cast<double>(b.count);
    const double dx = static_cast<double>(b.distance) - mx;
    sxx += wi * dx * dx;
    sxy += wi * dx * (b.accuracy() - my);
  }
  if (sxx == 0.0) return fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - *fit.slope * mx;
  return fit;
}

inline CorrelationFit order_accuracy_correlation(std::span<const OrderSample> samples) {
  std::map<std::size_t, DistanceBucket> by_distance;
  for (const auto& s : samples) {
    auto& b = by_distance[s.distance];
    b.distance = s.distance;
    ++b.count;
    b.correct += s.correct ? 1 : 0;
  }
  std::vector<DistanceBucket> buckets;
  for (const auto& [d, b] : by_distance) buckets.push_back(b);
  return fit_buckets(std::move(buckets));
}

// ---------------------------------------------------------------------------
// Problems and sampling studies

/// One verifiable prompt. `answer` and `score` are optional.
struct Problem {
  std::string id;
  std::vector<Token> prompt;
  std::function<bool(std::span<const Token>)> verify;
  std::function<std::optional<std::string>(std::span<const Token>)> answer;
  std::function<double(std::span<const Token>)> score;
};

struct SampleRecord {
  std::size_t problem = 0;
  std::size_t strategy = 0;  // index into the study's strategy list
  std::size_t sample = 0;
  std::vector<Token> tokens;
  std::vector<std::size_t> unmask_order;
  std::optional<std::string> answer;
  bool correct = false;
  double score = 0.0;
};

struct StrategySpec {
  Strategy strategy = Strategy::low_confidence;
  double temperature = 0.0;
};

struct StrategyCurve {
  StrategySpec spec;
  std::vector<std::size_t> ks;
  std::vector<double> pass_at_k;   // mean over problems
  double mean_distinct = 0.0;      // distinct outputs per problem
  double mean_score = 0.0;         // over all samples, when a scorer exists
};

struct TradeoffReport {
  std::size_t n = 0;
  std::vector<StrategyCurve> curves;
  std::vector<SampleRecord> samples;
};

struct StudyConfig {
  std::size_t gen_len = 16;
  std::size_t steps = 16;
  std::size_t block_size = 0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  ConfidenceSource confidence = ConfidenceSource::pre_noise;
};

/// RNG stream of one sample in a study.
inline RandomStream sample_stream(std::uint64_t seed, std::size_t problem, std::size_t strategy, std::size_t sample) {
  return RandomStream(seed).derive(Purpose::sample, {problem, strategy, sample});
}

/// `model_for(p)` supplies the denoiser of problem p.
template <class ModelFor>
TradeoffReport tradeoff_study_each(ModelFor&& model_for, std::span<const Problem> problems,
                                   std::span<const StrategySpec> strategies, std::size_t n,
                                   std::span<const std::size_t> ks, const StudyConfig& cfg) {
  if (n == 0) throw ArgumentError("n must be at least 1");
  for (std::size_t k : ks)
    if (k == 0 || k > n) throw ArgumentError("k (" + std::to_string(k) + ") outside [1, n=" + std::to_string(n) + "]");
  TradeoffReport rep;
  rep.n = n;
  const std::size_t per_problem = strategies.size() * n;
  rep.samples.resize(problems.size() * per_problem);
  parallel_for(rep.samples.size(), cfg.workers, [&](std::size_t idx) {
    const std::size_t p = idx / per_problem;
    const std::size_t s = (idx % per_problem) / n;
    const std::size_t j = idx % n;
    DecodeConfig dc;
    dc.gen_len = cfg.gen_len;
    dc.steps = cfg.steps;
    dc.block_size = cfg.block_size;
    dc.strategy = strategies[s].strategy;
    dc.temperature = strategies[s].temperature;
    dc.confidence = cfg.confidence;
    const Trajectory t = decode(model_for(p), problems[p].prompt, dc, sample_stream(cfg.seed, p, s, j));
    SampleRecord& r = rep.samples[idx];
    r.problem = p;
    r.strategy = s;
    r.sample = j;
    r.tokens = t.final.gen;
    r.unmask_order = t.unmask_order;
    r.correct = problems[p].verify(r.tokens);
    if (problems[p].answer) r.answer = problems[p].answer(r.tokens);
    if (problems[p].score) r.score = problems[p].score(r.tokens);
  });

  for (std::size_t s = 0; s < strategies.size(); ++s) {
    StrategyCurve curve;
    curve.spec = strategies[s];
    curve.ks.assign(ks.begin(), ks.end());
    curve.pass_at_k.assign(ks.size(), 0.0);
    double distinct = 0.0;
    double score = 0.0;
    for (std::size_t p = 0; p < problems.size(); ++p) {
      std::size_t c = 0;
      std::set<std::vector<Token>> outputs;
      for (std::size_t j = 0; j < n; ++j) {
        const SampleRecord& r = rep.samples[p * per_problem + s * n + j];
        c += r.correct ? 1 : 0;
        outputs.insert(r.tokens);
        score += r.score;
      }
      for (std::size_t i = 0; i < ks.size(); ++i) curve.pass_at_k[i] += pass_at_k(n, c, ks[i]);
      distinct += static_cast<double>(outputs.size());
    }
    const double np = problems.empty() ? 1.0 : static_cast<double>(problems.size());
    for (double& v : curve.pass_at_k) v /= np;
    curve.mean_distinct = distinct / np;
    curve.mean_score = score / (np * static_cast<double>(n));
    rep.curves.push_back(std::move(curve));
  }
  return rep;
}

template <Denoiser M>
TradeoffReport tradeoff_study(const M& model, std::span<const Problem> problems, std::span<const StrategySpec> strategies,
                              std::size_t n, std::span<const std::size_t> ks, const StudyConfig& cfg) {
  return tradeoff_study_each([&](std::size_t) -> const M& { return model; }, problems, strategies, n, ks, cfg);
}

/// k = 1, 2, 4, ... up to n (n itself always included).
inline std::vector<std::size_t> power_of_two_ks(std::size_t n) {
  std::vector<std::size_t> ks;
  for (std::size_t k = 1; k < n; k *= 2) ks.push_back(k);
  ks.push_back(n);
  return ks;
}

struct VoteResult {
  std::optional<std::string> answer;
  std::vector<std::optional<std::string>> answers;
  std::size_t nfe = 0;
};

/// `samples` independent decodes, then a vote over extracted answers.
template <Denoiser M>
VoteResult majority_vote_decode(const M& model, const Problem& problem, DecodeConfig cfg, std::size_t samples,
                                std::uint64_t seed) {
  if (samples == 0) throw ArgumentError("majority vote needs at least one sample");
  VoteResult res;
  for (std::size_t j = 0; j < samples; ++j) {
    const Trajectory t = decode(model, problem.prompt, cfg, RandomStream(seed).derive(Purpose::sample, {0, 0, j}));
    res.nfe += t.nfe;
    res.answers.push_back(problem.answer ? problem.answer(t.final.gen) : std::nullopt);
  }
  res.answer = majority_vote(res.answers);
  return res;
}

}  // namespace ots
