#pragma once

// Toy benchmark tasks: mini-Countdown (reach a target from operands with
// + - *) and a chain-likelihood task native to the Markov model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ots/core.hpp"
#include "ots/decode.hpp"
#include "ots/eval.hpp"
#include "ots/model.hpp"

namespace ots {

// ---------------------------------------------------------------------------
// Countdown

namespace countdown {

inline constexpr Token kPlus = 10;
inline constexpr Token kMinus = 11;
inline constexpr Token kTimes = 12;
inline constexpr Token kEquals = 13;
inline constexpr Token kSep = 14;
inline constexpr Token kPad = 15;

inline Vocabulary vocabulary() {
  Vocabulary v = Vocabulary::make(16, {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "-", "*", "=", ";", "_"});
  v.answer_delimiters = std::make_pair(kEquals, kPad);
  return v;
}

inline std::vector<Token> encode(std::string_view text) {
  std::vector<Token> out;
  for (char ch : text) {
    if (ch >= '0' && ch <= '9') out.push_back(ch - '0');
    else if (ch == '+') out.push_back(kPlus);
    else if (ch == '-') out.push_back(kMinus);
    else if (ch == '*') out.push_back(kTimes);
    else if (ch == '=') out.push_back(kEquals);
    else if (ch == ';') out.push_back(kSep);
    else if (ch == '_') out.push_back(kPad);
    else if (ch == ' ') continue;
    else throw ArgumentError(std::string("character '") + ch + "' has no countdown token");
  }
  return out;
}

inline std::string decode_text(std::span<const Token> tokens) {
  static const char* sym = "0123456789+-*=;_";
  std::string out;
  for (Token t : tokens) out += (t >= 0 && t < 16) ? sym[t] : '?';
  return out;
}

inline std::vector<Token> pad_to(std::vector<Token> tokens, std::size_t len) {
  if (tokens.size() > len) throw ArgumentError("text longer than generation length");
  tokens.resize(len, kPad);
  return tokens;
}

struct Config {
  std::size_t min_operands = 2;
  std::size_t max_operands = 3;
  int max_operand = 49;
  std::size_t gen_len = 16;
};

struct Instance {
  std::string id;
  std::vector<int> operands;
  int target = 0;
  std::string solution;  // the generating expression

  /// "a;b;c=target"
  std::string prompt_text() const {
    std::string s;
    for (std::size_t i = 0; i < operands.size(); ++i) s += (i ? ";" : "") + std::to_string(operands[i]);
    return s + "=" + std::to_string(target);
  }
  std::vector<Token> prompt() const { return encode(prompt_text()); }

  bool operator==(const Instance&) const = default;
};

enum class Diagnosis { ok, parse_error, wrong_operands, wrong_value };

inline std::string_view to_string(Diagnosis d) {
  switch (d) {
    case Diagnosis::ok: return "ok";
    case Diagnosis::parse_error: return "parse_error";
    case Diagnosis::wrong_operands: return "wrong_operands";
    case Diagnosis::wrong_value: return "wrong_value";
  }
  return "?";
}

struct Verdict {
  bool ok = false;
  Diagnosis diagnosis = Diagnosis::parse_error;
};

struct ParsedExpr {
  std::vector<std::int64_t> numbers;
  std::vector<char> ops;  // between numbers
};

/// Digits and operators only, alternating, no leading operator, numbers of at
/// most 9 digits.
inline std::optional<ParsedExpr> parse_expr(std::string_view s) {
  ParsedExpr e;
  std::size_t i = 0;
  for (;;) {
    const std::size_t start = i;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
    if (i == start || i - start > 9) return std::nullopt;
    e.numbers.push_back(std::stoll(std::string(s.substr(start, i - start))));
    if (i == s.size()) return e;
    if (s[i] != '+' && s[i] != '-' && s[i] != '*') return std::nullopt;
    e.ops.push_back(s[i++]);
  }
}

/// Standard precedence (* over + and -), left-associative.
inline std::int64_t evaluate(const ParsedExpr& e) {
  std::int64_t total = 0;
  std::int64_t term = e.numbers[0];
  int sign = 1;
  for (std::size_t i = 0; i < e.ops.size(); ++i) {
    const std::int64_t next = e.numbers[i + 1];
    if (e.ops[i] == '*') {
      term *= next;
    } else {
      total += sign * term;
      sign = e.ops[i] == '+' ? 1 : -1;
      term = next;
    }
  }
  return total + sign * term;
}

/// Checks the last ';'-separated segment of the decoded text (pad stripped)
/// as "expr=number".
inline Verdict verify(const Instance& inst, std::span<const Token> tokens) {
  std::string text = decode_text(tokens);
  if (const auto pad = text.find('_'); pad != std::string::npos) {
    if (text.find_first_not_of('_', pad) != std::string::npos) return {false, Diagnosis::parse_error};
    text.resize(pad);
  }
  if (const auto sep = text.rfind(';'); sep != std::string::npos) text = text.substr(sep + 1);
  const auto eq = text.find('=');
  if (eq == std::string::npos || text.find('=', eq + 1) != std::string::npos) return {false, Diagnosis::parse_error};
  const std::string_view lhs = std::string_view(text).substr(0, eq);
  const std::string_view rhs = std::string_view(text).substr(eq + 1);
  const auto expr = parse_expr(lhs);
  if (!expr) return {false, Diagnosis::parse_error};
  const auto stated = parse_expr(rhs);
  if (!stated || !stated->ops.empty()) return {false, Diagnosis::parse_error};

  std::vector<std::int64_t> used = expr->numbers;
  std::vector<std::int64_t> given(inst.operands.begin(), inst.operands.end());
  std::sort(used.begin(), used.end());
  std::sort(given.begin(), given.end());
  if (used != given) return {false, Diagnosis::wrong_operands};
  if (evaluate(*expr) != inst.target || stated->numbers[0] != inst.target) return {false, Diagnosis::wrong_value};
  return {true, Diagnosis::ok};
}

struct Expression {
  std::string text;
  std::int64_t value = 0;
};

/// Every expression using each operand exactly once, over all operand
/// orders and operator choices.
inline std::vector<Expression> all_expressions(std::vector<int> operands) {
  static const char ops[] = {'+', '-', '*'};
  std::vector<Expression> out;
  std::sort(operands.begin(), operands.end());
  const std::size_t gaps = operands.size() - 1;
  std::size_t combos = 1;
  for (std::size_t i = 0; i < gaps; ++i) combos *= 3;
  do {
    for (std::size_t c = 0; c < combos; ++c) {
      std::string text = std::to_string(operands[0]);
      std::size_t code = c;
      for (std::size_t i = 0; i < gaps; ++i) {
        text += ops[code % 3];
        code /= 3;
        text += std::to_string(operands[i + 1]);
      }
      out.push_back({text, evaluate(*parse_expr(text))});
    }
  } while (std::next_permutation(operands.begin(), operands.end()));
  return out;
}

inline Instance generate(RandomStream& rng, const Config& cfg, std::string id = {}) {
  if (cfg.min_operands < 2 || cfg.max_operands < cfg.min_operands || cfg.max_operands > 4)
    throw ArgumentError("operand count bounds must satisfy 2 <= min <= max <= 4");
  if (cfg.max_operand < 1 || cfg.max_operand > 49) throw ArgumentError("max_operand must lie in [1, 49]");
  static const char ops[] = {'+', '-', '*'};
  for (;;) {
    const std::size_t count = cfg.min_operands + rng.below(cfg.max_operands - cfg.min_operands + 1);
    Instance inst;
    inst.id = std::move(id);
    std::string text;
    for (std::size_t i = 0; i < count; ++i) {
      const int v = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_operand)));
      inst.operands.push_back(v);
      if (i > 0) text += ops[rng.below(3)];
      text += std::to_string(v);
    }
    const std::int64_t target = evaluate(*parse_expr(text));
    if (target < 1) continue;
    const std::string full = text + "=" + std::to_string(target);
    if (full.size() > cfg.gen_len) continue;
    inst.target = static_cast<int>(target);
    inst.solution = full;
    return inst;
  }
}

/// Template prior over completions for one instance. Each expression e over
/// the operands contributes "e=value(e)" and, when value(e) != target, the
/// hallucinated "e=target". Log-weights fall off with |value - target|.
struct PriorConfig {
  double distance_penalty = 0.05;   // per unit of |value - target|
  double hallucination_bonus = 1.0;  // extra log-weight of "e=target" with a wrong e
  double correct_bonus = 1.0;        // extra log-weight of correct completions
  double jitter = 0.5;               // std of per-template Gaussian log-weight noise
  double noise = 0.05;               // per-token corruption of the emission channel
};

inline MixtureModel make_prior(const Instance& inst, std::size_t gen_len, const PriorConfig& pc, RandomStream rng) {
  std::vector<std::vector<Token>> templates;
  std::vector<double> log_w;
  std::vector<std::string> seen;
  auto add = [&](const std::string& text, double w) {
    if (text.size() > gen_len) return;
    if (std::find(seen.begin(), seen.end(), text) != seen.end()) return;
    seen.push_back(text);
    templates.push_back(pad_to(encode(text), gen_len));
    log_w.push_back(w + pc.jitter * rng.normal());
  };
  for (const auto& e : all_expressions(inst.operands)) {
    const double dist = std::abs(static_cast<double>(e.value - inst.target));
    const std::string t = std::to_string(inst.target);
    if (e.value == inst.target) {
      add(e.text + "=" + t, pc.correct_bonus);
    } else {
      add(e.text + "=" + std::to_string(e.value), -pc.distance_penalty * dist);
      add(e.text + "=" + t, -pc.distance_penalty * dist + pc.hallucination_bonus);
    }
  }
  return MixtureModel(vocabulary(), std::move(templates), std::move(log_w), pc.noise);
}

inline nlohmann::json to_json(const Instance& inst) {
  return {{"id", inst.id}, {"operands", inst.operands}, {"target", inst.target}, {"solution", inst.solution}};
}

inline Instance instance_from_json(const nlohmann::json& j) {
  Instance inst;
  inst.id = j.value("id", std::string{});
  inst.operands = j.at("operands").get<std::vector<int>>();
  inst.target = j.at("target").get<int>();
  inst.solution = j.value("solution", std::string{});
  return inst;
}

inline Problem to_problem(const Instance& inst) {
  Problem p;
  p.id = inst.id;
  p.prompt = inst.prompt();
  p.verify = [inst](std::span<const Token> t) { return verify(inst, t).ok; };
  const Vocabulary voc = vocabulary();
  p.answer = [voc](std::span<const Token> t) { return extract_answer(voc, t); };
  return p;
}

}  // namespace countdown

// ---------------------------------------------------------------------------
// Chain task

namespace chain_task {

struct Instance {
  std::string id;
  std::vector<Token> prompt;
  double threshold = kNegInf;  // on log P(gen | prompt)

  bool operator==(const Instance&) const = default;
};

struct Verdict {
  bool ok = false;
  double logprob = kNegInf;
  std::string diagnosis;
};

inline Verdict verify(const Instance& inst, std::span<const Token> gen, const MarkovChainModel& chain) {
  for (Token t : gen)
    if (!chain.vocab().is_real(t)) return {false, kNegInf, "mask or foreign token in output"};
  std::vector<Token> full = inst.prompt;
  full.insert(full.end(), gen.begin(), gen.end());
  double lp = 0.0;
  for (std::size_t i = inst.prompt.size(); i < full.size(); ++i)
    lp += i == 0 ? chain.log_initial(full[0]) : chain.log_transition(full[i - 1], full[i]);
  if (inst.threshold == kNegInf) return {true, lp, "ok"};
  const bool ok = lp >= inst.threshold;
  return {ok, lp, ok ? "ok" : "below threshold"};
}

/// Greedy left-to-right continuation under the exact chain.
inline std::vector<Token> argmax_continuation(const MarkovChainModel& chain, std::span<const Token> prompt,
                                              std::size_t gen_len) {
  std::vector<Token> out;
  const std::size_t v = chain.vocab().size;
  for (std::size_t i = 0; i < gen_len; ++i) {
    const bool first = prompt.empty() && out.empty();
    const Token prev = out.empty() ? (prompt.empty() ? 0 : prompt.back()) : out.back();
    Token best = 0;
    double best_lp = kNegInf;
    for (std::size_t a = 0; a < v; ++a) {
      const auto tok = static_cast<Token>(a);
      const double lp = first ? chain.log_initial(tok) : chain.log_transition(prev, tok);
      if (lp > best_lp) {
        best_lp = lp;
        best = tok;
      }
    }
    out.push_back(best);
  }
  return out;
}

/// Prompt sampled from the chain; threshold capped so the argmax
/// continuation always passes.
inline Instance generate(const MarkovChainModel& chain, RandomStream& rng, std::size_t prompt_len,
                         std::size_t gen_len, double threshold, std::string id = {}) {
  Instance inst;
  inst.id = std::move(id);
  const std::size_t v = chain.vocab().size;
  auto draw = [&](auto&& logp) {
    double u = rng.uniform();
    for (std::size_t a = 0; a < v; ++a) {
      u -= std::exp(logp(static_cast<Token>(a)));
      if (u <= 0.0) return static_cast<Token>(a);
    }
    return static_cast<Token>(v - 1);
  };
  for (std::size_t i = 0; i < prompt_len; ++i) {
    if (i == 0) {
      inst.prompt.push_back(draw([&](Token a) { return chain.log_initial(a); }));
    } else {
      const Token prev = inst.prompt.back();
      inst.prompt.push_back(draw([&](Token a) { return chain.log_transition(prev, a); }));
    }
  }
  const auto best = argmax_continuation(chain, inst.prompt, gen_len);
  inst.threshold = std::min(threshold, verify({inst.id, inst.prompt, kNegInf}, best, chain).logprob);
  return inst;
}

inline nlohmann::json to_json(const Instance& inst) {
  nlohmann::json j{{"id", inst.id}, {"prompt", inst.prompt}};
  if (inst.threshold == kNegInf) j["threshold"] = nullptr;
  else j["threshold"] = inst.threshold;
  return j;
}

inline Instance instance_from_json(const nlohmann::json& j) {
  Instance inst;
  inst.id = j.value("id", std::string{});
  inst.prompt = j.at("prompt").get<std::vector<Token>>();
  inst.threshold = j.at("threshold").is_null() ? kNegInf : j.at("threshold").get<double>();
  return inst;
}

inline Problem to_problem(const Instance& inst, const MarkovChainModel& chain) {
  Problem p;
  p.id = inst.id;
  p.prompt = inst.prompt;
  p.verify = [inst, &chain](std::span<const Token> t) { return verify(inst, t, chain).ok; };
  p.score = [inst, &chain](std::span<const Token> t) { return verify(inst, t, chain).logprob; };
  return p;
}

/// q-quantile (0..1) by nearest rank.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ArgumentError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

struct Calibration {
  std::size_t prompts = 50;
  std::size_t samples = 8;  // decodes per prompt
  std::size_t prompt_len = 4;
  std::size_t gen_len = 16;
  std::size_t steps = 16;
  double temperature = 0.8;
  double quantile = 0.6;
  std::uint64_t seed = 99;
};

/// Quantile of log P(gen | prompt) over random-remasking decodes of `model`
/// on prompts sampled from `chain`. Used once to freeze the task threshold.
template <Denoiser M>
double calibrate_threshold(const M& model, const MarkovChainModel& chain, const Calibration& c) {
  const RandomStream root(c.seed);
  DecodeConfig dc;
  dc.gen_len = c.gen_len;
  dc.steps = c.steps;
  dc.strategy = Strategy::random;
  dc.temperature = c.temperature;
  std::vector<double> scores;
  for (std::size_t i = 0; i < c.prompts; ++i) {
    RandomStream rng = root.derive(Purpose::task, {i});
    const Instance inst = generate(chain, rng, c.prompt_len, c.gen_len, kNegInf);
    for (std::size_t j = 0; j < c.samples; ++j) {
      const Trajectory t = decode(model, inst.prompt, dc, root.derive(Purpose::sample, {i, j}));
      scores.push_back(verify(inst, t.final.gen, chain).logprob);
    }
  }
  return percentile(std::move(scores), c.quantile);
}

}  // namespace chain_task

}  // namespace ots
