#pragma once

// Denoiser abstraction p(x0 | xt) and the shipped toy denoisers:
//   MarkovChainModel  exact conditionals of a first-order chain spanning prompt+gen
//   PerturbedModel    the chain with sharpened, biased (miscalibrated) outputs
//   MixtureModel      exact posterior of a weighted set of template sequences
//                     observed through a per-token noisy channel

#include <algorithm>
#include <cmath>
#include <concepts>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ots/core.hpp"

namespace ots {

/// Per generated position, a log-probability vector over the V real tokens.
struct DenoiserOutput {
  std::size_t gen_len = 0;
  std::size_t vocab_size = 0;
  std::vector<double> logp;  // row-major [gen_len][vocab_size]

  DenoiserOutput() = default;
  DenoiserOutput(std::size_t l, std::size_t v) : gen_len(l), vocab_size(v), logp(l * v, kNegInf) {}

  std::span<double> row(std::size_t i) { return {logp.data() + i * vocab_size, vocab_size}; }
  std::span<const double> row(std::size_t i) const { return {logp.data() + i * vocab_size, vocab_size}; }
  double at(std::size_t i, Token v) const { return logp[i * vocab_size + static_cast<std::size_t>(v)]; }

  bool operator==(const DenoiserOutput&) const = default;
};

template <class M>
concept Denoiser = requires(const M& m, std::span<const MaskedSeq> batch) {
  { m.vocab() } -> std::convertible_to<const Vocabulary&>;
  { m.predict(batch) } -> std::same_as<std::vector<DenoiserOutput>>;
};

template <Denoiser M>
DenoiserOutput predict_one(const M& model, const MaskedSeq& x) {
  auto out = model.predict(std::span<const MaskedSeq>(&x, 1));
  return std::move(out.front());
}

namespace detail {

inline void set_delta(std::span<double> row, Token t) {
  std::fill(row.begin(), row.end(), kNegInf);
  row[static_cast<std::size_t>(t)] = 0.0;
}

inline void normalize_row(std::span<double> row) {
  const double z = log_sum_exp(row);
  if (z == kNegInf) {
    const double u = -std::log(static_cast<double>(row.size()));
    std::fill(row.begin(), row.end(), u);
    return;
  }
  for (double& x : row) x -= z;
}

inline Token argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t v = 1; v < row.size(); ++v)
    if (row[v] > row[best]) best = v;
  return static_cast<Token>(best);
}

inline double log_of(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

}  // namespace detail

// ---------------------------------------------------------------------------
// MarkovChainModel

class MarkovChainModel {
 public:
  MarkovChainModel() = default;

  /// Builds from linear-domain probabilities. Rows and the initial vector must
  /// sum to one within `tolerance`; they are renormalized exactly afterwards.
  static MarkovChainModel from_probs(std::vector<double> initial, std::vector<std::vector<double>> transition,
                                     std::vector<std::string> names = {}, double tolerance = 1e-9) {
    const std::size_t v = initial.size();
    if (v < 2) throw DimensionError("chain needs at least 2 states");
    if (transition.size() != v)
      throw DimensionError("transition has " + std::to_string(transition.size()) + " rows for vocab_size " +
                           std::to_string(v));
    auto check = [&](const std::vector<double>& p, const std::string& what) {
      if (p.size() != v)
        throw DimensionError(what + " has " + std::to_string(p.size()) + " entries for vocab_size " +
                             std::to_string(v));
      double s = 0.0;
      for (double x : p) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw NormalizationError(what + " has a negative or non-finite entry");
        s += x;
      }
      if (std::abs(s - 1.0) > tolerance)
        throw NormalizationError(what + " sums to " + std::to_string(s) + ", expected 1");
      return s;
    };
    MarkovChainModel m;
    m.vocab_ = Vocabulary::make(v, std::move(names));
    m.log_init_.resize(v);
    m.log_trans_.resize(v * v);
    const double si = check(initial, "initial");
    for (std::size_t a = 0; a < v; ++a) m.log_init_[a] = detail::log_of(initial[a] / si);
    for (std::size_t u = 0; u < v; ++u) {
      const double s = check(transition[u], "transition row " + std::to_string(u));
      for (std::size_t w = 0; w < v; ++w) m.log_trans_[u * v + w] = detail::log_of(transition[u][w] / s);
    }
    return m;
  }

  const Vocabulary& vocab() const { return vocab_; }
  Vocabulary& mutable_vocab() { return vocab_; }
  std::size_t states() const { return vocab_.size; }
  double log_initial(Token a) const { return log_init_[static_cast<std::size_t>(a)]; }
  double log_transition(Token u, Token w) const {
    return log_trans_[static_cast<std::size_t>(u) * vocab_.size + static_cast<std::size_t>(w)];
  }
  double initial_prob(Token a) const { return std::exp(log_initial(a)); }
  double transition_prob(Token u, Token w) const { return std::exp(log_transition(u, w)); }

  std::vector<DenoiserOutput> predict(std::span<const MaskedSeq> batch) const {
    std::vector<DenoiserOutput> out;
    out.reserve(batch.size());
    for (const auto& x : batch) out.push_back(predict_single(x));
    return out;
  }

  /// Exact P(X_i = v | every observed token) by forward-backward over the
  /// chain spanning prompt and generation region.
  DenoiserOutput predict_single(const MaskedSeq& x) const {
    validate_sequence(x, vocab_);
    const std::size_t v = vocab_.size;
    const std::size_t n = x.full_length();
    const std::size_t p = x.prompt.size();
    DenoiserOutput out(x.gen.size(), v);

    auto evidence = [&](std::size_t j, std::size_t a) {
      const Token t = x.at_full(j);
      return (t == x.mask_id || static_cast<std::size_t>(t) == a) ? 0.0 : kNegInf;
    };

    std::vector<double> fwd(n * v), bwd(n * v), tmp(v);
    for (std::size_t a = 0; a < v; ++a) fwd[a] = log_init_[a] + evidence(0, a);
    for (std::size_t j = 1; j < n; ++j) {
      for (std::size_t w = 0; w < v; ++w) {
        for (std::size_t u = 0; u < v; ++u) tmp[u] = fwd[(j - 1) * v + u] + log_trans_[u * v + w];
        fwd[j * v + w] = log_sum_exp(tmp) + evidence(j, w);
      }
    }
    for (std::size_t a = 0; a < v; ++a) bwd[(n - 1) * v + a] = 0.0;
    for (std::size_t j = n - 1; j-- > 0;) {
      for (std::size_t u = 0; u < v; ++u) {
        for (std::size_t w = 0; w < v; ++w)
          tmp[w] = log_trans_[u * v + w] + evidence(j + 1, w) + bwd[(j + 1) * v + w];
        bwd[j * v + u] = log_sum_exp(tmp);
      }
    }
    const double log_z = log_sum_exp(std::span<const double>(fwd.data() + (n - 1) * v, v));

    for (std::size_t i = 0; i < x.gen.size(); ++i) {
      auto row = out.row(i);
      if (!x.is_masked(i)) {
        detail::set_delta(row, x.gen[i]);
        continue;
      }
      if (log_z == kNegInf) {
        // Observations have zero probability under the chain: no posterior exists.
        std::fill(row.begin(), row.end(), -std::log(static_cast<double>(v)));
        continue;
      }
      const std::size_t j = p + i;
      for (std::size_t a = 0; a < v; ++a) row[a] = fwd[j * v + a] + bwd[j * v + a];
      detail::normalize_row(row);
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    const std::size_t v = vocab_.size;
    j["vocab_size"] = v;
    std::vector<double> init(v);
    std::vector<std::vector<double>> trans(v, std::vector<double>(v));
    for (std::size_t a = 0; a < v; ++a) init[a] = std::exp(log_init_[a]);
    for (std::size_t u = 0; u < v; ++u)
      for (std::size_t w = 0; w < v; ++w) trans[u][w] = std::exp(log_trans_[u * v + w]);
    j["initial"] = init;
    j["transition"] = trans;
    if (!vocab_.names.empty()) j["names"] = vocab_.names;
    if (vocab_.answer_delimiters)
      j["answer_delimiters"] = {vocab_.answer_delimiters->first, vocab_.answer_delimiters->second};
    return j;
  }

 private:
  Vocabulary vocab_;
  std::vector<double> log_init_;
  std::vector<double> log_trans_;
};

/// log P(gen | prompt) under the chain; with an empty prompt the first
/// generated token is scored by the initial distribution.
inline double exact_sequence_logprob(const MarkovChainModel& model, const MaskedSeq& x) {
  if (!x.complete()) throw ArgumentError("exact_sequence_logprob needs a sequence without masks");
  validate_sequence(x, model.vocab());
  double lp = 0.0;
  for (std::size_t i = 0; i < x.gen.size(); ++i) {
    const Token cur = x.gen[i];
    if (i == 0 && x.prompt.empty()) {
      lp += model.log_initial(cur);
    } else {
      const Token prev = i == 0 ? x.prompt.back() : x.gen[i - 1];
      lp += model.log_transition(prev, cur);
    }
  }
  return lp;
}

inline double exact_sequence_logprob(const MarkovChainModel& model, std::span<const Token> tokens) {
  MaskedSeq x;
  x.gen.assign(tokens.begin(), tokens.end());
  x.layout = BlockLayout(std::max<std::size_t>(tokens.size(), 1), std::max<std::size_t>(tokens.size(), 1));
  x.mask_id = model.vocab().mask_id;
  if (tokens.empty()) return 0.0;
  return exact_sequence_logprob(model, x);
}

// ---------------------------------------------------------------------------
// PerturbedModel

class PerturbedModel {
 public:
  PerturbedModel() = default;
  PerturbedModel(MarkovChainModel base, double temperature_skew, std::vector<double> confidence_bias)
      : base_(std::move(base)), skew_(temperature_skew), bias_(std::move(confidence_bias)) {
    if (!(skew_ > 0.0) || !std::isfinite(skew_)) throw ArgumentError("temperature_skew must be positive");
  }

  const Vocabulary& vocab() const { return base_.vocab(); }
  const MarkovChainModel& base() const { return base_; }
  double temperature_skew() const { return skew_; }
  const std::vector<double>& confidence_bias() const { return bias_; }

  double bias_at(std::size_t gen_pos) const {
    if (bias_.empty() || gen_pos % 2 != 0) return 0.0;
    return bias_[gen_pos % bias_.size()];
  }

  std::vector<DenoiserOutput> predict(std::span<const MaskedSeq> batch) const {
    std::vector<DenoiserOutput> out = base_.predict(batch);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      for (std::size_t i = 0; i < batch[b].gen.size(); ++i) {
        if (!batch[b].is_masked(i)) continue;
        auto row = out[b].row(i);
        const Token top = detail::argmax_row(row);
        for (double& x : row) x *= skew_;
        row[static_cast<std::size_t>(top)] += bias_at(i);
        detail::normalize_row(row);
      }
    }
    return out;
  }

 private:
  MarkovChainModel base_;
  double skew_ = 1.0;
  std::vector<double> bias_;
};

// ---------------------------------------------------------------------------
// MixtureModel

/// Generative story: pick a template s with probability w_s, then emit each
/// token as s_i with probability 1 - eps, otherwise uniformly at random.
/// Conditionals are exact under that story; the prompt is ignored (the
/// templates are built for one prompt).
class MixtureModel {
 public:
  MixtureModel() = default;
  MixtureModel(Vocabulary vocab, std::vector<std::vector<Token>> templates, std::vector<double> log_weights,
               double noise)
      : vocab_(std::move(vocab)), templates_(std::move(templates)), log_w_(std::move(log_weights)), eps_(noise) {
    if (templates_.empty()) throw ArgumentError("mixture needs at least one template");
    if (templates_.size() != log_w_.size()) throw DimensionError("one weight per template required");
    if (!(eps_ > 0.0 && eps_ < 1.0)) throw ArgumentError("mixture noise must lie in (0, 1)");
    len_ = templates_.front().size();
    for (const auto& t : templates_) {
      if (t.size() != len_) throw DimensionError("templates must share one length");
      for (Token tok : t)
        if (!vocab_.is_real(tok)) throw VocabMismatch("template token outside vocabulary");
    }
    const double z = log_sum_exp(log_w_);
    for (double& w : log_w_) w -= z;
    log_hit_ = std::log(1.0 - eps_ + eps_ / static_cast<double>(vocab_.size));
    log_miss_ = std::log(eps_ / static_cast<double>(vocab_.size));
  }

  const Vocabulary& vocab() const { return vocab_; }
  std::size_t length() const { return len_; }
  const std::vector<std::vector<Token>>& templates() const { return templates_; }
  const std::vector<double>& log_weights() const { return log_w_; }
  double noise() const { return eps_; }

  std::vector<DenoiserOutput> predict(std::span<const MaskedSeq> batch) const {
    std::vector<DenoiserOutput> out;
    out.reserve(batch.size());
    for (const auto& x : batch) out.push_back(predict_single(x));
    return out;
  }

  DenoiserOutput predict_single(const MaskedSeq& x) const {
    validate_sequence(x, vocab_);
    if (x.gen.size() != len_) throw DimensionError("query length differs from template length");
    const std::size_t v = vocab_.size;
    std::vector<double> post = template_posterior(x);
    DenoiserOutput out(len_, v);
    const double floor = eps_ / static_cast<double>(v);
    std::vector<double> p(v);
    for (std::size_t i = 0; i < len_; ++i) {
      auto row = out.row(i);
      if (!x.is_masked(i)) {
        detail::set_delta(row, x.gen[i]);
        continue;
      }
      std::fill(p.begin(), p.end(), floor);
      for (std::size_t s = 0; s < templates_.size(); ++s)
        p[static_cast<std::size_t>(templates_[s][i])] += (1.0 - eps_) * post[s];
      for (std::size_t a = 0; a < v; ++a) row[a] = std::log(p[a]);
      detail::normalize_row(row);
    }
    return out;
  }

  /// log P(x) of a fully revealed sequence.
  double sequence_logprob(std::span<const Token> tokens) const {
    if (tokens.size() != len_) throw DimensionError("sequence length differs from template length");
    std::vector<double> terms(templates_.size());
    for (std::size_t s = 0; s < templates_.size(); ++s) {
      double lp = log_w_[s];
      for (std::size_t i = 0; i < len_; ++i) lp += tokens[i] == templates_[s][i] ? log_hit_ : log_miss_;
      terms[s] = lp;
    }
    return log_sum_exp(terms);
  }

 private:
  std::vector<double> template_posterior(const MaskedSeq& x) const {
    std::vector<double> lp(templates_.size());
    for (std::size_t s = 0; s < templates_.size(); ++s) {
      double acc = log_w_[s];
      for (std::size_t i = 0; i < len_; ++i) {
        if (x.is_masked(i)) continue;
        acc += x.gen[i] == templates_[s][i] ? log_hit_ : log_miss_;
      }
      lp[s] = acc;
    }
    const double z = log_sum_exp(lp);
    for (double& a : lp) a = std::exp(a - z);
    return lp;
  }

  Vocabulary vocab_;
  std::vector<std::vector<Token>> templates_;
  std::vector<double> log_w_;
  double eps_ = 0.05;
  std::size_t len_ = 0;
  double log_hit_ = 0.0;
  double log_miss_ = 0.0;
};

// ---------------------------------------------------------------------------
// Model files

/// A model loaded from a file: the plain chain or its perturbed variant.
class LoadedModel {
 public:
  LoadedModel() = default;
  explicit LoadedModel(MarkovChainModel m) : impl_(std::move(m)) {}
  explicit LoadedModel(PerturbedModel m) : impl_(std::move(m)) {}

  const Vocabulary& vocab() const {
    return std::visit([](const auto& m) -> const Vocabulary& { return m.vocab(); }, impl_);
  }
  std::vector<DenoiserOutput> predict(std::span<const MaskedSeq> batch) const {
    return std::visit([&](const auto& m) { return m.predict(batch); }, impl_);
  }
  bool perturbed() const { return std::holds_alternative<PerturbedModel>(impl_); }

  /// The ground-truth chain (the base of a perturbed model).
  const MarkovChainModel& chain() const {
    if (const auto* p = std::get_if<PerturbedModel>(&impl_)) return p->base();
    return std::get<MarkovChainModel>(impl_);
  }

  const std::variant<MarkovChainModel, PerturbedModel>& variant() const { return impl_; }

 private:
  std::variant<MarkovChainModel, PerturbedModel> impl_;
};

/// Parses the model document {vocab_size, initial[], transition[][], names[]?,
/// answer_delimiters[2]?, perturbation{temperature_skew, confidence_bias}?}.
inline LoadedModel parse_model(const nlohmann::json& doc) {
  using nlohmann::json;
  try {
    if (!doc.is_object()) throw ParseError("model document must be a JSON object");
    for (const char* key : {"vocab_size", "initial", "transition"})
      if (!doc.contains(key)) throw ParseError(std::string("model document lacks field '") + key + "'");
    const auto v = doc.at("vocab_size").get<std::size_t>();
    auto initial = doc.at("initial").get<std::vector<double>>();
    auto transition = doc.at("transition").get<std::vector<std::vector<double>>>();
    if (initial.size() != v)
      throw DimensionError("initial has " + std::to_string(initial.size()) + " entries for vocab_size " +
                           std::to_string(v));
    if (transition.size() != v)
      throw DimensionError("transition has " + std::to_string(transition.size()) + " rows for vocab_size " +
                           std::to_string(v));
    for (std::size_t r = 0; r < v; ++r)
      if (transition[r].size() != v)
        throw DimensionError("transition row " + std::to_string(r) + " has " + std::to_string(transition[r].size()) +
                             " columns for vocab_size " + std::to_string(v));
    std::vector<std::string> names;
    if (doc.contains("names")) names = doc.at("names").get<std::vector<std::string>>();
    auto chain = MarkovChainModel::from_probs(std::move(initial), std::move(transition), std::move(names), 1e-6);
    if (doc.contains("answer_delimiters")) {
      const auto d = doc.at("answer_delimiters").get<std::vector<Token>>();
      if (d.size() != 2 || !chain.vocab().is_real(d[0]) || !chain.vocab().is_real(d[1]))
        throw ParseError("answer_delimiters must be two real token ids");
      chain.mutable_vocab().answer_delimiters = std::make_pair(d[0], d[1]);
    }
    if (doc.contains("perturbation")) {
      const auto& p = doc.at("perturbation");
      const double skew = p.value("temperature_skew", 1.0);
      std::vector<double> bias;
      if (p.contains("confidence_bias")) {
        if (p.at("confidence_bias").is_number())
          bias.push_back(p.at("confidence_bias").get<double>());
        else
          bias = p.at("confidence_bias").get<std::vector<double>>();
      }
      return LoadedModel(PerturbedModel(std::move(chain), skew, std::move(bias)));
    }
    return LoadedModel(std::move(chain));
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model document: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ParseError(e.what());
  }
}

inline LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("cannot parse model file " + path.string() + ": " + e.what());
  }
  const std::string where = path.string() + ": ";
  try {
    return parse_model(doc);
  } catch (const NormalizationError& e) {
    throw NormalizationError(where + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(where + e.what());
  } catch (const ParseError& e) {
    throw ParseError(where + e.what());
  }
}

}  // namespace ots
