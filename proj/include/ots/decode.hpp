#pragma once

// Single-trajectory reverse process: Gumbel-perturbed proposals, the three
// transfer (remasking) policies and the block-wise decode loop.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "ots/core.hpp"
#include "ots/model.hpp"

namespace ots {

enum class Strategy { random, low_confidence, ar };

/// Which value ranks positions for low-confidence transfer.
enum class ConfidenceSource { pre_noise, post_noise };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::low_confidence: return "low_confidence";
    case Strategy::ar: return "ar";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view name) {
  if (name == "random") return Strategy::random;
  if (name == "low_confidence" || name == "low-confidence") return Strategy::low_confidence;
  if (name == "ar") return Strategy::ar;
  throw ArgumentError("unknown strategy '" + std::string(name) + "'");
}

struct DecodeConfig {
  std::size_t gen_len = 16;
  std::size_t steps = 16;
  Strategy strategy = Strategy::low_confidence;
  double temperature = 0.0;
  std::size_t block_size = 0;  // 0 means one block spanning the whole region
  std::uint64_t seed = 0;
  ConfidenceSource confidence = ConfidenceSource::pre_noise;

  // AR decoding runs one token per step with per-token blocks.
  std::size_t effective_block_size() const {
    if (strategy == Strategy::ar) return 1;
    return block_size == 0 ? gen_len : block_size;
  }
  std::size_t effective_steps() const { return strategy == Strategy::ar ? gen_len : steps; }
  BlockLayout layout() const { return BlockLayout(gen_len, effective_block_size()); }
};

struct StepPlan {
  std::size_t block = 0;
  std::size_t count = 0;
  bool last_in_block = false;
};

/// Apportions `steps` to blocks (S/B each, remainder to earlier blocks) and
/// each block's tokens to its steps (floor, remainder to earlier steps).
inline std::vector<StepPlan> plan_steps(const BlockLayout& layout, std::size_t steps) {
  const std::size_t nb = layout.num_blocks();
  if (steps == 0) throw ArgumentError("steps must be positive");
  if (steps > layout.gen_len())
    throw ArgumentError("steps (" + std::to_string(steps) + ") exceed generation length (" +
                        std::to_string(layout.gen_len()) + ")");
  if (steps < nb)
    throw ArgumentError("steps (" + std::to_string(steps) + ") fewer than blocks (" + std::to_string(nb) + ")");
  std::vector<StepPlan> plan;
  plan.reserve(steps);
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t sb = steps / nb + (b < steps % nb ? 1 : 0);
    const std::size_t len = layout.range(b).size();
    if (sb > len)
      throw ArgumentError("block " + std::to_string(b) + " has " + std::to_string(len) + " tokens but receives " +
                          std::to_string(sb) + " steps");
    for (std::size_t k = 0; k < sb; ++k) plan.push_back({b, len / sb + (k < len % sb ? 1 : 0), k + 1 == sb});
  }
  return plan;
}

inline std::vector<std::size_t> tokens_per_step(const BlockLayout& layout, std::size_t steps) {
  std::vector<std::size_t> out;
  for (const auto& p : plan_steps(layout, steps)) out.push_back(p.count);
  return out;
}

struct StepRecord {
  std::size_t step = 0;
  std::size_t block = 0;
  std::vector<std::size_t> positions;
  std::vector<Token> tokens;
  std::vector<double> confidences;

  bool operator==(const StepRecord&) const = default;
};

struct Trajectory {
  MaskedSeq final;
  std::vector<std::size_t> unmask_order;
  std::vector<StepRecord> steps;
  std::size_t nfe = 0;  // model predicts

  bool operator==(const Trajectory&) const = default;
};

// ---------------------------------------------------------------------------

/// Adds tau-scaled standard Gumbel noise; tau = 0 leaves the logits unchanged.
/// argmax(l + tau g) samples softmax(l / tau).
inline DenoiserOutput gumbel_perturb(const DenoiserOutput& logits, double tau, RandomStream& rng) {
  if (tau < 0.0) throw ArgumentError("temperature must be non-negative");
  DenoiserOutput out = logits;
  if (tau == 0.0) return out;
  for (double& x : out.logp) x += tau * rng.gumbel();
  return out;
}

/// Full-sequence candidate x0 with the confidence of each chosen token.
struct Proposal {
  std::vector<Token> tokens;
  std::vector<double> confidence;

  bool operator==(const Proposal&) const = default;
};

inline Proposal propose_from(const DenoiserOutput& raw, const DenoiserOutput& perturbed, ConfidenceSource source) {
  Proposal p;
  p.tokens.resize(raw.gen_len);
  p.confidence.resize(raw.gen_len);
  for (std::size_t i = 0; i < raw.gen_len; ++i) {
    const Token t = detail::argmax_row(perturbed.row(i));
    p.tokens[i] = t;
    p.confidence[i] = source == ConfidenceSource::pre_noise ? std::exp(raw.at(i, t)) : perturbed.at(i, t);
  }
  return p;
}

inline Proposal propose_x0(const DenoiserOutput& output, double tau, RandomStream& rng,
                           ConfidenceSource source = ConfidenceSource::pre_noise) {
  return propose_from(output, gumbel_perturb(output, tau, rng), source);
}

/// Writes the proposal into every masked slot; committed slots keep their token.
inline MaskedSeq fill_masks(const MaskedSeq& x, std::span<const Token> proposal) {
  MaskedSeq full = x;
  for (std::size_t i = 0; i < full.gen.size(); ++i)
    if (full.is_masked(i)) full.gen[i] = proposal[i];
  return full;
}

struct TransferResult {
  MaskedSeq x;
  std::vector<std::size_t> positions;  // in selection order
};

/// Commits `n` proposed tokens inside the current block. Which masked slots
/// get them is the strategy: highest confidence, uniform subset, or leftmost.
inline TransferResult transfer_tokens(const MaskedSeq& x, const Proposal& proposal, std::size_t n, Strategy strategy,
                                      RandomStream& rng) {
  const std::size_t b = current_block(x);
  if (b == x.layout.num_blocks()) {
    if (n == 0) return {x, {}};
    throw ArgumentError("no masked positions remain");
  }
  const BlockRange r = x.layout.range(b);
  std::vector<std::size_t> cand;
  for (std::size_t i = r.begin; i < r.end; ++i)
    if (x.is_masked(i)) cand.push_back(i);
  if (n > cand.size())
    throw ArgumentError("cannot transfer " + std::to_string(n) + " tokens: block " + std::to_string(b) + " has " +
                        std::to_string(cand.size()) + " masked positions");

  std::vector<std::size_t> chosen;
  switch (strategy) {
    case Strategy::low_confidence: {
      std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t c) {
        return proposal.confidence[a] > proposal.confidence[c];
      });
      chosen.assign(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n));
      break;
    }
    case Strategy::ar:
      chosen.assign(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n));
      break;
    case Strategy::random: {
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = k + static_cast<std::size_t>(rng.below(cand.size() - k));
        std::swap(cand[k], cand[j]);
      }
      chosen.assign(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n));
      break;
    }
  }
  TransferResult res{x, chosen};
  for (std::size_t i : chosen) res.x.gen[i] = proposal.tokens[i];
  return res;
}

namespace detail {

inline void check_decode_config(const DecodeConfig& cfg) {
  if (cfg.temperature < 0.0 || !std::isfinite(cfg.temperature))
    throw ArgumentError("temperature must be a finite non-negative number");
  if (cfg.gen_len == 0) throw ArgumentError("gen_len must be positive");
}

inline StepRecord make_record(std::size_t step, std::size_t block, const TransferResult& tr, const Proposal& p) {
  StepRecord rec{step, block, tr.positions, {}, {}};
  for (std::size_t i : tr.positions) {
    rec.tokens.push_back(p.tokens[i]);
    rec.confidences.push_back(p.confidence[i]);
  }
  return rec;
}

}  // namespace detail

/// One reverse-process run from a fully masked generation region.
template <Denoiser M>
Trajectory decode(const M& model, const std::vector<Token>& prompt, const DecodeConfig& cfg, const RandomStream& rng) {
  detail::check_decode_config(cfg);
  const Vocabulary& vocab = model.vocab();
  const BlockLayout layout = cfg.layout();
  const auto plan = plan_steps(layout, cfg.effective_steps());

  Trajectory traj;
  MaskedSeq x = MaskedSeq::fully_masked(prompt, layout, vocab.mask_id);
  validate_sequence(x, vocab);
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const DenoiserOutput out = predict_one(model, x);
    ++traj.nfe;
    RandomStream noise = rng.derive(Purpose::gumbel, {0, 0, k});
    RandomStream pick = rng.derive(Purpose::transfer, {0, 0, k});
    const Proposal prop = propose_x0(out, cfg.temperature, noise, cfg.confidence);
    TransferResult tr = transfer_tokens(x, prop, plan[k].count, cfg.strategy, pick);
    assert(follows_semi_ar(tr.x));
    traj.steps.push_back(detail::make_record(k, plan[k].block, tr, prop));
    traj.unmask_order.insert(traj.unmask_order.end(), tr.positions.begin(), tr.positions.end());
    x = std::move(tr.x);
  }
  traj.final = std::move(x);
  return traj;
}

template <Denoiser M>
Trajectory decode(const M& model, const std::vector<Token>& prompt, const DecodeConfig& cfg) {
  return decode(model, prompt, cfg, RandomStream(cfg.seed));
}

}  // namespace ots
