#pragma once

// Trajectory scorers. All of them mask a set of positions in a full-sequence
// context, run one predict, and sum log-probabilities of the context's tokens
// at the scored positions.
//
//   ots            scores the newly revealed positions, rest of x0 as context
//   all_blocks     scores everything revealed so far, used without summing
//   future_blocks  scores the newly revealed positions with the future masked
//   ar             left-to-right chain rule, one predict per token

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ots/core.hpp"
#include "ots/model.hpp"

namespace ots {

enum class Estimator { ots, all_blocks, future_blocks };

inline std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::ots: return "ots";
    case Estimator::all_blocks: return "all_blocks";
    case Estimator::future_blocks: return "future_blocks";
  }
  return "?";
}

inline Estimator parse_estimator(std::string_view name) {
  if (name == "ots") return Estimator::ots;
  if (name == "all_blocks" || name == "all-blocks") return Estimator::all_blocks;
  if (name == "future_blocks" || name == "future-blocks") return Estimator::future_blocks;
  throw ArgumentError("unknown estimator '" + std::string(name) + "'");
}

/// log(1e-300); scored tokens never contribute less than this.
inline const double kScoreFloor = std::log(1e-300);

struct PositionSets {
  std::vector<std::size_t> delta;     // masked in x_t, revealed in x_s
  std::vector<std::size_t> revealed;  // revealed in x_s (generation region only)
  std::vector<std::size_t> future;    // still masked in x_s

  bool operator==(const PositionSets&) const = default;
};

inline PositionSets newly_revealed(const MaskedSeq& x_t, const MaskedSeq& x_s) {
  if (x_t.gen.size() != x_s.gen.size()) throw RefinementError("sequences differ in generation length");
  if (x_t.prompt != x_s.prompt) throw RefinementError("sequences differ in prompt");
  PositionSets sets;
  for (std::size_t i = 0; i < x_s.gen.size(); ++i) {
    const bool was_masked = x_t.is_masked(i);
    const bool now_masked = x_s.is_masked(i);
    if (!was_masked && (now_masked || x_t.gen[i] != x_s.gen[i]))
      throw RefinementError("x_s contradicts x_t at position " + std::to_string(i));
    if (now_masked) {
      sets.future.push_back(i);
    } else {
      sets.revealed.push_back(i);
      if (was_masked) sets.delta.push_back(i);
    }
  }
  return sets;
}

struct BlockScore {
  double value = 0.0;
  std::size_t evals = 0;  // model predicts used
  bool empty = false;     // nothing to score; value is 0

  bool operator==(const BlockScore&) const = default;
};

namespace detail {

inline void require_full(const MaskedSeq& x0) {
  if (!x0.complete()) throw ArgumentError("scoring context must be fully revealed");
}

inline double floored(double lp) { return std::max(lp, kScoreFloor); }

}  // namespace detail

/// Masks `masked` in `context`, predicts once, and sums log p(context[i]) over
/// `scored`.
template <Denoiser M>
BlockScore score_masked(const M& model, const MaskedSeq& context, std::span<const std::size_t> masked,
                        std::span<const std::size_t> scored) {
  detail::require_full(context);
  if (scored.empty()) return {0.0, 0, true};
  MaskedSeq query = context;
  for (std::size_t i : masked) query.gen[i] = query.mask_id;
  const DenoiserOutput out = predict_one(model, query);
  double total = 0.0;
  for (std::size_t i : scored) total += detail::floored(out.at(i, context.gen[i]));
  return {total, 1, false};
}

template <Denoiser M>
BlockScore score_ots(const M& model, const MaskedSeq& x_t, const MaskedSeq& x_s, const MaskedSeq& x0) {
  const PositionSets sets = newly_revealed(x_t, x_s);
  return score_masked(model, x0, sets.delta, sets.delta);
}

/// With `mask_block` set, the positions of that block are masked as well.
template <Denoiser M>
BlockScore score_all_blocks(const M& model, const MaskedSeq& x_s, const MaskedSeq& x0,
                            std::optional<std::size_t> mask_block = std::nullopt) {
  std::vector<std::size_t> revealed;
  for (std::size_t i = 0; i < x_s.gen.size(); ++i)
    if (!x_s.is_masked(i)) revealed.push_back(i);
  std::vector<std::size_t> masked = revealed;
  if (mask_block && *mask_block < x_s.layout.num_blocks()) {
    const BlockRange r = x_s.layout.range(*mask_block);
    for (std::size_t i = r.begin; i < r.end; ++i)
      if (x_s.is_masked(i)) masked.push_back(i);
  }
  return score_masked(model, x0, masked, revealed);
}

template <Denoiser M>
BlockScore score_future_blocks(const M& model, const MaskedSeq& x_t, const MaskedSeq& x_s, const MaskedSeq& x0) {
  const PositionSets sets = newly_revealed(x_t, x_s);
  std::vector<std::size_t> masked = sets.delta;
  masked.insert(masked.end(), sets.future.begin(), sets.future.end());
  return score_masked(model, x0, masked, sets.delta);
}

struct ScoreOptions {
  bool all_blocks_mask_current_block = false;
};

template <Denoiser M>
BlockScore score_interval(Estimator est, const M& model, const MaskedSeq& x_t, const MaskedSeq& x_s,
                          const MaskedSeq& x0, const ScoreOptions& opts = {}) {
  switch (est) {
    case Estimator::ots: return score_ots(model, x_t, x_s, x0);
    case Estimator::future_blocks: return score_future_blocks(model, x_t, x_s, x0);
    case Estimator::all_blocks: {
      newly_revealed(x_t, x_s);  // refinement check
      std::optional<std::size_t> blk;
      if (opts.all_blocks_mask_current_block) blk = current_block(x_t);
      return score_all_blocks(model, x_s, x0, blk);
    }
  }
  return {};
}

/// Mean of the estimator over several contexts (a Monte Carlo expectation
/// over x0).
template <Denoiser M>
BlockScore score_interval_mean(Estimator est, const M& model, const MaskedSeq& x_t, const MaskedSeq& x_s,
                               std::span<const MaskedSeq> contexts, const ScoreOptions& opts = {}) {
  if (contexts.empty()) throw ArgumentError("at least one scoring context required");
  BlockScore acc{0.0, 0, false};
  for (const auto& c : contexts) {
    const BlockScore s = score_interval(est, model, x_t, x_s, c, opts);
    acc.value += s.value;
    acc.evals += s.evals;
    acc.empty = s.empty;
  }
  acc.value /= static_cast<double>(contexts.size());
  return acc;
}

/// Sum of log p(x_i | x_<i) over the revealed prefix of the generation
/// region, each conditional from a predict with positions >= i masked.
template <Denoiser M>
BlockScore score_ar(const M& model, const MaskedSeq& seq) {
  std::size_t m = 0;
  while (m < seq.gen.size() && !seq.is_masked(m)) ++m;
  for (std::size_t i = m; i < seq.gen.size(); ++i)
    if (!seq.is_masked(i)) throw ArgumentError("revealed tokens do not form a contiguous prefix");
  if (m == 0) return {0.0, 0, true};
  BlockScore s{0.0, 0, false};
  MaskedSeq query = seq;
  for (std::size_t i = m; i-- > 0;) query.gen[i] = query.mask_id;
  for (std::size_t i = 0; i < m; ++i) {
    const DenoiserOutput out = predict_one(model, query);
    ++s.evals;
    s.value += detail::floored(out.at(i, seq.gen[i]));
    query.gen[i] = seq.gen[i];
  }
  return s;
}

}  // namespace ots
