#pragma once

// Order-Token Search: K beams decode block by block; at each search boundary
// every beam is expanded into K candidates (independent Gumbel draws, which
// vary both the committed tokens and, through confidence, the commit order),
// candidates are scored by an interval estimator and pruned back to K.
//
// Also the quadratic baselines that branch on K positions (order search) or
// K tokens (token search) at every step with a chain-rule score.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ots/core.hpp"
#include "ots/decode.hpp"
#include "ots/model.hpp"
#include "ots/score.hpp"

namespace ots {

enum class ExpansionMode { gumbel, deterministic_topk };
enum class CumulativeRule { inclusive, exclusive };

inline std::string_view to_string(ExpansionMode m) {
  return m == ExpansionMode::gumbel ? "gumbel" : "deterministic_topk";
}

inline ExpansionMode parse_expansion(std::string_view name) {
  if (name == "gumbel") return ExpansionMode::gumbel;
  if (name == "deterministic_topk" || name == "topk") return ExpansionMode::deterministic_topk;
  throw ArgumentError("unknown expansion mode '" + std::string(name) + "'");
}

struct SearchConfig {
  std::size_t gen_len = 16;
  std::size_t steps = 16;
  std::size_t block_size = 0;  // 0 means one block
  std::size_t beam = 4;
  std::size_t interval = 0;  // 0 means search at the last step of every block
  double temperature = 0.4;
  Strategy strategy = Strategy::low_confidence;
  Estimator estimator = Estimator::ots;
  ExpansionMode expansion = ExpansionMode::gumbel;
  CumulativeRule cumulative = CumulativeRule::inclusive;
  std::size_t context_samples = 1;
  bool all_blocks_mask_current_block = false;
  bool dedupe = true;
  ConfidenceSource confidence = ConfidenceSource::pre_noise;
  std::uint64_t seed = 0;

  std::size_t effective_block_size() const { return block_size == 0 ? gen_len : block_size; }
  BlockLayout layout() const { return BlockLayout(gen_len, effective_block_size()); }

  void validate() const {
    if (beam == 0) throw ArgumentError("beam size must be at least 1");
    if (context_samples == 0) throw ArgumentError("context_samples must be at least 1");
    if (temperature < 0.0 || !std::isfinite(temperature))
      throw ArgumentError("temperature must be a finite non-negative number");
    if (strategy == Strategy::ar && effective_block_size() != 1)
      throw ArgumentError("ar strategy inside search requires block_size = 1");
    plan_steps(layout(), steps);
  }

  /// Step indices (0-based) at which expansion and pruning happen.
  std::vector<bool> boundary_mask() const {
    const auto plan = plan_steps(layout(), steps);
    std::vector<bool> mask(plan.size(), false);
    for (std::size_t k = 0; k < plan.size(); ++k)
      mask[k] = interval == 0 ? plan[k].last_in_block : (k + 1) % interval == 0;
    return mask;
  }
};

struct NfeCounter {
  std::size_t denoise_evals = 0;
  std::size_t score_evals = 0;
  std::size_t positions_per_eval = 0;

  std::size_t total() const { return denoise_evals + score_evals; }
  std::size_t denoise_positions() const { return denoise_evals * positions_per_eval; }
  std::size_t score_positions() const { return score_evals * positions_per_eval; }
  std::size_t total_positions() const { return total() * positions_per_eval; }

  bool operator==(const NfeCounter&) const = default;
};

struct NfePrediction {
  std::size_t denoise = 0;  // position-normalized
  std::size_t score = 0;
  std::size_t total() const { return denoise + score; }
};

/// S*K*L trajectory evaluations plus (boundaries)*K^2*L scoring evaluations.
inline NfePrediction predict_nfe(const SearchConfig& cfg) {
  cfg.validate();
  const auto mask = cfg.boundary_mask();
  const auto boundaries = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  const std::size_t k = cfg.beam;
  const std::size_t l = cfg.gen_len;
  return {cfg.steps * k * l, boundaries * k * k * cfg.context_samples * l};
}

/// Independent samples: each costs S*L.
inline NfePrediction predict_nfe_majority_vote(std::size_t gen_len, std::size_t steps, std::size_t samples) {
  return {steps * samples * gen_len, 0};
}

/// Order/token search: K*L denoise and K^2*L scoring predicts, in predicts.
inline NfePrediction predict_nfe_quadratic(std::size_t beam, std::size_t gen_len) {
  return {beam * gen_len, beam * beam * gen_len};
}

struct IntervalRecord {
  std::size_t step = 0;
  std::size_t block = 0;
  std::vector<Token> x_t;
  std::vector<Token> x_s;
  std::vector<std::vector<Token>> contexts;
  double score = 0.0;

  bool operator==(const IntervalRecord&) const = default;
};

struct Beam {
  MaskedSeq x;
  MaskedSeq at_boundary;  // state at the previous search boundary
  std::vector<double> block_scores;
  double cumulative = 0.0;
  std::vector<std::size_t> unmask_order;
  std::vector<StepRecord> steps;
  std::vector<std::size_t> lineage;  // parent slot at each boundary
  std::vector<IntervalRecord> intervals;
};

struct Candidate {
  Beam beam;
  std::size_t parent = 0;
  std::size_t draw = 0;
};

struct CandidateRecord {
  std::size_t parent = 0;
  std::size_t draw = 0;
  std::vector<Token> tokens;
  double interval_score = 0.0;
  double cumulative = 0.0;
  bool survived = false;
};

struct BoundaryRecord {
  std::size_t step = 0;
  std::size_t block = 0;
  std::vector<CandidateRecord> candidates;
  std::vector<std::size_t> survivors;  // candidate indices, in rank order
};

struct SearchResult {
  Trajectory best;
  double score = 0.0;
  std::vector<double> block_scores;
  std::size_t best_slot = 0;
  std::vector<Beam> beams;  // final beams, slot order
  std::vector<BoundaryRecord> audit;
  NfeCounter nfe;
  std::size_t empty_intervals = 0;
};

// ---------------------------------------------------------------------------
// Pruning

namespace detail {

inline bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.beam.cumulative != b.beam.cumulative) return a.beam.cumulative > b.beam.cumulative;
  if (a.parent != b.parent) return a.parent < b.parent;
  if (a.beam.x.gen != b.beam.x.gen) return a.beam.x.gen < b.beam.x.gen;
  return a.draw < b.draw;
}

}  // namespace detail

/// Indices of the K best candidates by cumulative score (ties: lower parent
/// slot, then lexicographically smaller tokens). With `dedupe`, identical
/// token sequences are skipped until distinct ones run out; remaining slots
/// are then filled with the best duplicates so exactly min(K, n) survive.
inline std::vector<std::size_t> prune(std::span<const Candidate> candidates, std::size_t k, bool dedupe = true) {
  if (candidates.empty()) throw Error("prune called with no candidates");
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return detail::ranks_before(candidates[a], candidates[b]); });
  const std::size_t keep = std::min(k, candidates.size());
  if (!dedupe) return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep)};

  std::vector<std::size_t> out;
  std::vector<bool> taken(order.size(), false);
  for (std::size_t r = 0; r < order.size() && out.size() < keep; ++r) {
    const auto& g = candidates[order[r]].beam.x.gen;
    const bool seen = std::any_of(out.begin(), out.end(), [&](std::size_t s) { return candidates[s].beam.x.gen == g; });
    if (!seen) {
      out.push_back(order[r]);
      taken[r] = true;
    }
  }
  for (std::size_t r = 0; r < order.size() && out.size() < keep; ++r)
    if (!taken[r]) out.push_back(order[r]);
  std::stable_sort(out.begin(), out.end(),
                   [&](std::size_t a, std::size_t b) { return detail::ranks_before(candidates[a], candidates[b]); });
  return out;
}

namespace detail {

inline std::vector<std::size_t> tokens_by_prob(std::span<const double> row) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  return idx;
}

/// Masked positions of the current block, most confident (max probability) first.
inline std::vector<std::size_t> positions_by_confidence(const MaskedSeq& x, const DenoiserOutput& out) {
  std::vector<std::size_t> pos;
  const std::size_t b = current_block(x);
  if (b == x.layout.num_blocks()) return pos;
  const BlockRange r = x.layout.range(b);
  std::vector<double> conf(x.gen.size(), kNegInf);
  for (std::size_t i = r.begin; i < r.end; ++i) {
    if (!x.is_masked(i)) continue;
    pos.push_back(i);
    auto row = out.row(i);
    conf[i] = *std::max_element(row.begin(), row.end());
  }
  std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t c) { return conf[a] > conf[c]; });
  return pos;
}

inline double sum_scores(const std::vector<double>& s, std::size_t end) {
  double acc = 0.0;
  for (std::size_t b = 0; b < end && b < s.size(); ++b) acc += s[b];
  return acc;
}

inline std::size_t select_best(const std::vector<Beam>& beams) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < beams.size(); ++i) {
    const Beam& a = beams[i];
    const Beam& b = beams[best];
    if (a.cumulative > b.cumulative) {
      best = i;
    } else if (a.cumulative == b.cumulative) {
      const std::size_t la = a.lineage.empty() ? 0 : a.lineage.back();
      const std::size_t lb = b.lineage.empty() ? 0 : b.lineage.back();
      if (la < lb || (la == lb && a.x.gen < b.x.gen)) best = i;
    }
  }
  return best;
}

inline Trajectory to_trajectory(const Beam& b, std::size_t nfe) {
  Trajectory t;
  t.final = b.x;
  t.unmask_order = b.unmask_order;
  t.steps = b.steps;
  t.nfe = nfe;
  return t;
}

inline void apply_transfer(Beam& beam, std::size_t step, std::size_t block, TransferResult&& tr, const Proposal& p) {
  beam.steps.push_back(make_record(step, block, tr, p));
  beam.unmask_order.insert(beam.unmask_order.end(), tr.positions.begin(), tr.positions.end());
  beam.x = std::move(tr.x);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Order-Token Search

template <Denoiser M>
SearchResult order_token_search(const M& model, const std::vector<Token>& prompt, const SearchConfig& cfg) {
  cfg.validate();
  const Vocabulary& vocab = model.vocab();
  const BlockLayout layout = cfg.layout();
  const auto plan = plan_steps(layout, cfg.steps);
  const auto boundary = cfg.boundary_mask();
  const std::size_t k_beams = cfg.beam;
  const RandomStream rng(cfg.seed);
  const bool topk = cfg.expansion == ExpansionMode::deterministic_topk;
  const double tau = topk ? 0.0 : cfg.temperature;
  const ScoreOptions score_opts{cfg.all_blocks_mask_current_block};

  SearchResult res;
  res.nfe.positions_per_eval = cfg.gen_len;

  Beam init;
  init.x = MaskedSeq::fully_masked(prompt, layout, vocab.mask_id);
  validate_sequence(init.x, vocab);
  init.at_boundary = init.x;
  init.block_scores.assign(layout.num_blocks(), 0.0);
  std::vector<Beam> beams(k_beams, init);

  for (std::size_t step = 0; step < plan.size(); ++step) {
    std::vector<DenoiserOutput> logits;
    {
      std::vector<MaskedSeq> batch;
      batch.reserve(beams.size());
      for (const auto& b : beams) batch.push_back(b.x);
      logits = model.predict(batch);
      res.nfe.denoise_evals += beams.size();
    }
    const std::size_t count = plan[step].count;

    if (!boundary[step]) {
      for (std::size_t p = 0; p < beams.size(); ++p) {
        RandomStream noise = rng.derive(Purpose::gumbel, {p, 0, step});
        RandomStream pick = rng.derive(Purpose::transfer, {p, 0, step});
        const Proposal prop = propose_x0(logits[p], tau, noise, cfg.confidence);
        const std::size_t blk = current_block(beams[p].x);
        detail::apply_transfer(beams[p], step, blk, transfer_tokens(beams[p].x, prop, count, cfg.strategy, pick),
                               prop);
      }
      continue;
    }

    BoundaryRecord rec;
    rec.step = step;
    rec.block = plan[step].block;
    std::vector<Candidate> cands;
    cands.reserve(beams.size() * k_beams);
    for (std::size_t p = 0; p < beams.size(); ++p) {
      const Beam& parent = beams[p];
      const std::size_t blk = current_block(parent.x);
      for (std::size_t j = 0; j < k_beams; ++j) {
        RandomStream noise = rng.derive(Purpose::gumbel, {p, j, step});
        RandomStream pick = rng.derive(Purpose::transfer, {p, j, step});
        Candidate c{parent, p, j};
        Proposal prop;
        if (!topk) {
          prop = propose_x0(logits[p], tau, noise, cfg.confidence);
          detail::apply_transfer(c.beam, step, blk, transfer_tokens(parent.x, prop, count, cfg.strategy, pick),
                                 prop);
        } else {
          // j-th most probable token at the most confident masked position,
          // greedy for everything else.
          prop = propose_x0(logits[p], 0.0, noise, cfg.confidence);
          const auto order = detail::positions_by_confidence(parent.x, logits[p]);
          const std::size_t pos = order.front();
          const auto ranked = detail::tokens_by_prob(logits[p].row(pos));
          const auto tok = static_cast<Token>(ranked[j % ranked.size()]);
          prop.tokens[pos] = tok;
          prop.confidence[pos] = std::exp(logits[p].at(pos, tok));
          TransferResult first{parent.x, {pos}};
          first.x.gen[pos] = tok;
          TransferResult rest = transfer_tokens(first.x, prop, count - 1, cfg.strategy, pick);
          rest.positions.insert(rest.positions.begin(), pos);
          detail::apply_transfer(c.beam, step, blk, std::move(rest), prop);
        }

        std::vector<MaskedSeq> contexts;
        contexts.push_back(fill_masks(c.beam.x, prop.tokens));
        for (std::size_t extra = 1; extra < cfg.context_samples; ++extra) {
          RandomStream ctx_noise = rng.derive(Purpose::context, {p, j, step, extra});
          const Proposal alt = propose_x0(logits[p], cfg.temperature, ctx_noise, cfg.confidence);
          contexts.push_back(fill_masks(c.beam.x, alt.tokens));
        }
        const BlockScore s =
            score_interval_mean(cfg.estimator, model, parent.at_boundary, c.beam.x, contexts, score_opts);
        res.nfe.score_evals += s.evals;
        if (s.empty) ++res.empty_intervals;

        IntervalRecord ir{step, blk, parent.at_boundary.gen, c.beam.x.gen, {}, s.value};
        for (const auto& ctx : contexts) ir.contexts.push_back(ctx.gen);
        c.beam.intervals.push_back(std::move(ir));
        if (cfg.estimator == Estimator::all_blocks) {
          c.beam.block_scores[blk] = s.value;
          c.beam.cumulative = s.value;
        } else {
          c.beam.block_scores[blk] += s.value;
          const std::size_t end = cfg.cumulative == CumulativeRule::inclusive ? blk + 1 : blk;
          c.beam.cumulative = detail::sum_scores(c.beam.block_scores, end);
        }
        c.beam.at_boundary = c.beam.x;
        c.beam.lineage.push_back(p);
        rec.candidates.push_back({p, j, c.beam.x.gen, s.value, c.beam.cumulative, false});
        cands.push_back(std::move(c));
      }
    }
    rec.survivors = prune(cands, k_beams, cfg.dedupe);
    std::vector<Beam> next;
    next.reserve(k_beams);
    for (std::size_t idx : rec.survivors) {
      rec.candidates[idx].survived = true;
      next.push_back(cands[idx].beam);
    }
    beams = std::move(next);
    res.audit.push_back(std::move(rec));
  }

  res.best_slot = detail::select_best(beams);
  const Beam& best = beams[res.best_slot];
  res.score = best.cumulative;
  res.block_scores = best.block_scores;
  res.best = detail::to_trajectory(best, res.nfe.total());
  res.beams = std::move(beams);
  return res;
}

/// Re-runs the estimator on every stored interval of `beam` and returns the
/// cumulative score those intervals imply.
template <Denoiser M>
double recompute_cumulative(const M& model, const Beam& beam, const SearchConfig& cfg) {
  std::vector<double> blocks(cfg.layout().num_blocks(), 0.0);
  double last = 0.0;
  std::size_t last_block = 0;
  const ScoreOptions opts{cfg.all_blocks_mask_current_block};
  for (const auto& ir : beam.intervals) {
    MaskedSeq xt = beam.x;
    MaskedSeq xs = beam.x;
    xt.gen = ir.x_t;
    xs.gen = ir.x_s;
    std::vector<MaskedSeq> ctx;
    for (const auto& c : ir.contexts) {
      MaskedSeq m = beam.x;
      m.gen = c;
      ctx.push_back(std::move(m));
    }
    const double v = score_interval_mean(cfg.estimator, model, xt, xs, ctx, opts).value;
    if (cfg.estimator == Estimator::all_blocks) {
      blocks[ir.block] = v;
    } else {
      blocks[ir.block] += v;
    }
    last = v;
    last_block = ir.block;
  }
  if (cfg.estimator == Estimator::all_blocks) return last;
  const std::size_t end = cfg.cumulative == CumulativeRule::inclusive ? last_block + 1 : last_block;
  return detail::sum_scores(blocks, beam.intervals.empty() ? 0 : end);
}

// ---------------------------------------------------------------------------
// Quadratic baselines

struct QuadraticSearchConfig {
  std::size_t gen_len = 16;
  std::size_t beam = 3;
  std::size_t block_size = 0;
  double temperature = 0.0;
  bool dedupe = true;
  std::uint64_t seed = 0;
};

namespace detail {

enum class Branching { order, token };

template <Denoiser M>
SearchResult quadratic_search(const M& model, const std::vector<Token>& prompt, const QuadraticSearchConfig& cfg,
                              Branching mode) {
  if (cfg.beam == 0) throw ArgumentError("beam size must be at least 1");
  const Vocabulary& vocab = model.vocab();
  const std::size_t bs = mode == Branching::token ? 1 : (cfg.block_size == 0 ? cfg.gen_len : cfg.block_size);
  const BlockLayout layout(cfg.gen_len, bs);
  const std::size_t k_beams = cfg.beam;
  const RandomStream rng(cfg.seed);

  SearchResult res;
  res.nfe.positions_per_eval = cfg.gen_len;
  Beam init;
  init.x = MaskedSeq::fully_masked(prompt, layout, vocab.mask_id);
  validate_sequence(init.x, vocab);
  init.at_boundary = init.x;
  init.block_scores.assign(layout.num_blocks(), 0.0);
  std::vector<Beam> beams(k_beams, init);

  for (std::size_t step = 0; step < cfg.gen_len; ++step) {
    std::vector<MaskedSeq> batch;
    for (const auto& b : beams) batch.push_back(b.x);
    const auto logits = model.predict(batch);
    res.nfe.denoise_evals += beams.size();

    BoundaryRecord rec;
    rec.step = step;
    std::vector<Candidate> cands;
    for (std::size_t p = 0; p < beams.size(); ++p) {
      const Beam& parent = beams[p];
      const std::size_t blk = current_block(parent.x);
      rec.block = blk;
      const auto order = positions_by_confidence(parent.x, logits[p]);
      for (std::size_t j = 0; j < k_beams; ++j) {
        std::size_t pos;
        Token tok;
        if (mode == Branching::order) {
          pos = order[j % order.size()];
          RandomStream noise = rng.derive(Purpose::gumbel, {p, j, step});
          DenoiserOutput row_only(1, vocab.size);
          std::copy(logits[p].row(pos).begin(), logits[p].row(pos).end(), row_only.row(0).begin());
          tok = argmax_row(gumbel_perturb(row_only, cfg.temperature, noise).row(0));
        } else {
          pos = *std::min_element(order.begin(), order.end());
          const auto ranked = tokens_by_prob(logits[p].row(pos));
          tok = static_cast<Token>(ranked[j % ranked.size()]);
        }
        Candidate c{parent, p, j};
        c.beam.x.gen[pos] = tok;
        c.beam.unmask_order.push_back(pos);
        c.beam.steps.push_back({step, blk, {pos}, {tok}, {std::exp(logits[p].at(pos, tok))}});

        // Chain-rule increment log p(tok | tokens revealed before it): one
        // predict on the candidate with the new position masked.
        MaskedSeq query = c.beam.x;
        query.gen[pos] = query.mask_id;
        const DenoiserOutput out = predict_one(model, query);
        res.nfe.score_evals += 1;
        const double inc = std::max(out.at(pos, tok), kScoreFloor);
        c.beam.block_scores[blk] += inc;
        c.beam.cumulative = parent.cumulative + inc;
        c.beam.intervals.push_back({step, blk, parent.x.gen, c.beam.x.gen, {}, inc});
        c.beam.at_boundary = c.beam.x;
        c.beam.lineage.push_back(p);
        rec.candidates.push_back({p, j, c.beam.x.gen, inc, c.beam.cumulative, false});
        cands.push_back(std::move(c));
      }
    }
    rec.survivors = prune(cands, k_beams, cfg.dedupe);
    std::vector<Beam> next;
    for (std::size_t idx : rec.survivors) {
      rec.candidates[idx].survived = true;
      next.push_back(cands[idx].beam);
    }
    beams = std::move(next);
    res.audit.push_back(std::move(rec));
  }

  res.best_slot = select_best(beams);
  const Beam& best = beams[res.best_slot];
  res.score = best.cumulative;
  res.block_scores = best.block_scores;
  res.best = to_trajectory(best, res.nfe.total());
  res.beams = std::move(beams);
  return res;
}

}  // namespace detail

/// Each beam branches on its K most confident masked positions (argmax token).
template <Denoiser M>
SearchResult order_search(const M& model, const std::vector<Token>& prompt, const QuadraticSearchConfig& cfg) {
  return detail::quadratic_search(model, prompt, cfg, detail::Branching::order);
}

/// Left to right; each beam branches on the K most probable tokens at the next position.
template <Denoiser M>
SearchResult token_search(const M& model, const std::vector<Token>& prompt, const QuadraticSearchConfig& cfg) {
  return detail::quadratic_search(model, prompt, cfg, detail::Branching::token);
}

}  // namespace ots
