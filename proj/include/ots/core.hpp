#pragma once

// Vocabulary, masked sequences, block layout, noise schedule, seeded random
// streams and the absorbing-state forward/posterior math.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ots {

using Token = std::int32_t;

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : Error {
  using Error::Error;
};
struct ArgumentError : Error {
  using Error::Error;
};
struct RefinementError : Error {
  using Error::Error;
};
struct VocabMismatch : Error {
  using Error::Error;
};
struct ModelError : Error {
  using Error::Error;
};
struct ParseError : ModelError {
  using ModelError::ModelError;
};
struct NormalizationError : ModelError {
  using ModelError::ModelError;
};
struct DimensionError : ModelError {
  using ModelError::ModelError;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Vocabulary

struct Vocabulary {
  std::size_t size = 0;  // number of real tokens V
  Token mask_id = 0;
  std::vector<std::string> names;  // optional, one per real token
  // (open, close): the answer is the span after the last `open` up to the next
  // `close` (or end of sequence).
  std::optional<std::pair<Token, Token>> answer_delimiters;

  static Vocabulary make(std::size_t v, std::vector<std::string> names = {}) {
    if (v < 2) throw ArgumentError("vocabulary needs at least 2 real tokens");
    if (!names.empty() && names.size() != v)
      throw ArgumentError("vocabulary names must have one entry per token");
    Vocabulary voc;
    voc.size = v;
    voc.mask_id = static_cast<Token>(v);
    voc.names = std::move(names);
    return voc;
  }

  bool is_real(Token t) const { return t >= 0 && static_cast<std::size_t>(t) < size; }

  std::string name(Token t) const {
    if (t == mask_id) return "[M]";
    if (!names.empty() && is_real(t)) return names[static_cast<std::size_t>(t)];
    return std::to_string(t);
  }

  std::string render(std::span<const Token> tokens) const {
    std::string out;
    const bool spaced = names.empty() ||
                        std::any_of(names.begin(), names.end(),
                                    [](const std::string& n) { return n.size() != 1; });
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (spaced && i > 0) out += ' ';
      out += name(tokens[i]);
    }
    return out;
  }

  bool operator==(const Vocabulary&) const = default;
};

// ---------------------------------------------------------------------------
// BlockLayout

struct BlockRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool operator==(const BlockRange&) const = default;
};

class BlockLayout {
 public:
  BlockLayout() = default;
  BlockLayout(std::size_t gen_len, std::size_t block_size)
      : gen_len_(gen_len), block_size_(block_size) {
    if (block_size == 0) throw ArgumentError("block_size must be positive");
    if (gen_len == 0) throw ArgumentError("generation length must be positive");
  }

  std::size_t gen_len() const { return gen_len_; }
  std::size_t block_size() const { return block_size_; }
  std::size_t num_blocks() const { return (gen_len_ + block_size_ - 1) / block_size_; }

  BlockRange range(std::size_t b) const {
    if (b >= num_blocks()) throw ArgumentError("block index out of range");
    return {b * block_size_, std::min(gen_len_, (b + 1) * block_size_)};
  }

  std::vector<BlockRange> boundaries() const {
    std::vector<BlockRange> out;
    out.reserve(num_blocks());
    for (std::size_t b = 0; b < num_blocks(); ++b) out.push_back(range(b));
    return out;
  }

  bool operator==(const BlockLayout&) const = default;

 private:
  std::size_t gen_len_ = 0;
  std::size_t block_size_ = 1;
};

inline std::size_t block_index_of(const BlockLayout& layout, std::size_t pos) {
  if (pos >= layout.gen_len())
    throw ArgumentError("position " + std::to_string(pos) + " outside generation region of length " +
                        std::to_string(layout.gen_len()));
  return pos / layout.block_size();
}

// ---------------------------------------------------------------------------
// MaskedSeq

/// Prompt plus a fixed-length generation region whose slots are either real
/// tokens or the mask id. The prompt is never modified.
struct MaskedSeq {
  std::vector<Token> prompt;
  std::vector<Token> gen;
  BlockLayout layout;
  Token mask_id = 0;

  static MaskedSeq fully_masked(std::vector<Token> prompt, const BlockLayout& layout, Token mask_id) {
    MaskedSeq x;
    x.prompt = std::move(prompt);
    x.gen.assign(layout.gen_len(), mask_id);
    x.layout = layout;
    x.mask_id = mask_id;
    return x;
  }

  std::size_t length() const { return gen.size(); }
  std::size_t full_length() const { return prompt.size() + gen.size(); }
  bool is_masked(std::size_t i) const { return gen[i] == mask_id; }

  std::size_t mask_count() const {
    return static_cast<std::size_t>(std::count(gen.begin(), gen.end(), mask_id));
  }
  std::size_t mask_count(const BlockRange& r) const {
    return static_cast<std::size_t>(
        std::count(gen.begin() + static_cast<std::ptrdiff_t>(r.begin),
                   gen.begin() + static_cast<std::ptrdiff_t>(r.end), mask_id));
  }
  bool complete() const { return mask_count() == 0; }

  std::vector<std::size_t> masked_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < gen.size(); ++i)
      if (is_masked(i)) out.push_back(i);
    return out;
  }

  /// Token at full-sequence index j (prompt first).
  Token at_full(std::size_t j) const {
    return j < prompt.size() ? prompt[j] : gen[j - prompt.size()];
  }

  bool operator==(const MaskedSeq&) const = default;
};

inline void validate_sequence(const MaskedSeq& x, const Vocabulary& vocab) {
  if (x.mask_id != vocab.mask_id) throw VocabMismatch("sequence mask id differs from vocabulary mask id");
  for (Token t : x.prompt)
    if (!vocab.is_real(t)) throw VocabMismatch("prompt token " + std::to_string(t) + " outside vocabulary");
  for (Token t : x.gen)
    if (t != vocab.mask_id && !vocab.is_real(t))
      throw VocabMismatch("generated token " + std::to_string(t) + " outside vocabulary");
  if (x.gen.size() != x.layout.gen_len()) throw ArgumentError("generation length disagrees with block layout");
}

/// Lowest block still containing a mask, or num_blocks() when none remains.
inline std::size_t current_block(const MaskedSeq& x) {
  for (std::size_t i = 0; i < x.gen.size(); ++i)
    if (x.is_masked(i)) return block_index_of(x.layout, i);
  return x.layout.num_blocks();
}

/// True when every block before the first masked block is fully revealed and
/// every block after it is fully masked.
inline bool follows_semi_ar(const MaskedSeq& x) {
  const std::size_t b = current_block(x);
  for (std::size_t later = b + 1; later < x.layout.num_blocks(); ++later) {
    const BlockRange r = x.layout.range(later);
    if (x.mask_count(r) != r.size()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// NoiseSchedule

struct NoiseSchedule {
  enum class Kind { linear, custom_table };
  Kind kind = Kind::linear;
  std::vector<std::pair<double, double>> table;  // (t, alpha_t) knots, sorted by t

  static NoiseSchedule linear() { return {}; }

  static NoiseSchedule from_table(std::vector<std::pair<double, double>> knots) {
    if (knots.size() < 2) throw ArgumentError("schedule table needs at least two knots");
    std::sort(knots.begin(), knots.end());
    if (knots.front().first != 0.0 || knots.back().first != 1.0)
      throw ArgumentError("schedule table must span t = 0 to t = 1");
    if (knots.front().second != 1.0 || knots.back().second != 0.0)
      throw ArgumentError("schedule table must satisfy alpha(0) = 1 and alpha(1) = 0");
    for (std::size_t i = 1; i < knots.size(); ++i) {
      if (knots[i].first == knots[i - 1].first) throw ArgumentError("duplicate knot time in schedule table");
      if (knots[i].second > knots[i - 1].second) throw ArgumentError("schedule table must be non-increasing");
    }
    return {Kind::custom_table, std::move(knots)};
  }
};

inline double alpha_at(const NoiseSchedule& schedule, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("schedule time must lie in [0, 1]");
  if (schedule.kind == NoiseSchedule::Kind::linear) return 1.0 - t;
  const auto& k = schedule.table;
  auto hi = std::upper_bound(k.begin(), k.end(), t,
                             [](double v, const std::pair<double, double>& knot) { return v < knot.first; });
  if (hi == k.end()) return k.back().second;
  auto lo = hi - 1;
  const double w = (t - lo->first) / (hi->first - lo->first);
  return lo->second + w * (hi->second - lo->second);
}

/// Probability that a masked slot is revealed when stepping from t back to s;
/// the complement (1 - alpha_s) / (1 - alpha_t) keeps it masked.
inline double posterior_unmask_prob(const NoiseSchedule& schedule, double s, double t) {
  if (!(s < t)) throw ArgumentError("posterior step requires s < t");
  const double as = alpha_at(schedule, s);
  const double at = alpha_at(schedule, t);
  if (at >= 1.0) throw DomainError("posterior is singular where alpha_t = 1");
  return (as - at) / (1.0 - at);
}

inline double posterior_stay_masked_prob(const NoiseSchedule& schedule, double s, double t) {
  if (!(s < t)) throw ArgumentError("posterior step requires s < t");
  const double as = alpha_at(schedule, s);
  const double at = alpha_at(schedule, t);
  if (at >= 1.0) throw DomainError("posterior is singular where alpha_t = 1");
  return (1.0 - as) / (1.0 - at);
}

// ---------------------------------------------------------------------------
// RandomStream

enum class Purpose : std::uint64_t {
  corrupt = 1,
  gumbel = 2,
  transfer = 3,
  context = 4,
  task = 5,
  sample = 6,
};

/// Seeded stream whose key is derived by hashing a path of integers onto the
/// master seed. Equal (seed, path) pairs always replay the same draws.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t master_seed) : key_(mix(master_seed)), engine_(key_) {}

  RandomStream derive(std::initializer_list<std::uint64_t> path) const {
    std::uint64_t k = key_;
    for (std::uint64_t c : path) k = mix(k ^ mix(c + 0x632BE59BD9B4E019ULL));
    return RandomStream(k, 0);
  }
  RandomStream derive(Purpose p, std::initializer_list<std::uint64_t> path) const {
    std::uint64_t k = mix(key_ ^ static_cast<std::uint64_t>(p));
    for (std::uint64_t c : path) k = mix(k ^ mix(c + 0x632BE59BD9B4E019ULL));
    return RandomStream(k, 0);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  double gumbel() { return -std::log(-std::log(uniform())); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ArgumentError("below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do r = engine_();
    while (r >= limit);
    return r % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal (Box-Muller, one draw per call).
  double normal() {
    const double u = uniform();
    const double v = uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
  }

 private:
  RandomStream(std::uint64_t key, int) : key_(key), engine_(key) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::mt19937_64 engine_;
};

/// Keeps each generated slot with probability alpha_t, masks it otherwise.
inline MaskedSeq forward_corrupt(const MaskedSeq& x0, const NoiseSchedule& schedule, double t, RandomStream rng) {
  const double keep = alpha_at(schedule, t);
  if (!x0.complete()) throw ArgumentError("forward_corrupt expects a fully revealed sequence");
  MaskedSeq xt = x0;
  for (auto& tok : xt.gen)
    if (!rng.bernoulli(keep)) tok = xt.mask_id;
  return xt;
}

// ---------------------------------------------------------------------------
// Log-domain helpers

inline double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace ots
