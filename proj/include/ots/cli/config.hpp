#pragma once

// Experiment configuration: TOML file, flag overrides, canonical JSON form
// and its hash.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <tomlplusplus/toml.hpp>

#include "ots/core.hpp"
#include "ots/decode.hpp"
#include "ots/eval.hpp"
#include "ots/score.hpp"
#include "ots/search.hpp"
#include "ots/tasks.hpp"

namespace ots::cli {

struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

inline constexpr int kSchemaVersion = 1;

struct TaskSpec {
  std::string kind = "chain";  // chain | countdown
  std::string instances;       // JSONL path; empty means generate
  std::size_t count = 10;
  std::size_t prompt_len = 4;
  std::optional<double> threshold;  // chain task; absent means no floor
  countdown::Config countdown;
};

struct SweepSpec {
  std::vector<std::string> methods{"decode"};
  std::vector<std::size_t> beam;
  std::vector<double> temperature;
  std::vector<std::size_t> block_size;
  std::vector<std::size_t> gen_len;
  std::vector<std::size_t> steps;
  std::size_t vote_samples = 5;
};

struct PasskSpec {
  std::vector<StrategySpec> strategies{{Strategy::random, 0.8}, {Strategy::low_confidence, 0.8}};
  std::size_t n = 16;
  std::vector<std::size_t> ks;  // empty means 1, 2, 4, ..., n
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::size_t workers = 1;

  std::string model_path;
  std::string model_kind = "file";  // file | countdown_prior
  countdown::PriorConfig prior;

  TaskSpec task;
  DecodeConfig decode;
  SearchConfig search;
  std::string algorithm = "ots";  // ots | order_search | token_search
  std::optional<double> search_temperature;

  SweepSpec sweep;
  PasskSpec passk;

  /// The search settings with the shared decode fields folded in.
  SearchConfig search_config() const {
    SearchConfig s = search;
    s.gen_len = decode.gen_len;
    s.steps = decode.steps;
    s.block_size = decode.block_size;
    s.strategy = decode.strategy;
    s.confidence = decode.confidence;
    s.temperature = search_temperature.value_or(decode.temperature);
    s.seed = seed;
    return s;
  }
  DecodeConfig decode_config() const {
    DecodeConfig d = decode;
    d.seed = seed;
    return d;
  }
  QuadraticSearchConfig quadratic_config() const {
    QuadraticSearchConfig q;
    q.gen_len = decode.gen_len;
    q.beam = search.beam;
    q.block_size = decode.block_size;
    q.temperature = search_temperature.value_or(0.0);
    q.dedupe = search.dedupe;
    q.seed = seed;
    return q;
  }
};

// ---------------------------------------------------------------------------
// TOML

namespace detail {

template <class T>
std::optional<T> get(const toml::table& t, std::string_view section, std::string_view key) {
  const auto node = t[section][key];
  if (!node) return std::nullopt;
  if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = node.value<std::string>()) return *v;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = node.value<bool>()) return *v;
  } else if constexpr (std::is_floating_point_v<T>) {
    if (auto v = node.value<double>()) return *v;
  } else {
    if (auto v = node.value<std::int64_t>()) {
      if (*v < 0) throw ConfigError("[" + std::string(section) + "] " + std::string(key) + " must be non-negative");
      return static_cast<T>(*v);
    }
  }
  throw ConfigError("[" + std::string(section) + "] " + std::string(key) + " has the wrong type");
}

template <class T>
std::optional<std::vector<T>> get_list(const toml::table& t, std::string_view section, std::string_view key) {
  const auto node = t[section][key];
  if (!node) return std::nullopt;
  const toml::array* arr = node.as_array();
  if (!arr) throw ConfigError("[" + std::string(section) + "] " + std::string(key) + " must be an array");
  std::vector<T> out;
  for (const auto& el : *arr) {
    std::optional<T> v;
    if constexpr (std::is_same_v<T, std::string>) {
      if (auto s = el.value<std::string>()) v = *s;
    } else if constexpr (std::is_floating_point_v<T>) {
      if (auto d = el.value<double>()) v = *d;
    } else {
      if (auto i = el.value<std::int64_t>(); i && *i >= 0) v = static_cast<T>(*i);
    }
    if (!v) throw ConfigError("[" + std::string(section) + "] " + std::string(key) + " has an element of the wrong type");
    out.push_back(*v);
  }
  return out;
}

template <class T>
void assign(T& dst, const std::optional<T>& v) {
  if (v) dst = *v;
}

template <class F>
auto wrap(F&& f) {
  try {
    return f();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const toml::table& t) {
  using detail::assign;
  using detail::get;
  using detail::get_list;
  ExperimentConfig c;
  assign(c.seed, get<std::uint64_t>(t, "run", "seed"));
  assign(c.out, get<std::string>(t, "run", "out"));
  assign(c.workers, get<std::size_t>(t, "run", "workers"));

  assign(c.model_path, get<std::string>(t, "model", "path"));
  assign(c.model_kind, get<std::string>(t, "model", "kind"));
  assign(c.prior.distance_penalty, get<double>(t, "model", "distance_penalty"));
  assign(c.prior.hallucination_bonus, get<double>(t, "model", "hallucination_bonus"));
  assign(c.prior.correct_bonus, get<double>(t, "model", "correct_bonus"));
  assign(c.prior.jitter, get<double>(t, "model", "jitter"));
  assign(c.prior.noise, get<double>(t, "model", "noise"));

  assign(c.task.kind, get<std::string>(t, "task", "kind"));
  assign(c.task.instances, get<std::string>(t, "task", "instances"));
  assign(c.task.count, get<std::size_t>(t, "task", "count"));
  assign(c.task.prompt_len, get<std::size_t>(t, "task", "prompt_len"));
  if (auto v = get<double>(t, "task", "threshold")) c.task.threshold = *v;
  assign(c.task.countdown.min_operands, get<std::size_t>(t, "task", "min_operands"));
  assign(c.task.countdown.max_operands, get<std::size_t>(t, "task", "max_operands"));
  if (auto v = get<std::size_t>(t, "task", "max_operand")) c.task.countdown.max_operand = static_cast<int>(*v);

  assign(c.decode.gen_len, get<std::size_t>(t, "decode", "gen_len"));
  assign(c.decode.steps, get<std::size_t>(t, "decode", "steps"));
  assign(c.decode.block_size, get<std::size_t>(t, "decode", "block_size"));
  assign(c.decode.temperature, get<double>(t, "decode", "temperature"));
  if (auto v = get<std::string>(t, "decode", "strategy")) c.decode.strategy = detail::wrap([&] { return parse_strategy(*v); });
  if (auto v = get<std::string>(t, "decode", "confidence")) {
    if (*v == "pre_noise") c.decode.confidence = ConfidenceSource::pre_noise;
    else if (*v == "post_noise") c.decode.confidence = ConfidenceSource::post_noise;
    else throw ConfigError("[decode] confidence must be pre_noise or post_noise");
  }

  assign(c.search.beam, get<std::size_t>(t, "search", "beam"));
  assign(c.search.interval, get<std::size_t>(t, "search", "interval"));
  assign(c.search.context_samples, get<std::size_t>(t, "search", "context_samples"));
  assign(c.search.dedupe, get<bool>(t, "search", "dedupe"));
  assign(c.search.all_blocks_mask_current_block, get<bool>(t, "search", "all_blocks_mask_current_block"));
  if (auto v = get<double>(t, "search", "temperature")) c.search_temperature = *v;
  assign(c.algorithm, get<std::string>(t, "search", "algorithm"));
  if (auto v = get<std::string>(t, "search", "estimator")) c.search.estimator = detail::wrap([&] { return parse_estimator(*v); });
  if (auto v = get<std::string>(t, "search", "expansion")) c.search.expansion = detail::wrap([&] { return parse_expansion(*v); });
  if (auto v = get<std::string>(t, "search", "cumulative")) {
    if (*v == "inclusive") c.search.cumulative = CumulativeRule::inclusive;
    else if (*v == "exclusive") c.search.cumulative = CumulativeRule::exclusive;
    else throw ConfigError("[search] cumulative must be inclusive or exclusive");
  }

  assign(c.sweep.methods, get_list<std::string>(t, "sweep", "methods"));
  assign(c.sweep.beam, get_list<std::size_t>(t, "sweep", "beam"));
  assign(c.sweep.temperature, get_list<double>(t, "sweep", "temperature"));
  assign(c.sweep.block_size, get_list<std::size_t>(t, "sweep", "block_size"));
  assign(c.sweep.gen_len, get_list<std::size_t>(t, "sweep", "gen_len"));
  assign(c.sweep.steps, get_list<std::size_t>(t, "sweep", "steps"));
  assign(c.sweep.vote_samples, get<std::size_t>(t, "sweep", "vote_samples"));

  assign(c.passk.n, get<std::size_t>(t, "passk", "n"));
  assign(c.passk.ks, get_list<std::size_t>(t, "passk", "ks"));
  if (auto names = get_list<std::string>(t, "passk", "strategies")) {
    auto temps = get_list<double>(t, "passk", "temperatures").value_or(std::vector<double>{0.8});
    if (temps.size() != 1 && temps.size() != names->size())
      throw ConfigError("[passk] temperatures must have one entry or one per strategy");
    c.passk.strategies.clear();
    for (std::size_t i = 0; i < names->size(); ++i)
      c.passk.strategies.push_back({detail::wrap([&] { return parse_strategy((*names)[i]); }),
                                    temps.size() == 1 ? temps[0] : temps[i]});
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
  try {
    return parse_config(toml::parse_file(path.string()));
  } catch (const toml::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + std::string(e.description()));
  }
}

/// Cross-field checks; throws ConfigError.
inline void validate(const ExperimentConfig& c) {
  if (c.task.kind != "chain" && c.task.kind != "countdown")
    throw ConfigError("[task] kind must be chain or countdown");
  if (c.model_kind != "file" && c.model_kind != "countdown_prior")
    throw ConfigError("[model] kind must be file or countdown_prior");
  if (c.task.kind == "countdown" && c.model_kind != "countdown_prior")
    throw ConfigError("countdown task requires [model] kind = \"countdown_prior\"");
  if (c.task.kind == "chain" && c.model_kind != "file") throw ConfigError("chain task requires a model file");
  if (c.model_kind == "file" && c.model_path.empty()) throw ConfigError("no model path given (--model or [model] path)");
  if (c.algorithm != "ots" && c.algorithm != "order_search" && c.algorithm != "token_search")
    throw ConfigError("[search] algorithm must be ots, order_search or token_search");
  if (c.workers == 0) throw ConfigError("[run] workers must be at least 1");
  detail::wrap([&] {
    plan_steps(c.decode_config().layout(), c.decode_config().effective_steps());
    c.search_config().validate();
    return 0;
  });
}

// ---------------------------------------------------------------------------
// Canonical form

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json passk_strats = json::array();
  for (const auto& s : c.passk.strategies)
    passk_strats.push_back({{"strategy", to_string(s.strategy)}, {"temperature", s.temperature}});
  return {
      {"seed", c.seed},
      {"model",
       {{"path", c.model_path},
        {"kind", c.model_kind},
        {"distance_penalty", c.prior.distance_penalty},
        {"hallucination_bonus", c.prior.hallucination_bonus},
        {"correct_bonus", c.prior.correct_bonus},
        {"jitter", c.prior.jitter},
        {"noise", c.prior.noise}}},
      {"task",
       {{"kind", c.task.kind},
        {"instances", c.task.instances},
        {"count", c.task.count},
        {"prompt_len", c.task.prompt_len},
        {"threshold", c.task.threshold ? json(*c.task.threshold) : json(nullptr)},
        {"min_operands", c.task.countdown.min_operands},
        {"max_operands", c.task.countdown.max_operands},
        {"max_operand", c.task.countdown.max_operand}}},
      {"decode",
       {{"gen_len", c.decode.gen_len},
        {"steps", c.decode.steps},
        {"block_size", c.decode.block_size},
        {"temperature", c.decode.temperature},
        {"strategy", to_string(c.decode.strategy)},
        {"confidence", c.decode.confidence == ConfidenceSource::pre_noise ? "pre_noise" : "post_noise"}}},
      {"search",
       {{"algorithm", c.algorithm},
        {"beam", c.search.beam},
        {"interval", c.search.interval},
        {"temperature", c.search_temperature ? json(*c.search_temperature) : json(nullptr)},
        {"estimator", to_string(c.search.estimator)},
        {"expansion", to_string(c.search.expansion)},
        {"cumulative", c.search.cumulative == CumulativeRule::inclusive ? "inclusive" : "exclusive"},
        {"context_samples", c.search.context_samples},
        {"dedupe", c.search.dedupe},
        {"all_blocks_mask_current_block", c.search.all_blocks_mask_current_block}}},
      {"sweep",
       {{"methods", c.sweep.methods},
        {"beam", c.sweep.beam},
        {"temperature", c.sweep.temperature},
        {"block_size", c.sweep.block_size},
        {"gen_len", c.sweep.gen_len},
        {"steps", c.sweep.steps},
        {"vote_samples", c.sweep.vote_samples}}},
      {"passk", {{"n", c.passk.n}, {"ks", c.passk.ks}, {"strategies", passk_strats}}},
  };
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Hash of the canonical JSON; output directory and worker count are not
/// part of it.
inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

}  // namespace ots::cli
