#pragma once

// Subcommand implementations: decode, search, sweep, passk, verify, nfe.
// Records are JSON lines written in instance order; a manifest listing every
// cell is written before any model call.

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ots/cli/config.hpp"
#include "ots/cli/report.hpp"
#include "ots/decode.hpp"
#include "ots/eval.hpp"
#include "ots/model.hpp"
#include "ots/parallel.hpp"
#include "ots/search.hpp"
#include "ots/tasks.hpp"

namespace ots::cli {

using nlohmann::json;

using TaskInstance = std::variant<chain_task::Instance, countdown::Instance>;

inline std::string instance_id(const TaskInstance& t) {
  return std::visit([](const auto& i) { return i.id; }, t);
}

inline json instance_json(const TaskInstance& t) {
  json j = std::visit([](const auto& i) { return json(to_json(i)); }, t);
  j["kind"] = std::holds_alternative<countdown::Instance>(t) ? "countdown" : "chain";
  return j;
}

inline TaskInstance instance_from_json(const json& j) {
  const std::string kind = j.value("kind", std::string{});
  if (kind == "countdown") return countdown::instance_from_json(j);
  if (kind == "chain") return chain_task::instance_from_json(j);
  throw ConfigError("instance record lacks a known kind");
}

// ---------------------------------------------------------------------------
// Runtime: config, model and instances

struct Runtime {
  ExperimentConfig cfg;
  std::optional<LoadedModel> model;
  std::vector<TaskInstance> instances;
  std::vector<MixtureModel> priors;  // countdown only, one per instance

  std::vector<Token> prompt(std::size_t i) const {
    return std::visit(
        [](const auto& inst) -> std::vector<Token> {
          if constexpr (std::is_same_v<std::decay_t<decltype(inst)>, countdown::Instance>) return inst.prompt();
          else return inst.prompt;
        },
        instances[i]);
  }

  const Vocabulary& vocab() const { return model ? model->vocab() : priors.front().vocab(); }

  template <class F>
  decltype(auto) with_model(std::size_t i, F&& f) const {
    if (model) return f(*model);
    return f(priors[i]);
  }
};

inline std::vector<TaskInstance> read_instances(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read instances file " + path.string());
  std::vector<TaskInstance> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(instance_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline void write_instances(const std::filesystem::path& path, const std::vector<TaskInstance>& insts) {
  std::string text;
  for (const auto& t : insts) text += instance_json(t).dump() + "\n";
  write_text(path, text);
}

inline std::string padded_id(std::string_view prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*s-%04zu", static_cast<int>(prefix.size()), prefix.data(), i);
  return buf;
}

inline std::vector<TaskInstance> generate_instances(const ExperimentConfig& c, const LoadedModel* model) {
  std::vector<TaskInstance> out;
  const RandomStream root(c.seed);
  for (std::size_t i = 0; i < c.task.count; ++i) {
    RandomStream rng = root.derive(Purpose::task, {i});
    if (c.task.kind == "countdown") {
      countdown::Config cc = c.task.countdown;
      cc.gen_len = c.decode.gen_len;
      out.emplace_back(countdown::generate(rng, cc, padded_id("cd", i)));
    } else {
      out.emplace_back(chain_task::generate(model->chain(), rng, c.task.prompt_len, c.decode.gen_len,
                                            c.task.threshold.value_or(kNegInf), padded_id("ch", i)));
    }
  }
  return out;
}

inline Runtime make_runtime(const ExperimentConfig& c) {
  validate(c);
  Runtime rt;
  rt.cfg = c;
  if (c.model_kind == "file") rt.model = load_model(c.model_path);
  rt.instances = c.task.instances.empty() ? generate_instances(c, rt.model ? &*rt.model : nullptr)
                                          : read_instances(c.task.instances);
  for (std::size_t i = 0; i < rt.instances.size(); ++i) {
    const bool cd = std::holds_alternative<countdown::Instance>(rt.instances[i]);
    if (cd != (c.task.kind == "countdown")) throw ConfigError("instance kind disagrees with [task] kind");
    if (cd)
      rt.priors.push_back(countdown::make_prior(std::get<countdown::Instance>(rt.instances[i]), c.decode.gen_len,
                                                c.prior, RandomStream(c.seed).derive(Purpose::task, {i, 1})));
  }
  if (rt.instances.empty()) throw ConfigError("no task instances");
  return rt;
}

struct Judgement {
  bool ok = false;
  std::string diagnosis;
  std::optional<std::string> answer;
};

inline Judgement judge(const TaskInstance& inst, std::span<const Token> tokens, const LoadedModel* model) {
  if (const auto* cd = std::get_if<countdown::Instance>(&inst)) {
    const auto v = countdown::verify(*cd, tokens);
    return {v.ok, std::string(countdown::to_string(v.diagnosis)), extract_answer(countdown::vocabulary(), tokens)};
  }
  if (!model) throw ConfigError("chain verification needs the chain model");
  const auto v = chain_task::verify(std::get<chain_task::Instance>(inst), tokens, model->chain());
  return {v.ok, v.diagnosis, extract_answer(model->vocab(), tokens)};
}

// ---------------------------------------------------------------------------
// Records

struct RunRecord {
  int schema_version = kSchemaVersion;
  std::string config_hash;
  std::size_t cell = 0;
  std::size_t index = 0;
  std::string instance_id;
  json instance;
  std::string method;
  std::vector<Token> tokens;
  std::string text;
  std::optional<std::string> answer;
  bool verdict = false;
  std::string diagnosis;
  std::optional<double> score;
  std::vector<double> block_scores;
  std::vector<std::size_t> unmask_order;
  std::size_t nfe_denoise = 0;  // predicts
  std::size_t nfe_score = 0;
  std::size_t gen_len = 0;
  json config;
  double wall_ms = 0.0;

  std::size_t nfe_positions() const { return (nfe_denoise + nfe_score) * gen_len; }
  bool operator==(const RunRecord&) const = default;
};

inline json to_json(const RunRecord& r) {
  return {{"schema_version", r.schema_version},
          {"config_hash", r.config_hash},
          {"cell", r.cell},
          {"index", r.index},
          {"instance_id", r.instance_id},
          {"instance", r.instance},
          {"method", r.method},
          {"tokens", r.tokens},
          {"text", r.text},
          {"answer", r.answer ? json(*r.answer) : json(nullptr)},
          {"verdict", r.verdict},
          {"diagnosis", r.diagnosis},
          {"score", r.score ? json(*r.score) : json(nullptr)},
          {"block_scores", r.block_scores},
          {"unmask_order", r.unmask_order},
          {"nfe", {{"denoise", r.nfe_denoise}, {"score", r.nfe_score}, {"gen_len", r.gen_len}}},
          {"config", r.config},
          {"wall_ms", r.wall_ms}};
}

inline RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.schema_version = j.at("schema_version").get<int>();
  if (r.schema_version != kSchemaVersion)
    throw ConfigError("record schema_version " + std::to_string(r.schema_version) + " unsupported");
  r.config_hash = j.at("config_hash").get<std::string>();
  r.cell = j.at("cell").get<std::size_t>();
  r.index = j.at("index").get<std::size_t>();
  r.instance_id = j.at("instance_id").get<std::string>();
  r.instance = j.at("instance");
  r.method = j.at("method").get<std::string>();
  r.tokens = j.at("tokens").get<std::vector<Token>>();
  r.text = j.at("text").get<std::string>();
  if (!j.at("answer").is_null()) r.answer = j.at("answer").get<std::string>();
  r.verdict = j.at("verdict").get<bool>();
  r.diagnosis = j.at("diagnosis").get<std::string>();
  if (!j.at("score").is_null()) r.score = j.at("score").get<double>();
  r.block_scores = j.at("block_scores").get<std::vector<double>>();
  r.unmask_order = j.at("unmask_order").get<std::vector<std::size_t>>();
  r.nfe_denoise = j.at("nfe").at("denoise").get<std::size_t>();
  r.nfe_score = j.at("nfe").at("score").get<std::size_t>();
  r.gen_len = j.at("nfe").at("gen_len").get<std::size_t>();
  r.config = j.at("config");
  r.wall_ms = j.at("wall_ms").get<double>();
  return r;
}

/// The record line with wall time removed, for determinism comparisons.
inline std::string deterministic_line(const RunRecord& r) {
  json j = to_json(r);
  j.erase("wall_ms");
  return j.dump();
}

inline std::vector<RunRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read records file " + path.string());
  std::vector<RunRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// One cell, one instance

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{"decode", "ots", "order_search", "token_search", "majority_vote"};
  return m;
}

inline RunRecord run_one(const Runtime& rt, const ExperimentConfig& c, const std::string& method, std::size_t cell,
                         std::size_t i) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord r;
  r.config_hash = config_hash(c);
  r.cell = cell;
  r.index = i;
  r.instance_id = instance_id(rt.instances[i]);
  r.instance = instance_json(rt.instances[i]);
  r.method = method;
  r.gen_len = c.decode.gen_len;
  r.config = to_json(c);
  const std::vector<Token> prompt = rt.prompt(i);
  const LoadedModel* file_model = rt.model ? &*rt.model : nullptr;

  rt.with_model(i, [&](const auto& model) {
    // Per-instance stream so results do not depend on which worker runs it.
    const std::uint64_t seed = RandomStream(c.seed).derive(Purpose::sample, {cell, i}).key();
    if (method == "decode") {
      DecodeConfig d = c.decode_config();
      const Trajectory t = decode(model, prompt, d, RandomStream(seed));
      r.tokens = t.final.gen;
      r.unmask_order = t.unmask_order;
      r.nfe_denoise = t.nfe;
    } else if (method == "ots") {
      SearchConfig s = c.search_config();
      s.seed = seed;
      const SearchResult res = order_token_search(model, prompt, s);
      r.tokens = res.best.final.gen;
      r.unmask_order = res.best.unmask_order;
      r.score = res.score;
      r.block_scores = res.block_scores;
      r.nfe_denoise = res.nfe.denoise_evals;
      r.nfe_score = res.nfe.score_evals;
    } else if (method == "order_search" || method == "token_search") {
      QuadraticSearchConfig q = c.quadratic_config();
      q.seed = seed;
      const SearchResult res =
          method == "order_search" ? order_search(model, prompt, q) : token_search(model, prompt, q);
      r.tokens = res.best.final.gen;
      r.unmask_order = res.best.unmask_order;
      r.score = res.score;
      r.block_scores = res.block_scores;
      r.nfe_denoise = res.nfe.denoise_evals;
      r.nfe_score = res.nfe.score_evals;
    } else if (method == "majority_vote") {
      const DecodeConfig d = c.decode_config();
      std::vector<Trajectory> runs;
      std::vector<std::optional<std::string>> answers;
      for (std::size_t j = 0; j < c.sweep.vote_samples; ++j) {
        runs.push_back(decode(model, prompt, d, RandomStream(seed).derive(Purpose::sample, {j})));
        r.nfe_denoise += runs.back().nfe;
        answers.push_back(judge(rt.instances[i], runs.back().final.gen, file_model).answer);
      }
      const auto winner = majority_vote(answers);
      std::size_t pick = 0;
      for (std::size_t j = 0; j < answers.size(); ++j)
        if (answers[j] == winner) {
          pick = j;
          break;
        }
      r.tokens = runs[pick].final.gen;
      r.unmask_order = runs[pick].unmask_order;
    } else {
      throw ConfigError("unknown method '" + method + "'");
    }
  });
  const Judgement jd = judge(rt.instances[i], r.tokens, file_model);
  r.verdict = jd.ok;
  r.diagnosis = jd.diagnosis;
  r.answer = jd.answer;
  r.text = rt.vocab().render(r.tokens);
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// Cells, manifest, execution

struct Cell {
  std::string method;
  ExperimentConfig cfg;
};

/// Positions-normalized NFE a cell is expected to use per instance.
inline std::size_t predicted_nfe(const Cell& cell) {
  const auto& c = cell.cfg;
  const std::size_t l = c.decode.gen_len;
  if (cell.method == "decode") return c.decode_config().effective_steps() * l;
  if (cell.method == "majority_vote") return predict_nfe_majority_vote(l, c.decode_config().effective_steps(), c.sweep.vote_samples).total();
  if (cell.method == "ots") return predict_nfe(c.search_config()).total();
  return predict_nfe_quadratic(c.search.beam, l).total() * l;
}

inline json manifest_json(const std::string& command, const ExperimentConfig& base, const std::vector<Cell>& cells,
                          const Runtime& rt) {
  json jc = json::array();
  for (std::size_t k = 0; k < cells.size(); ++k)
    jc.push_back({{"cell", k},
                  {"method", cells[k].method},
                  {"config_hash", config_hash(cells[k].cfg)},
                  {"seed", cells[k].cfg.seed},
                  {"beam", cells[k].cfg.search.beam},
                  {"temperature", cells[k].cfg.decode.temperature},
                  {"block_size", cells[k].cfg.decode.block_size},
                  {"gen_len", cells[k].cfg.decode.gen_len},
                  {"steps", cells[k].cfg.decode.steps},
                  {"predicted_nfe", predicted_nfe(cells[k])}});
  json ids = json::array();
  for (const auto& t : rt.instances) ids.push_back(instance_id(t));
  return {{"schema_version", kSchemaVersion},
          {"command", command},
          {"config_hash", config_hash(base)},
          {"config", to_json(base)},
          {"cells", jc},
          {"instances", ids}};
}

struct ExecOptions {
  bool resume = false;
  bool quiet = false;
};

/// Runs every (cell, instance) pair not already present (with a matching
/// config hash) in out/records.jsonl. Lines are written strictly in
/// (cell, instance) order by a single appender.
inline std::vector<RunRecord> execute(const Runtime& rt, const std::vector<Cell>& cells, const std::string& command,
                                      const ExecOptions& opt) {
  namespace fs = std::filesystem;
  const fs::path out = rt.cfg.out;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
  write_text(out / "manifest.json", manifest_json(command, rt.cfg, cells, rt).dump(2) + "\n");
  write_instances(out / "instances.jsonl", rt.instances);

  const std::size_t n = rt.instances.size();
  const std::size_t total = cells.size() * n;
  std::vector<std::optional<RunRecord>> slots(total);
  std::vector<std::string> hashes;
  for (const auto& c : cells) hashes.push_back(config_hash(c.cfg));
  if (opt.resume) {
    for (const fs::path& p : {out / "records.jsonl", out / "records.jsonl.tmp"}) {
      if (!fs::exists(p)) continue;
      for (auto& r : read_records(p)) {
        const std::size_t k = r.cell * n + r.index;
        if (r.cell < cells.size() && r.index < n && r.config_hash == hashes[r.cell] &&
            r.instance_id == instance_id(rt.instances[r.index]))
          slots[k] = std::move(r);
      }
    }
  }
  std::vector<std::size_t> todo;
  for (std::size_t k = 0; k < total; ++k)
    if (!slots[k]) todo.push_back(k);

  const fs::path tmp = out / "records.jsonl.tmp";
  std::ofstream sink(tmp, std::ios::binary | std::ios::trunc);
  if (!sink) throw IoError("cannot write " + tmp.string());
  std::mutex mu;
  std::size_t next = 0;
  auto flush_ready = [&] {
    while (next < total && slots[next]) {
      sink << to_json(*slots[next]).dump() << '\n';
      ++next;
    }
    sink.flush();
    if (!sink) throw IoError("write failed for " + tmp.string());
  };
  {
    std::lock_guard lock(mu);
    flush_ready();
  }
  parallel_for(todo.size(), rt.cfg.workers, [&](std::size_t t) {
    const std::size_t k = todo[t];
    RunRecord r = run_one(rt, cells[k / n].cfg, cells[k / n].method, k / n, k % n);
    std::lock_guard lock(mu);
    slots[k] = std::move(r);
    flush_ready();
  });
  sink.close();
  fs::rename(tmp, out / "records.jsonl", ec);
  if (ec) throw IoError("cannot finalize records: " + ec.message());

  std::vector<RunRecord> recs;
  for (auto& s : slots) recs.push_back(std::move(*s));
  return recs;
}

struct CellSummary {
  std::size_t instances = 0;
  double accuracy = 0.0;
  double mean_nfe = 0.0;  // positions-normalized
};

inline CellSummary summarize(const std::vector<RunRecord>& recs, std::size_t cell) {
  CellSummary s;
  for (const auto& r : recs) {
    if (r.cell != cell) continue;
    ++s.instances;
    s.accuracy += r.verdict ? 1.0 : 0.0;
    s.mean_nfe += static_cast<double>(r.nfe_positions());
  }
  if (s.instances) {
    s.accuracy /= static_cast<double>(s.instances);
    s.mean_nfe /= static_cast<double>(s.instances);
  }
  return s;
}

inline void print_summary(std::ostream& os, const std::vector<Cell>& cells, const std::vector<RunRecord>& recs) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-5s %-14s %9s %9s %12s\n", "cell", "method", "instances", "accuracy", "mean_nfe");
  os << buf;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto s = summarize(recs, k);
    std::snprintf(buf, sizeof buf, "%-5zu %-14s %9zu %9.4f %12.1f\n", k, cells[k].method.c_str(), s.instances,
                  s.accuracy, s.mean_nfe);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Subcommands

inline std::vector<RunRecord> run_decode(const ExperimentConfig& c, const std::string& method, const ExecOptions& opt,
                                         std::ostream& os) {
  const Runtime rt = make_runtime(c);
  const std::vector<Cell> cells{{method, c}};
  auto recs = execute(rt, cells, method, opt);
  if (!opt.quiet) print_summary(os, cells, recs);
  return recs;
}

inline std::vector<Cell> sweep_cells(const ExperimentConfig& c) {
  const auto& sw = c.sweep;
  if (sw.methods.empty()) throw ConfigError("[sweep] methods must not be empty");
  for (const auto& m : sw.methods)
    if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
      throw ConfigError("[sweep] unknown method '" + m + "'");
  if (c.task.kind == "countdown" && !sw.gen_len.empty())
    throw ConfigError("[sweep] gen_len axis is not supported for the countdown task");
  auto or_base = [](const auto& axis, auto base) {
    using T = decltype(base);
    return axis.empty() ? std::vector<T>{base} : std::vector<T>(axis.begin(), axis.end());
  };
  std::vector<Cell> cells;
  for (const auto& m : sw.methods)
    for (std::size_t beam : or_base(sw.beam, c.search.beam))
      for (double temp : or_base(sw.temperature, c.decode.temperature))
        for (std::size_t bs : or_base(sw.block_size, c.decode.block_size))
          for (std::size_t len : or_base(sw.gen_len, c.decode.gen_len))
            for (std::size_t steps : or_base(sw.steps, c.decode.steps)) {
              Cell cell{m, c};
              cell.cfg.search.beam = beam;
              cell.cfg.decode.temperature = temp;
              if (!sw.temperature.empty()) cell.cfg.search_temperature = temp;
              cell.cfg.decode.block_size = bs;
              cell.cfg.decode.gen_len = len;
              cell.cfg.decode.steps = steps;
              validate(cell.cfg);
              cells.push_back(std::move(cell));
            }
  return cells;
}

inline CsvTable sweep_table(const std::vector<Cell>& cells, const std::vector<RunRecord>& recs) {
  CsvTable t;
  t.header = {"cell", "method", "beam", "temperature", "block_size", "gen_len", "steps",
              "instances", "accuracy", "mean_nfe", "predicted_nfe"};
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto& c = cells[k].cfg;
    const auto s = summarize(recs, k);
    t.add({std::to_string(k), cells[k].method, std::to_string(c.search.beam), fmt(c.decode.temperature),
           std::to_string(c.decode.block_size), std::to_string(c.decode.gen_len), std::to_string(c.decode.steps),
           std::to_string(s.instances), fmt(s.accuracy), fmt(s.mean_nfe), std::to_string(predicted_nfe(cells[k]))});
  }
  return t;
}

inline std::vector<RunRecord> run_sweep(const ExperimentConfig& c, const ExecOptions& opt, std::ostream& os) {
  const Runtime rt = make_runtime(c);
  const std::vector<Cell> cells = sweep_cells(c);
  auto recs = execute(rt, cells, "sweep", opt);
  const CsvTable table = sweep_table(cells, recs);
  const std::filesystem::path out = c.out;
  write_text(out / "sweep.csv", render_csv(table));

  std::map<std::string, Series> by_block, by_nfe;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto s = summarize(recs, k);
    const auto& m = cells[k].method;
    by_block[m].name = m;
    by_block[m].points.emplace_back(static_cast<double>(cells[k].cfg.decode.block_size), s.accuracy);
    by_nfe[m].name = m;
    by_nfe[m].points.emplace_back(s.mean_nfe, s.accuracy);
  }
  Chart a{"Accuracy vs block size", "block size", "accuracy", false, std::make_pair(0.0, 1.0), {}};
  Chart b{"Accuracy vs NFE", "NFE (positions)", "accuracy", false, std::make_pair(0.0, 1.0), {}};
  for (auto& [m, s] : by_block) a.series.push_back(s);
  for (auto& [m, s] : by_nfe) b.series.push_back(s);
  write_text(out / "accuracy_vs_block_size.svg", render_svg(a));
  write_text(out / "accuracy_vs_nfe.svg", render_svg(b));
  if (!opt.quiet) print_summary(os, cells, recs);
  return recs;
}

inline TradeoffReport run_passk(const ExperimentConfig& c, const ExecOptions& opt, std::ostream& os) {
  namespace fs = std::filesystem;
  const std::vector<std::size_t> ks = c.passk.ks.empty() ? power_of_two_ks(c.passk.n) : c.passk.ks;
  for (std::size_t k : ks)
    if (k == 0 || k > c.passk.n)
      throw ConfigError("[passk] k = " + std::to_string(k) + " outside [1, n = " + std::to_string(c.passk.n) + "]");
  const Runtime rt = make_runtime(c);
  const fs::path out = c.out;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string());
  json strategies = json::array();
  for (const auto& s : c.passk.strategies)
    strategies.push_back({{"strategy", to_string(s.strategy)}, {"temperature", s.temperature}});
  json ids = json::array();
  for (const auto& t : rt.instances) ids.push_back(instance_id(t));
  write_text(out / "manifest.json", json{{"schema_version", kSchemaVersion},
                                         {"command", "passk"},
                                         {"config_hash", config_hash(c)},
                                         {"config", to_json(c)},
                                         {"n", c.passk.n},
                                         {"ks", ks},
                                         {"strategies", strategies},
                                         {"instances", ids}}
                                        .dump(2) + "\n");
  write_instances(out / "instances.jsonl", rt.instances);

  const LoadedModel* file_model = rt.model ? &*rt.model : nullptr;
  std::vector<Problem> problems;
  for (std::size_t i = 0; i < rt.instances.size(); ++i) {
    Problem p;
    p.id = instance_id(rt.instances[i]);
    p.prompt = rt.prompt(i);
    const TaskInstance inst = rt.instances[i];
    p.verify = [inst, file_model](std::span<const Token> t) { return judge(inst, t, file_model).ok; };
    p.answer = [inst, file_model](std::span<const Token> t) { return judge(inst, t, file_model).answer; };
    if (const auto* ch = std::get_if<chain_task::Instance>(&inst))
      p.score = [ch = *ch, file_model](std::span<const Token> t) {
        return chain_task::verify(ch, t, file_model->chain()).logprob;
      };
    problems.push_back(std::move(p));
  }
  StudyConfig sc;
  sc.gen_len = c.decode.gen_len;
  sc.steps = c.decode.steps;
  sc.block_size = c.decode.block_size;
  sc.seed = c.seed;
  sc.workers = c.workers;
  sc.confidence = c.decode.confidence;
  TradeoffReport rep;
  if (rt.model) {
    rep = tradeoff_study(*rt.model, problems, c.passk.strategies, c.passk.n, ks, sc);
  } else {
    rep = tradeoff_study_each([&](std::size_t p) -> const MixtureModel& { return rt.priors[p]; }, problems,
                              c.passk.strategies, c.passk.n, ks, sc);
  }

  std::string lines;
  for (const auto& s : rep.samples) {
    const auto& spec = c.passk.strategies[s.strategy];
    lines += json{{"schema_version", kSchemaVersion},
                  {"config_hash", config_hash(c)},
                  {"instance_id", problems[s.problem].id},
                  {"strategy", to_string(spec.strategy)},
                  {"temperature", spec.temperature},
                  {"sample", s.sample},
                  {"tokens", s.tokens},
                  {"text", rt.vocab().render(s.tokens)},
                  {"answer", s.answer ? json(*s.answer) : json(nullptr)},
                  {"correct", s.correct},
                  {"score", s.score},
                  {"unmask_order", s.unmask_order},
                  {"ar_distance", ar_similarity(s.unmask_order, s.unmask_order.size())}}
                 .dump() +
             "\n";
  }
  write_text(out / "samples.jsonl", lines);

  CsvTable curve{{"strategy", "temperature", "k", "pass_at_k"}, {}};
  CsvTable summary{{"strategy", "temperature", "n", "mean_distinct", "mean_score"}, {}};
  Chart chart{"pass@k by strategy", "k", "pass@k", true, std::make_pair(0.0, 1.0), {}};
  for (const auto& cv : rep.curves) {
    const std::string name = std::string(to_string(cv.spec.strategy)) + " T=" + fmt(cv.spec.temperature);
    Series s{name, {}};
    for (std::size_t i = 0; i < cv.ks.size(); ++i) {
      curve.add({std::string(to_string(cv.spec.strategy)), fmt(cv.spec.temperature), std::to_string(cv.ks[i]),
                 fmt(cv.pass_at_k[i])});
      s.points.emplace_back(static_cast<double>(cv.ks[i]), cv.pass_at_k[i]);
    }
    summary.add({std::string(to_string(cv.spec.strategy)), fmt(cv.spec.temperature), std::to_string(rep.n),
                 fmt(cv.mean_distinct), fmt(cv.mean_score)});
    chart.series.push_back(std::move(s));
  }
  write_text(out / "passk.csv", render_csv(curve));
  write_text(out / "passk_summary.csv", render_csv(summary));
  write_text(out / "passk.svg", render_svg(chart));
  if (!opt.quiet) os << render_csv(curve);
  return rep;
}

struct VerifyReport {
  std::size_t records = 0;
  std::size_t correct = 0;
  std::size_t mismatches = 0;
};

/// Re-runs the task verifier on every record; counts disagreements with the
/// stored verdict.
inline VerifyReport run_verify(const std::filesystem::path& records, const std::optional<std::string>& model_path,
                               std::ostream& os) {
  std::optional<LoadedModel> model;
  if (model_path && !model_path->empty()) model = load_model(*model_path);
  VerifyReport rep;
  for (const auto& r : read_records(records)) {
    const TaskInstance inst = instance_from_json(r.instance);
    if (!model && std::holds_alternative<chain_task::Instance>(inst)) {
      const std::string path = r.config.at("model").at("path").get<std::string>();
      model = load_model(path);
    }
    const Judgement j = judge(inst, r.tokens, model ? &*model : nullptr);
    ++rep.records;
    rep.correct += j.ok ? 1 : 0;
    if (j.ok != r.verdict) {
      ++rep.mismatches;
      os << "mismatch: cell " << r.cell << " instance " << r.instance_id << " stored " << r.verdict << " now "
         << j.ok << "\n";
    }
  }
  os << rep.records << " records, " << rep.correct << " pass, " << rep.mismatches << " mismatches\n";
  return rep;
}

inline json nfe_report(const ExperimentConfig& c) {
  const SearchConfig s = c.search_config();
  detail::wrap([&] {
    s.validate();
    return 0;
  });
  const auto p = predict_nfe(s);
  const std::size_t l = c.decode.gen_len;
  const std::size_t steps = c.decode_config().effective_steps();
  return {{"gen_len", l},
          {"steps", steps},
          {"blocks", s.layout().num_blocks()},
          {"beam", s.beam},
          {"ots", {{"denoise", p.denoise}, {"score", p.score}, {"total", p.total()}}},
          {"decode", steps * l},
          {"majority_vote", {{"samples", c.sweep.vote_samples},
                             {"total", predict_nfe_majority_vote(l, steps, c.sweep.vote_samples).total()}}}};
}

}  // namespace ots::cli
