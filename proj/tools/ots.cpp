// ots: command-line driver for decoding, search, sweeps and pass@k studies.
//
//   ots decode --config run.toml --out out/decode
//   ots search --config run.toml --beam 5 --temp 0.4
//   ots sweep  --config sweep.toml
//   ots passk  --config passk.toml
//   ots verify --records out/decode/records.jsonl
//   ots nfe    --gen-len 256 --steps 128 --block-size 32 --beam 4
//
// Exit codes: 0 ok, 1 verification mismatch, 2 config error, 3 model error,
// 4 I/O error.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ots/cli/config.hpp"
#include "ots/cli/runner.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::string> model;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<std::size_t> beam;
  std::optional<double> temp;
  std::optional<std::size_t> block_size;
  std::optional<std::size_t> gen_len;
  std::optional<std::size_t> steps;
  std::optional<std::string> estimator;
  std::optional<std::string> instances;
  std::optional<std::size_t> workers;
  bool resume = false;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "TOML config file");
  app->add_option("--model", f.model, "model file (JSON)");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--seed", f.seed, "master seed");
  app->add_option("--strategy", f.strategy, "random | low_confidence | ar");
  app->add_option("--beam", f.beam, "beam size K");
  app->add_option("--temp", f.temp, "Gumbel temperature");
  app->add_option("--block-size", f.block_size, "block size (0 = one block)");
  app->add_option("--gen-len", f.gen_len, "generation length L");
  app->add_option("--steps", f.steps, "diffusion steps S");
  app->add_option("--estimator", f.estimator, "ots | all_blocks | future_blocks");
  app->add_option("--instances", f.instances, "task instances (JSONL)");
  app->add_option("--workers", f.workers, "worker threads");
  app->add_flag("--resume", f.resume, "skip records already present in the output directory");
}

ots::cli::ExperimentConfig effective_config(const Flags& f) {
  using namespace ots;
  cli::ExperimentConfig c = f.config.empty() ? cli::ExperimentConfig{} : cli::load_config(f.config);
  if (f.model) c.model_path = *f.model;
  if (f.out) c.out = *f.out;
  if (f.seed) c.seed = *f.seed;
  try {
    if (f.strategy) c.decode.strategy = parse_strategy(*f.strategy);
    if (f.estimator) c.search.estimator = parse_estimator(*f.estimator);
  } catch (const ArgumentError& e) {
    throw cli::ConfigError(e.what());
  }
  if (f.beam) c.search.beam = *f.beam;
  if (f.temp) {
    c.decode.temperature = *f.temp;
    c.search_temperature = *f.temp;
  }
  if (f.block_size) c.decode.block_size = *f.block_size;
  if (f.gen_len) c.decode.gen_len = *f.gen_len;
  if (f.steps) c.decode.steps = *f.steps;
  if (f.instances) c.task.instances = *f.instances;
  if (f.workers) c.workers = *f.workers;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace ots;
  CLI::App app{"Order-Token Search decoding engine for masked diffusion models"};
  app.require_subcommand(1);
  Flags f;
  std::string records;
  auto* decode_cmd = app.add_subcommand("decode", "decode each instance once");
  auto* search_cmd = app.add_subcommand("search", "run the configured search algorithm per instance");
  auto* sweep_cmd = app.add_subcommand("sweep", "run the [sweep] grid and emit CSV and SVG reports");
  auto* passk_cmd = app.add_subcommand("passk", "pass@k curves per sampling strategy");
  auto* verify_cmd = app.add_subcommand("verify", "re-run the verifier on a record file");
  auto* nfe_cmd = app.add_subcommand("nfe", "print predicted NFE for a configuration");
  for (auto* sub : {decode_cmd, search_cmd, sweep_cmd, passk_cmd, nfe_cmd}) add_common(sub, f);
  verify_cmd->add_option("--records", records, "records.jsonl")->required();
  verify_cmd->add_option("--model", f.model, "chain model file (default: path in each record)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const cli::ExecOptions opt{f.resume, false};
    if (verify_cmd->parsed()) {
      const auto rep = cli::run_verify(records, f.model, std::cout);
      return rep.mismatches == 0 ? 0 : 1;
    }
    const cli::ExperimentConfig c = effective_config(f);
    if (decode_cmd->parsed()) cli::run_decode(c, "decode", opt, std::cout);
    else if (search_cmd->parsed()) cli::run_decode(c, c.algorithm, opt, std::cout);
    else if (sweep_cmd->parsed()) cli::run_sweep(c, opt, std::cout);
    else if (passk_cmd->parsed()) cli::run_passk(c, opt, std::cout);
    else if (nfe_cmd->parsed()) std::cout << cli::nfe_report(c).dump(2) << "\n";
    return 0;
  } catch (const cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ModelError& e) {
    std::cerr << "model error: " << e.what() << "\n";
    return 3;
  } catch (const cli::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
