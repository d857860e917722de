#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ots/cli/config.hpp"
#include "ots/cli/report.hpp"
#include "ots/cli/runner.hpp"

using namespace ots;
using namespace ots::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ots_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(OTS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string src(const std::string& rel) { return std::string(OTS_SOURCE_DIR) + "/" + rel; }

ExperimentConfig chain_config(const fs::path& out) {
  ExperimentConfig c = load_config(src("configs/chain_decode.toml"));
  c.model_path = src("models/chain6_perturbed.json");
  c.out = out.string();
  return c;
}

std::vector<std::string> lines_of(const std::vector<RunRecord>& recs) {
  std::vector<std::string> out;
  for (const auto& r : recs) out.push_back(deterministic_line(r));
  return out;
}

}  // namespace

TEST(Config, ParsesShippedFiles) {
  for (const char* f : {"configs/chain_decode.toml", "configs/countdown_search.toml", "configs/block_sweep.toml",
                        "configs/passk.toml"}) {
    const auto c = load_config(src(f));
    EXPECT_NO_THROW(validate(c)) << f;
  }
  const auto p = load_config(src("configs/passk.toml"));
  EXPECT_EQ(p.passk.n, 64u);
  ASSERT_EQ(p.passk.strategies.size(), 4u);
  EXPECT_EQ(p.passk.strategies[2].temperature, 0.0);
}

TEST(Config, HashIgnoresOutputAndWorkers) {
  ExperimentConfig a;
  ExperimentConfig b = a;
  b.out = "elsewhere";
  b.workers = 8;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, RejectsBadValues) {
  const fs::path dir = scratch("badcfg");
  auto load = [&](const std::string& text) {
    std::ofstream(dir / "c.toml") << text;
    return load_config(dir / "c.toml");
  };
  EXPECT_THROW(load("[decode]\nstrategy = \"sideways\"\n"), ConfigError);
  EXPECT_THROW(load("[decode\n"), ConfigError);
  EXPECT_THROW(load_config(dir / "absent.toml"), IoError);
}

TEST(Csv, RoundTripWithQuoting) {
  CsvTable t{{"a", "b,c"}, {}};
  t.add({"1", "say \"hi\""});
  t.add({"x\ny", ""});
  const auto back = parse_csv(render_csv(t));
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(fmt(0.4), "0.4");
  EXPECT_EQ(std::stod(fmt(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Svg, HasSeriesAndLegend) {
  Chart c{"t", "k", "pass@k", true, std::make_pair(0.0, 1.0), {{"a", {{1, 0.1}, {2, 0.2}, {4, 0.5}}}, {"b", {}}}};
  const std::string svg = render_svg(c);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find(">a</text>"), std::string::npos);
  EXPECT_NE(svg.find(">b</text>"), std::string::npos);
  EXPECT_NE(svg.find("<circle"), std::string::npos);
}

TEST(Records, JsonRoundTrip) {
  const fs::path out = scratch("records");
  auto c = chain_config(out);
  c.task.count = 3;
  const auto recs = run_decode(c, "ots", {false, true}, std::cout);
  const auto back = read_records(out / "records.jsonl");
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(back[i], recs[i]);
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  EXPECT_FALSE(fs::exists(out / "records.jsonl.tmp"));
  for (const auto& r : recs) {
    EXPECT_EQ(r.schema_version, kSchemaVersion);
    EXPECT_EQ(r.nfe_positions(), predicted_nfe({"ots", c}));
  }
}

TEST(Records, WorkerCountDoesNotChangeOutput) {
  auto c = chain_config(scratch("w1"));
  c.task.count = 6;
  c.workers = 1;
  const auto one = run_decode(c, "ots", {false, true}, std::cout);
  c.out = scratch("w8").string();
  c.workers = 8;
  const auto eight = run_decode(c, "ots", {false, true}, std::cout);
  EXPECT_EQ(lines_of(one), lines_of(eight));
}

TEST(Records, ResumeKeepsFinishedWork) {
  const fs::path out = scratch("resume");
  auto c = chain_config(out);
  c.task.count = 4;
  const auto full = run_decode(c, "decode", {false, true}, std::cout);
  // keep only the first two lines, as if interrupted
  std::ifstream in(out / "records.jsonl");
  std::string l1, l2;
  std::getline(in, l1);
  std::getline(in, l2);
  in.close();
  std::ofstream(out / "records.jsonl") << l1 << "\n" << l2 << "\n";
  const auto resumed = run_decode(c, "decode", {true, true}, std::cout);
  EXPECT_EQ(lines_of(resumed), lines_of(full));
  EXPECT_EQ(resumed[0].wall_ms, full[0].wall_ms);  // reused, not recomputed
}

TEST(Sweep, WritesCsvAndCharts) {
  const fs::path out = scratch("sweep");
  ExperimentConfig c = load_config(src("configs/block_sweep.toml"));
  c.out = out.string();
  c.task.count = 3;
  c.sweep.block_size = {4, 8};
  run_sweep(c, {false, true}, std::cout);
  const auto t = parse_csv(read_text(out / "sweep.csv"));
  EXPECT_EQ(t.header.front(), "cell");
  EXPECT_EQ(t.rows.size(), 4u);
  EXPECT_TRUE(fs::exists(out / "accuracy_vs_block_size.svg"));
  EXPECT_TRUE(fs::exists(out / "accuracy_vs_nfe.svg"));
  c.sweep.gen_len = {8};
  EXPECT_THROW(sweep_cells(c), ConfigError);
}

TEST(Passk, WritesCurves) {
  const fs::path out = scratch("passk");
  ExperimentConfig c = load_config(src("configs/passk.toml"));
  c.model_path = src("models/chain6_perturbed.json");
  c.out = out.string();
  c.task.count = 2;
  c.passk.n = 4;
  run_passk(c, {false, true}, std::cout);
  const auto t = parse_csv(read_text(out / "passk.csv"));
  EXPECT_EQ(t.header, (std::vector<std::string>{"strategy", "temperature", "k", "pass_at_k"}));
  EXPECT_EQ(t.rows.size(), 4u * 3u);  // 4 strategies, k = 1, 2, 4
  EXPECT_TRUE(fs::exists(out / "passk.svg"));
  EXPECT_TRUE(fs::exists(out / "samples.jsonl"));
}

TEST(CliBinary, ExitCodes) {
  const fs::path out = scratch("exit");
  EXPECT_EQ(run_cli("nfe --gen-len 256 --steps 128 --block-size 32 --beam 4"), 0);
  EXPECT_EQ(run_cli("decode --config " + src("configs/chain_decode.toml") + " --model " + (out / "nope.json").string() +
                    " --out " + out.string()),
            3);
  std::ofstream(out / "ks.toml") << "[model]\npath = \"" << src("models/chain6_perturbed.json")
                                  << "\"\n[passk]\nn = 4\nks = [1, 8]\n";
  EXPECT_EQ(run_cli("passk --config " + (out / "ks.toml").string() + " --out " + out.string()), 2);
  EXPECT_EQ(run_cli("decode --config " + (out / "absent.toml").string()), 4);
  EXPECT_EQ(run_cli("decode --strategy sideways"), 2);
  EXPECT_EQ(run_cli("bogus"), 2);
  EXPECT_EQ(run_cli("verify --records " + (out / "missing.jsonl").string()), 4);
}

TEST(CliBinary, VerifyFlagsTamperedRecords) {
  const fs::path out = scratch("verify");
  const std::string base = "decode --config " + src("configs/chain_decode.toml") + " --model " +
                           src("models/chain6_perturbed.json") + " --out " + out.string();
  ASSERT_EQ(run_cli(base), 0);
  EXPECT_EQ(run_cli("verify --records " + (out / "records.jsonl").string() + " --model " +
                    src("models/chain6_perturbed.json")),
            0);
  std::ifstream in(out / "records.jsonl");
  std::stringstream ss;
  std::string line;
  bool flipped = false;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (!flipped) {
      j["verdict"] = !j["verdict"].get<bool>();
      flipped = true;
    }
    ss << j.dump() << "\n";
  }
  in.close();
  std::ofstream(out / "tampered.jsonl") << ss.str();
  EXPECT_EQ(run_cli("verify --records " + (out / "tampered.jsonl").string() + " --model " +
                    src("models/chain6_perturbed.json")),
            1);
}
