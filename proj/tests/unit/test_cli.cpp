#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "breechmark/cli.hpp"
#include "breechmark/error.hpp"
#include "breechmark/scan_io.hpp"
#include "config.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace breechmark;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "breechmark");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// Small but complete: 4 guns x 2 casings, two held out.
json tiny_config(const fs::path& out) {
  return {{"seed", 5},
          {"output_dir", out.string()},
          {"workers", 1},
          {"synth", {{"guns", 4}, {"casings_per_gun", 2}, {"grid_size", 256}, {"max_translation", 4.0}}},
          {"model", {{"width", 4}, {"embedding_dim", 8}}},
          {"train", {{"epochs", 2}, {"eval_every", 1}, {"smooth_window", 2}, {"guns_per_batch", 2}, {"runs", 1}}},
          {"split", {{"heldout_guns", 2}}}};
}

void write_config(const fs::path& path, const json& cfg) { std::ofstream(path) << cfg.dump(2); }

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("defaults and seeds") {
    const auto cfg = cli::parse_config(json::object());
    CHECK(cfg.seed == 1);
    CHECK(cfg.synth.seed == 1);
    CHECK(cfg.train.seed == 1);
    CHECK(cfg.model.width == 16);
    CHECK(cfg.cmc.thetas.size() == 21);
    const auto seeded = cli::parse_config({{"seed", 9}, {"synth", {{"seed", 3}}}});
    CHECK(seeded.synth.seed == 3);
    CHECK(seeded.train.seed == 9);
  }
  SUBCASE("round trip through json") {
    json doc = {{"model", {{"variant", "block_depth4"}, {"width", 8}}},
                {"train", {{"optimizer", "sgd"}, {"momentum", 0.9}}},
                {"cmc", {{"thetas", {-6.0, 0.0, 6.0}}, {"high_cmc", false}}},
                {"split", {{"eval_guns", {"b", "a"}}}}};
    const auto cfg = cli::parse_config(doc);
    CHECK(cfg.model.variant == nn::Variant::BlockDepth4);
    CHECK(cfg.train.optimizer == train::Optimizer::SGD);
    CHECK_FALSE(cfg.cmc.high_cmc);
    const auto j = cli::to_json(cfg);
    CHECK(cli::to_json(cli::parse_config(j)) == j);
    CHECK(cli::config_hash(j) == cli::config_hash(cli::to_json(cli::parse_config(j))));
    auto changed = j;
    changed["cmc"]["t_ccf"] = 0.6;
    CHECK(cli::config_hash(changed) != cli::config_hash(j));
    CHECK(cli::config_hash(j).rfind("fnv1a64:", 0) == 0);
    CHECK(cli::config_hash(j).size() == 8 + 16);
  }
  SUBCASE("run.json documents are accepted") {
    json run = {{"config_hash", "x"}, {"config", {{"seed", 42}}}, {"commands", json::object()}};
    CHECK(cli::parse_config(run).seed == 42);
  }
  SUBCASE("errors name the field path") {
    auto message = [](const json& doc) {
      try {
        cli::parse_config(doc);
      } catch (const ConfigError& e) {
        return std::string(e.what());
      }
      return std::string("no error");
    };
    CHECK(message({{"train", {{"epoch", 3}}}, {"bogus", 1}}) == "unknown config keys: train.epoch, bogus");
    CHECK(message({{"train", {{"epochs", "many"}}}}) == "train.epochs: expected an integer");
    CHECK(message({{"train", {{"epochs", -1}}}}) == "train.epochs: must not be negative");
    CHECK(message({{"cmc", {{"thetas", {1.0, "x"}}}}}) == "cmc.thetas[1]: expected a number");
    CHECK(message({{"model", 3}}) == "model: expected an object");
    CHECK(message({{"model", {{"variant", "Huge"}}}}).rfind("model.variant:", 0) == 0);
    CHECK(message({{"cmc", {{"t_ccf", 2.0}}}}).find("cmc.t_ccf") != std::string::npos);
    CHECK(message({{"train", {{"epochs", 30}, {"eval_every", 20}}}}).find("train.eval_every") != std::string::npos);
    CHECK(message({{"synth", {{"guns", 0}}}}).rfind("synth:", 0) == 0);
    CHECK(message({{"split", {{"eval_guns", {"a", "a"}}}}}).find("duplicate") != std::string::npos);
  }
  SUBCASE("overrides") {
    json doc = json::object();
    cli::apply_override(doc, "train.epochs=200");
    cli::apply_override(doc, "model.variant=double_block");
    cli::apply_override(doc, "cmc.thetas=[-3,0,3]");
    CHECK(doc["train"]["epochs"] == 200);
    CHECK(doc["model"]["variant"] == "double_block");
    CHECK(doc["cmc"]["thetas"].size() == 3);
    CHECK_THROWS_AS(cli::apply_override(doc, "novalue"), ConfigError);
    CHECK_THROWS_AS(cli::apply_override(doc, "train..x=1"), ConfigError);
    CHECK_THROWS_AS(cli::apply_override(doc, "train.epochs.x=1"), ConfigError);
  }
  SUBCASE("held-out guns") {
    cli::SplitConfig s;
    CHECK(cli::heldout_guns(s, {"a", "b"}).empty());
    s.heldout_guns = 2;
    CHECK(cli::heldout_guns(s, {"d", "a", "c", "b", "a"}) == std::vector<std::string>{"c", "d"});
    CHECK_THROWS_AS(cli::heldout_guns(s, {"a", "b"}), ConfigError);
    s.eval_guns = {"b", "a"};
    CHECK(cli::heldout_guns(s, {"a", "b", "c"}) == std::vector<std::string>{"a", "b"});
    s.eval_guns = {"zz"};
    CHECK_THROWS_AS(cli::heldout_guns(s, {"a", "b"}), ConfigError);
  }
}

TEST_CASE("usage errors exit 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  const auto r = run({"score"});
  CHECK(r.code == 2);
  CHECK(r.err.find("--method") != std::string::npos);
  CHECK(run({"score", "--method", "euclid"}).code == 2);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"evaluate"}).code == 2);

  testing::TempDir dir;
  write_config(dir / "bad.json", {{"train", {{"epoch", 3}}}, {"bogus", 1}});
  const auto bad = run({"train", "-c", (dir / "bad.json").string(), "-o", (dir / "run").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("train.epoch, bogus") != std::string::npos);
  CHECK(run({"synth", "-c", (dir / "missing.json").string()}).code == 2);
  CHECK(run({"synth", "-o", (dir / "run").string(), "--set", "synth.guns=zero"}).code == 2);

  ::setenv("BREECHMARK_THREADS", "lots", 1);
  CHECK(run({"synth", "-o", (dir / "run").string()}).code == 2);
  ::unsetenv("BREECHMARK_THREADS");
}

TEST_CASE("domain errors exit 1 and list missing inputs") {
  testing::TempDir dir;
  {
    std::ofstream m(dir / "manifest.csv");
    m << "path,gun_id,casing_id\nnope1.x3p,g,c1\nnope2.x3p,g,c2\n";
  }
  const auto r = run({"ingest", "-q", "-o", (dir / "run").string(), "-m", (dir / "manifest.csv").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("nope1.x3p") != std::string::npos);
  CHECK(r.err.find("nope2.x3p") != std::string::npos);

  const auto p = run({"preprocess", "-q", "-o", (dir / "empty").string()});
  CHECK(p.code == 1);
  CHECK(p.err.find("manifest.csv") != std::string::npos);
  const auto status = read_json(dir / "empty" / "run.json")["commands"]["preprocess"]["status"].get<std::string>();
  CHECK(status.rfind("error:", 0) == 0);

  CHECK(run({"embed", "-q", "-o", (dir / "empty").string()}).code == 1);
  CHECK(run({"report", "-q", "-o", (dir / "empty").string()}).code == 1);
}

TEST_CASE("ingest x3p scans") {
  testing::TempDir dir;
  std::mt19937_64 rng(3);
  std::vector<double> z(6 * 5);
  for (auto& v : z) v = std::normal_distribution<double>(0, 1e-6)(rng);
  for (int k = 0; k < 2; ++k) {
    testing::write_zip(dir / ("s" + std::to_string(k) + ".x3p"),
                       {{"main.xml", testing::x3p_main_xml(6, 5, 2e-6, 2e-6), true},
                        {"bindata/data.bin", testing::le_doubles(z), true}});
  }
  {
    std::ofstream m(dir / "manifest.csv");
    m << "path,gun_id,casing_id\ns0.x3p,gA,A-1\ns1.x3p,gA,A-2\n";
  }
  const auto r = run({"ingest", "-q", "-o", (dir / "run").string(), "-m", (dir / "manifest.csv").string()});
  REQUIRE(r.code == 0);
  const auto ds = io::load_dataset(io::read_manifest(dir / "run" / "manifest.csv"));
  REQUIRE(ds.size() == 2);
  CHECK(ds[1].casing_id == "A-2");
  CHECK(ds[0].surface.rows() == 5);
  CHECK(ds[0].surface.resolution() == 2e-6);
  CHECK(read_json(dir / "run" / "run.json")["commands"]["ingest"]["scans"] == 2);
}

TEST_CASE("pipeline end to end") {
  testing::TempDir dir;
  const fs::path run_dir = dir / "run";
  write_config(dir / "c.json", tiny_config(run_dir));
  const std::string cfg = (dir / "c.json").string();

  REQUIRE(run({"synth", "-q", "-c", cfg}).code == 0);
  REQUIRE(run({"preprocess", "-q", "-c", cfg}).code == 0);
  REQUIRE(run({"train", "-q", "-c", cfg}).code == 0);
  const auto split = read_json(run_dir / "train" / "split.json");
  CHECK(split["eval_guns"] == json({"G3", "G4"}));
  CHECK(fs::exists(run_dir / "train" / "run0" / "best.bmkm"));
  CHECK(io::read_manifest(run_dir / "preprocessed" / "manifest.csv").entries.size() == 8);
  const auto log = train::read_train_log(run_dir / "train" / "run0" / "train_log.csv");
  CHECK(log.size() == 2);
  const auto summary = read_json(run_dir / "train" / "summary.json");
  CHECK(summary["layers"] == 11);
  CHECK(summary["eval_scans"] == 4);

  REQUIRE(run({"embed", "-q", "-c", cfg}).code == 0);
  CHECK(read_json(run_dir / "embeddings.json")["items"].size() == 8);
  REQUIRE(run({"score", "-q", "-c", cfg, "--method", "contrastive"}).code == 0);
  const auto contrastive = eval::read_scores_csv(run_dir / "scores_contrastive.csv");
  CHECK(contrastive.pairs.size() == 6);  // held-out casings only
  REQUIRE(run({"score", "-q", "-c", cfg, "--method", "contrastive", "--subset", "all", "--output",
               (dir / "all.csv").string()}).code == 0);
  CHECK(eval::read_scores_csv(dir / "all.csv").pairs.size() == 28);

  SUBCASE("cmc scores do not depend on worker count") {
    REQUIRE(run({"score", "-q", "-c", cfg, "--method", "cmc", "-w", "1"}).code == 0);
    REQUIRE(run({"score", "-q", "-c", cfg, "--method", "cmc", "-w", "3", "--output", (dir / "cmc3.csv").string()})
                .code == 0);
    CHECK(slurp(run_dir / "scores_cmc.csv") == slurp(dir / "cmc3.csv"));
    const auto cmc = eval::read_scores_csv(run_dir / "scores_cmc.csv");
    CHECK(cmc.method == "cmc");
    CHECK(cmc.pairs.size() == 6);
    const auto rj = read_json(run_dir / "run.json");
    CHECK(rj["commands"]["score"]["workers"] == 3);

    const auto ev = run({"evaluate", "-q", "-c", cfg, "--scores", (run_dir / "scores_contrastive.csv").string(),
                         (run_dir / "scores_cmc.csv").string()});
    REQUIRE(ev.code == 0);
    const auto roc_svg = slurp(run_dir / "eval" / "roc.svg");
    CHECK(roc_svg.find("contrastive (AUC") != std::string::npos);
    CHECK(roc_svg.find("cmc (AUC") != std::string::npos);
    CHECK(fs::exists(run_dir / "eval" / "scatter.svg"));
    CHECK(read_json(run_dir / "eval" / "summary.json")["sets"].size() == 2);

    REQUIRE(run({"report", "-q", "-c", cfg}).code == 0);
    for (const char* f : {"report.md", "table.md", "roc.svg", "hist_contrastive.svg", "hist_cmc.svg", "scatter.svg",
                          "scatter.csv", "roc_cmc.csv"}) {
      CHECK_MESSAGE(fs::exists(run_dir / "report" / f), f);
    }
    CHECK(slurp(run_dir / "report" / "table.md").find("| Layers | Parameters | Avg High | Avg Smoothed |") !=
          std::string::npos);

    REQUIRE(run({"bench-cmc", "-q", "-c", cfg, "--scans", "3"}).code == 0);
    const auto bench = read_json(run_dir / "bench_cmc.json");
    CHECK(bench["pairs"] == 3);
    CHECK(bench["dataset_pairs"] == "28");
    CHECK(bench["pairs_per_second"].get<double>() > 0.0);
  }

  SUBCASE("run.json reproduces the run") {
    const auto rj = read_json(run_dir / "run.json");
    CHECK(rj["config_hash"].get<std::string>().rfind("fnv1a64:", 0) == 0);
    CHECK(rj["versions"].contains("breechmark"));
    for (const char* c : {"synth", "preprocess", "train", "embed", "score"}) {
      CHECK_MESSAGE(rj["commands"][c]["status"] == "ok", c);
      CHECK(rj["commands"][c]["seconds"].get<double>() >= 0.0);
    }
    const std::string again = (dir / "again").string();
    const std::string rcfg = (run_dir / "run.json").string();
    REQUIRE(run({"synth", "-q", "-c", rcfg, "-o", again}).code == 0);
    REQUIRE(run({"preprocess", "-q", "-c", rcfg, "-o", again}).code == 0);
    REQUIRE(run({"train", "-q", "-c", rcfg, "-o", again, "-w", "2"}).code == 0);
    CHECK(slurp(run_dir / "train" / "run0" / "train_log.csv") == slurp(dir / "again" / "train" / "run0" / "train_log.csv"));
    CHECK(slurp(run_dir / "train" / "run0" / "best.bmkm") == slurp(dir / "again" / "train" / "run0" / "best.bmkm"));
  }
}
