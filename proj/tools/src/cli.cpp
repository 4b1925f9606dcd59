#include "breechmark/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "breechmark/error.hpp"
#include "breechmark/metrics.hpp"
#include "commands.hpp"
#include "config.hpp"

#ifndef BREECHMARK_VERSION
#define BREECHMARK_VERSION "unknown"
#endif

namespace breechmark::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t resolve_workers(std::size_t configured) {
  if (configured > 0) return configured;
  if (const char* env = std::getenv("BREECHMARK_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError(std::string("BREECHMARK_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json versions() {
  return {{"breechmark", BREECHMARK_VERSION},
          {"compiler", __VERSION__},
          {"fmt", FMT_VERSION},
          {"nlohmann_json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                                        NLOHMANN_JSON_VERSION_PATCH)},
          {"formats",
           {{"scan", io::kInternalVersion}, {"polar", preprocess::kPolarVersion}, {"checkpoint", nn::kCheckpointVersion}}}};
}

// Merges this invocation into <run>/run.json; earlier commands are kept.
void record_run(const fs::path& dir, const std::string& command, const json& resolved, const std::string& hash,
                const std::vector<std::string>& args, const std::string& started, double seconds,
                std::size_t workers, const json& record, const std::string& status) {
  if (!fs::is_directory(dir)) return;
  const fs::path path = dir / "run.json";
  json run = json::object();
  if (std::ifstream in(path); in) {
    try {
      run = json::parse(in);
    } catch (const json::parse_error&) {
      spdlog::warn("replacing unreadable {}", path.string());
    }
  }
  run["tool"] = "breechmark";
  run["config_hash"] = hash;
  run["config"] = resolved;
  run["versions"] = versions();
  json entry = record;
  entry["argv"] = args;
  entry["config_hash"] = hash;
  entry["started_utc"] = started;
  entry["seconds"] = seconds;
  entry["workers"] = workers;
  entry["status"] = status;
  run["commands"][command] = entry;
  eval::write_text(path, run.dump(2) + "\n");
}

Subset parse_subset(const std::string& s) {
  if (s == "all") return Subset::All;
  if (s == "heldout") return Subset::Heldout;
  return Subset::Auto;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Breech-face similarity: contrastive embeddings and Congruent Matching Cells", "breechmark"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", BREECHMARK_VERSION);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::vector<std::string> sets;
  bool quiet = false, verbose = false;
  app.add_option("-c,--config", config_path, "JSON config file (or a run.json from an earlier run)");
  app.add_option("-o,--out", out_dir, "Run directory (overrides output_dir)");
  app.add_option("--seed", seed, "Global seed");
  app.add_option("-w,--workers", workers, "Worker threads (default: config, BREECHMARK_THREADS, all cores)")
      ->check(CLI::PositiveNumber);
  app.add_option("--set", sets, "Config override, e.g. --set train.epochs=200")->allow_extra_args(false);
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors");
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset into the run directory");
  std::optional<int> guns, casings;
  synth->add_option("--guns", guns, "Number of guns")->check(CLI::PositiveNumber);
  synth->add_option("--casings", casings, "Casings per gun")->check(CLI::PositiveNumber);

  auto* ingest = app.add_subcommand("ingest", "Load x3p/internal scans listed in a manifest");
  std::string manifest;
  ingest->add_option("-m,--manifest", manifest, "Manifest CSV (path,gun_id,casing_id)");

  auto* prep = app.add_subcommand("preprocess", "Level, isolate, filter and resample every scan");
  std::string prep_input;
  prep->add_option("-i,--input", prep_input, "Manifest to preprocess (default: <run>/manifest.csv)");

  auto* trn = app.add_subcommand("train", "Train the contrastive model on the non-held-out guns");
  std::optional<std::size_t> epochs, runs, width;
  std::string variant;
  trn->add_option("--epochs", epochs, "Epochs per run")->check(CLI::PositiveNumber);
  trn->add_option("--runs", runs, "Independent runs")->check(CLI::PositiveNumber);
  trn->add_option("--variant", variant, "reference, double_block, block_depth2 or block_depth4");
  trn->add_option("--width", width, "Channel width n")->check(CLI::PositiveNumber);

  auto* emb = app.add_subcommand("embed", "Embed every preprocessed scan with a trained checkpoint");
  std::string checkpoint;
  emb->add_option("--checkpoint", checkpoint, "Checkpoint (default: best run from train/summary.json)");

  auto* score = app.add_subcommand("score", "Score all pairs with one method");
  ScoreOptions score_opts;
  std::string subset = "auto";
  std::string score_out;
  score->add_option("--method", score_opts.method, "contrastive or cmc")
      ->required()
      ->check(CLI::IsMember({"contrastive", "cmc"}));
  score->add_option("--subset", subset, "all, heldout, or auto (heldout when a split is configured)")
      ->check(CLI::IsMember({"auto", "all", "heldout"}));
  score->add_option("--output", score_out, "Score CSV (default: <run>/scores_<method>.csv)");

  auto* evaluate = app.add_subcommand("evaluate", "ROC curves, histograms and scatter for score files");
  EvaluateOptions eval_opts;
  std::vector<std::string> score_files;
  std::string eval_out;
  evaluate->add_option("--scores", score_files, "Score CSVs; the first two also give the scatter")
      ->required()
      ->expected(1, -1);
  evaluate->add_option("--labels", eval_opts.labels, "Curve labels, one per score file");
  evaluate->add_option("--output", eval_out, "Output directory (default: <run>/eval)");
  evaluate->add_option("--bins", eval_opts.bins, "Histogram bins")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Tables and figures from stored training runs and scores");
  std::size_t report_bins = 20;
  report->add_option("--bins", report_bins, "Histogram bins")->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench-cmc", "Time CMC scoring and write a benchmark JSON");
  BenchOptions bench_opts;
  std::string bench_out;
  bench->add_option("--scans", bench_opts.scans, "Use the first N preprocessed scans (default: all)");
  bench->add_option("--output", bench_out, "Benchmark JSON (default: <run>/bench_cmc.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  auto logger = std::make_shared<spdlog::logger>("breechmark", std::make_shared<spdlog::sinks::ostream_sink_mt>(err));
  logger->set_pattern("[%H:%M:%S] %^%l%$ %v");
  logger->set_level(quiet ? spdlog::level::warn : verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_default_logger(logger);

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  std::vector<std::string> args(argv, argv + argc);

  Context ctx;
  ctx.out = &out;
  json resolved;
  std::string hash;
  try {
    json doc = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config " + config_path);
      try {
        doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
      } catch (const json::parse_error& e) {
        throw ConfigError(config_path + ": " + e.what());
      }
      if (doc.is_object() && doc.contains("config") && doc.contains("config_hash")) doc = doc["config"];
    }
    for (const auto& s : sets) apply_override(doc, s);
    if (!out_dir.empty()) doc["output_dir"] = out_dir;
    if (seed) doc["seed"] = *seed;
    if (workers) doc["workers"] = *workers;
    if (!manifest.empty()) doc["manifest"] = manifest;
    if (guns) doc["synth"]["guns"] = *guns;
    if (casings) doc["synth"]["casings_per_gun"] = *casings;
    if (epochs) doc["train"]["epochs"] = *epochs;
    if (runs) doc["train"]["runs"] = *runs;
    if (!variant.empty()) doc["model"]["variant"] = variant;
    if (width) doc["model"]["width"] = *width;

    ctx.cfg = parse_config(doc);
    ctx.cfg.output_dir = fs::absolute(ctx.cfg.output_dir).lexically_normal();
    if (!ctx.cfg.manifest.empty()) ctx.cfg.manifest = fs::absolute(ctx.cfg.manifest).lexically_normal();
    ctx.workers = resolve_workers(ctx.cfg.workers);
    resolved = to_json(ctx.cfg);
    hash = config_hash(resolved);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }

  const std::string started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  spdlog::info("{} -> {} ({} workers, config {})", command, ctx.cfg.output_dir.string(), ctx.workers, hash);
  try {
    fs::create_directories(ctx.cfg.output_dir);
    if (sub == synth) {
      run_synth(ctx);
    } else if (sub == ingest) {
      run_ingest(ctx);
    } else if (sub == prep) {
      run_preprocess(ctx, prep_input.empty() ? fs::path() : fs::absolute(prep_input));
    } else if (sub == trn) {
      run_train(ctx);
    } else if (sub == emb) {
      run_embed(ctx, checkpoint);
    } else if (sub == score) {
      score_opts.subset = parse_subset(subset);
      score_opts.output = score_out;
      run_score(ctx, score_opts);
    } else if (sub == evaluate) {
      for (const auto& f : score_files) eval_opts.scores.emplace_back(f);
      eval_opts.output = eval_out;
      run_evaluate(ctx, eval_opts);
    } else if (sub == report) {
      run_report(ctx, report_bins);
    } else if (sub == bench) {
      bench_opts.output = bench_out;
      run_bench_cmc(ctx, bench_opts);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    record_run(ctx.cfg.output_dir, command, resolved, hash, args, started, elapsed(), ctx.workers, ctx.record,
               std::string("config error: ") + e.what());
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    record_run(ctx.cfg.output_dir, command, resolved, hash, args, started, elapsed(), ctx.workers, ctx.record,
               std::string("error: ") + e.what());
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    err << "error: malformed run artifact: " << e.what() << "\n";
    return 1;
  }
  record_run(ctx.cfg.output_dir, command, resolved, hash, args, started, elapsed(), ctx.workers, ctx.record, "ok");
  spdlog::info("{} finished in {:.1f} s", command, elapsed());
  return 0;
}

}  // namespace breechmark::cli
