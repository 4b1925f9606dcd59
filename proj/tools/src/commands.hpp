#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"

namespace breechmark::cli {

struct Context {
  RunConfig cfg;
  std::size_t workers = 1;
  std::ostream* out = nullptr;
  /// Filled by the command; merged into the run.json entry.
  nlohmann::json record = nlohmann::json::object();

  std::filesystem::path dir() const { return cfg.output_dir; }
};

enum class Subset { Auto, All, Heldout };

struct ScoreOptions {
  std::string method;
  Subset subset = Subset::Auto;
  std::filesystem::path output;  // default <run>/scores_<method>.csv
};

struct EvaluateOptions {
  std::vector<std::filesystem::path> scores;
  std::vector<std::string> labels;
  std::filesystem::path output;  // default <run>/eval
  std::size_t bins = 20;
};

struct BenchOptions {
  std::size_t scans = 0;  // 0: all preprocessed scans
  std::filesystem::path output;
};

void run_synth(Context& ctx);
void run_ingest(Context& ctx);
void run_preprocess(Context& ctx, const std::filesystem::path& manifest);
void run_train(Context& ctx);
void run_embed(Context& ctx, const std::filesystem::path& checkpoint);
void run_score(Context& ctx, const ScoreOptions& opts);
void run_evaluate(Context& ctx, const EvaluateOptions& opts);
void run_report(Context& ctx, std::size_t bins);
void run_bench_cmc(Context& ctx, const BenchOptions& opts);

}  // namespace breechmark::cli
