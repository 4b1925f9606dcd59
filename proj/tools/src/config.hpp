#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "breechmark/cmc.hpp"
#include "breechmark/nn.hpp"
#include "breechmark/preprocess.hpp"
#include "breechmark/scan_io.hpp"
#include "breechmark/trainer.hpp"

namespace breechmark::cli {

/// Which guns are held out of training. `eval_guns` wins when non-empty;
/// otherwise the last `heldout_guns` gun ids in sorted order.
struct SplitConfig {
  std::size_t heldout_guns = 0;
  std::vector<std::string> eval_guns;
  bool configured() const { return heldout_guns > 0 || !eval_guns.empty(); }
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "run";
  std::filesystem::path manifest;  // ingest input; empty if unused
  std::size_t workers = 0;         // 0: BREECHMARK_THREADS, then hardware
  io::SynthParams synth;
  preprocess::PreprocessParams preprocess;
  nn::ModelConfig model;
  train::TrainConfig train;
  SplitConfig split;
  cmc::CmcParams cmc;

  void validate() const;
};

/// Parses a config document. Unknown keys and type mismatches raise
/// ConfigError naming the field path ("train.epochs"). A run.json written by
/// the CLI is accepted too; its recorded config is used.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);

/// Applies "a.b=value" overrides to a config document before parsing. The
/// value is read as JSON when it parses, else as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

nlohmann::json to_json(const RunConfig& cfg);

/// FNV-1a 64 over the compact serialization (keys sorted).
std::string config_hash(const nlohmann::json& resolved);

/// Gun ids held out for evaluation, sorted. Empty when no split is set.
std::vector<std::string> heldout_guns(const SplitConfig& split, std::vector<std::string> all_guns);

}  // namespace breechmark::cli
