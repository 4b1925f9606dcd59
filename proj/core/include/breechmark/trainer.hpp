#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "breechmark/nn.hpp"

namespace breechmark::train {

enum class Optimizer { SGD, Adam };
std::string to_string(Optimizer o);
Optimizer optimizer_from_string(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 20000;
  std::size_t eval_every = 20;
  std::size_t smooth_window = 10;
  std::size_t guns_per_batch = 8;
  std::size_t casings_per_gun_per_batch = 2;
  double learning_rate = 1e-4;
  Optimizer optimizer = Optimizer::Adam;
  double momentum = 0.0;  // SGD only
  std::uint64_t seed = 0;
  std::size_t runs = 5;
  std::size_t workers = 1;

  void validate() const;
};

struct TrainRecord {
  std::size_t epoch = 0;
  double roc_auc = 0.0;
  double loss = 0.0;  // epoch loss divided by the number of anchors
  friend bool operator==(const TrainRecord&, const TrainRecord&) = default;
};

struct SmoothedPoint {
  std::size_t epoch = 0;  // epoch of the last record in the window
  double roc_auc = 0.0;
};

struct RunSummary {
  double max_auc = 0.0;
  std::size_t max_epoch = 0;
  double smoothed_max_auc = 0.0;
  std::size_t smoothed_max_epoch = 0;
  std::size_t smooth_window = 0;  // window actually used (capped at record count)
  std::vector<TrainRecord> records;
  bool aborted = false;
  std::string abort_reason;
};

struct Sample {
  nn::Tensor input;  // 1 x 377 x 60
  std::string gun_id;
  std::string casing_id;
};

/// Index lists into the dataset. Guns are shuffled per (seed, epoch) and cut
/// into groups of guns_per_batch; a trailing group of fewer than two guns is
/// left out of that epoch. Each gun contributes per_gun distinct casings.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::string>& gun_ids,
                                                   std::size_t guns_per_batch, std::size_t per_gun,
                                                   std::uint64_t seed, std::size_t epoch);

/// Epochs at which train() records held-out AUC: eval_every, 2 eval_every,
/// ..., epochs.
std::vector<std::size_t> recording_epochs(const TrainConfig& cfg);

/// Trailing sliding mean; output length = records - window + 1.
std::vector<SmoothedPoint> smooth_records(const std::vector<TrainRecord>& records, std::size_t window);

/// Pairwise-similarity ROC AUC of embeddings over all unordered pairs.
double embedding_auc(const std::vector<nn::Embedding>& embeddings, const std::vector<std::string>& gun_ids);

std::vector<nn::Embedding> embed_all(const nn::Model& model, const std::vector<Sample>& samples,
                                     std::size_t workers);

struct TrainHooks {
  /// Written atomically whenever a new maximum AUC is recorded.
  std::optional<std::filesystem::path> checkpoint_path;
  std::function<void(const TrainRecord&)> on_record;
};

/// Throws ProtocolViolationError when a gun appears in both sets. On a
/// non-finite loss the model is restored to its last finite state and the
/// summary is returned with aborted = true.
RunSummary train(nn::Model& model, const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set,
                 const TrainConfig& cfg, const TrainHooks& hooks = {});

struct RunsTable {
  std::vector<double> max_aucs;
  std::vector<double> smoothed_max_aucs;
  double avg_max = 0.0;
  double avg_smoothed_max = 0.0;
};

RunsTable summarize_runs(const std::vector<RunSummary>& runs);
/// Markdown table with runs as columns and the mean last, 3 decimals.
std::string format_runs_table(const RunsTable& table, const std::string& row_label);

void write_train_log(const std::vector<TrainRecord>& records, const std::filesystem::path& path);
std::vector<TrainRecord> read_train_log(const std::filesystem::path& path);

}  // namespace breechmark::train
