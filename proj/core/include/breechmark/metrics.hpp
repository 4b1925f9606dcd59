#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "breechmark/surface.hpp"

namespace breechmark::eval {

struct PairLabel {
  std::size_t a = 0;  // indices into the input list, a < b
  std::size_t b = 0;
  bool same_source = false;
};

/// All unordered pairs in (a, b) lexicographic order.
std::vector<PairLabel> pair_labels(const std::vector<std::string>& gun_ids);
std::vector<PairLabel> pair_labels(const std::vector<ScanRecord>& records);

struct ScoredPair {
  std::string casing_a;
  std::string casing_b;
  std::string gun_a;
  std::string gun_b;
  double score = 0.0;
  std::optional<int> cmc_ab;
  std::optional<int> cmc_ba;
  std::string status = "ok";

  bool same_source() const { return gun_a == gun_b; }
  bool ok() const { return status == "ok"; }
  friend bool operator==(const ScoredPair&, const ScoredPair&) = default;
};

struct ScoreSet {
  std::string method;  // "contrastive" or "cmc"
  std::vector<ScoredPair> pairs;

  /// Rejects duplicate unordered pairs and non-finite scores on ok pairs.
  void validate() const;
  friend bool operator==(const ScoreSet&, const ScoreSet&) = default;
};

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // threshold descending, (0,0) first, (1,1) last
  double auc = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// Mann-Whitney statistic with midranks for ties; throws UndefinedAucError
/// when either class is empty.
double auc_midrank(const std::vector<double>& scores, const std::vector<bool>& positive);
RocCurve roc_curve(const std::vector<double>& scores, const std::vector<bool>& positive);
/// Uses pairs with status "ok" only.
RocCurve roc_auc(const ScoreSet& set);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> same;
  std::vector<std::size_t> different;
};
Histogram score_histogram(const ScoreSet& set, std::size_t bins);
Histogram histogram(const std::vector<double>& scores, const std::vector<bool>& positive, std::size_t bins);

struct ScatterPoint {
  std::string casing_a;
  std::string casing_b;
  double score_a = 0.0;
  double score_b = 0.0;
  bool same_source = false;
};

struct Scatter {
  std::string method_a;
  std::string method_b;
  std::vector<ScatterPoint> points;
  std::size_t bins = 0;
  std::vector<std::size_t> grid;  // bins x bins, row = score_b bin, col = score_a bin
  double min_a = 0.0, max_a = 0.0, min_b = 0.0, max_b = 0.0;
  std::optional<double> pearson_nonzero_b;  // over points with score_b != 0
  std::optional<double> pearson_all;
};

/// Joins two score sets on the unordered casing pair. Throws JoinError
/// listing pairs present in only one set.
Scatter score_scatter(const ScoreSet& a, const ScoreSet& b, std::size_t bins = 20);

/// nullopt when fewer than two points or zero variance.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);

// CSV / JSON / SVG outputs.
void write_scores_csv(const ScoreSet& set, const std::filesystem::path& path);
ScoreSet read_scores_csv(const std::filesystem::path& path, const std::string& method = "");
void write_roc_csv(const RocCurve& roc, const std::filesystem::path& path);
void write_histogram_csv(const Histogram& h, const std::filesystem::path& path);
void write_scatter_csv(const Scatter& s, const std::filesystem::path& path);

struct LabeledCurve {
  std::string label;
  RocCurve curve;
};
std::string roc_svg(const std::vector<LabeledCurve>& curves);
std::string histogram_svg(const Histogram& h, const std::string& title);
std::string scatter_svg(const Scatter& s);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace breechmark::eval
