#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "breechmark/metrics.hpp"
#include "breechmark/surface.hpp"

namespace breechmark::cmc {

struct CmcParams {
  double t_x = 0.4;  ///< fraction of cell side, or pixels when translation_in_pixels
  double t_y = 0.4;
  bool translation_in_pixels = false;
  double t_theta = 10.0;  ///< degrees
  double t_ccf = 0.5;
  std::size_t grid = 8;
  std::vector<double> thetas = default_thetas();  ///< degrees, sorted
  double min_valid_fraction = 0.5;
  std::size_t search_margin = 18;     ///< samples around the nominal cell position
  double min_overlap_fraction = 0.5;  ///< of the cell's valid samples, per lag
  std::size_t high_region_tolerance = 1;
  bool high_cmc = true;  ///< false: original CMC (max over theta)

  static std::vector<double> default_thetas();  // -30..30 step 3
  void validate() const;
  double tx_pixels(std::size_t cell_side) const;
  double ty_pixels(std::size_t cell_side) const;
};

struct Cell {
  std::size_t row = 0;  // grid coordinates
  std::size_t col = 0;
  std::size_t r0 = 0;   // top-left sample
  std::size_t c0 = 0;
  std::size_t side = 0;
  std::size_t valid_count = 0;
  bool participating = false;
};

/// grid x grid equal tiles, row-major. Throws PartitionError when grid does
/// not divide the image side or the image is not square.
std::vector<Cell> partition_cells(const SurfaceMatrix& scan, std::size_t grid, double min_valid_fraction);

struct CcfResult {
  double ccf = 0.0;
  int dx = 0;  // columns
  int dy = 0;  // rows
  std::size_t overlap = 0;
};

/// Maximum of the mask-aware normalized cross-correlation of `cell` against
/// `region` over integer lags |dx|, |dy| <= margin, where region is
/// (cell.rows + 2 margin) square and lag (0,0) places the cell at
/// (margin, margin). Lags need overlap >= max(10% of the cell area,
/// min_overlap_fraction of the cell's valid samples). Throws
/// NoCorrelationError when no lag qualifies.
CcfResult ccf_max(const SurfaceMatrix& cell, const SurfaceMatrix& region, std::size_t margin,
                  double min_overlap_fraction = 0.5);

struct CellMatch {
  std::size_t cell_index = 0;  // row * grid + col
  double theta = 0.0;
  int dx = 0;
  int dy = 0;
  double ccf = 0.0;
  bool valid = false;  // participating and correlated
};

struct ThetaResult {
  double theta = 0.0;
  std::vector<CellMatch> cells;  // one per grid cell
  double consensus_dx = 0.0;
  double consensus_dy = 0.0;
  std::vector<std::size_t> congruent;  // cell indices
};

struct ThetaSweep {
  std::vector<ThetaResult> per_theta;  // in params.thetas order
  std::map<double, std::size_t> counts() const;
  /// Rotation estimate: the theta with the most congruent cells; ties go to
  /// the higher mean CCF of the congruent cells, then the smaller |theta|.
  double best_theta() const;
};

/// Rotation of a square scan about its centre by theta degrees (bilinear,
/// mask-aware); theta = 0 is an exact copy.
SurfaceMatrix rotate(const SurfaceMatrix& scan, double theta_degrees);

/// Direction A -> B: cells of A registered against B rotated by each theta.
ThetaSweep cmc_sweep(const SurfaceMatrix& a, const SurfaceMatrix& b, const CmcParams& params);
std::map<double, std::size_t> cmc_counts(const SurfaceMatrix& a, const SurfaceMatrix& b, const CmcParams& params);

struct HighRegion {
  std::size_t max_count = 0;
  std::vector<double> thetas;  // theta with count >= max_count - tolerance
  bool admissible = false;     // span of thetas <= 2 T_theta
};
HighRegion high_region(const std::map<double, std::size_t>& counts, const CmcParams& params);

/// Cells congruent at any theta of an admissible high region, each counted
/// once; otherwise the maximum count (original CMC behaviour).
std::size_t high_cmc(const ThetaSweep& sweep, const CmcParams& params);

struct CmcComparison {
  std::map<double, std::size_t> counts_ab;
  std::map<double, std::size_t> counts_ba;
  std::size_t cmc_ab = 0;
  std::size_t cmc_ba = 0;
  double score = 0.0;
};

CmcComparison cmc_score(const SurfaceMatrix& a, const SurfaceMatrix& b, const CmcParams& params = {});
CmcComparison cmc_score(const ScanRecord& a, const ScanRecord& b, const CmcParams& params = {});

struct ScoringStats {
  std::size_t pairs = 0;
  std::size_t failed = 0;
  std::size_t workers = 1;
  double wall_seconds = 0.0;
  double pairs_per_second() const { return wall_seconds > 0 ? static_cast<double>(pairs) / wall_seconds : 0.0; }
};

/// All unordered pairs in (i, j) order. Per-pair failures are recorded with
/// status "error: ..." instead of aborting the run.
eval::ScoreSet cmc_score_all_pairs(const std::vector<ScanRecord>& scans, const CmcParams& params,
                                   std::size_t workers, ScoringStats* stats = nullptr);

/// Benchmark report JSON: pairs, wall_seconds, pairs_per_second, workers,
/// plus any extra key/value pairs.
void write_bench_json(const ScoringStats& stats, const std::filesystem::path& path,
                      const std::map<std::string, std::string>& extra = {});

}  // namespace breechmark::cmc
