#include "breechmark/cmc.hpp"

#include <fftw3.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "breechmark/error.hpp"
#include "breechmark/parallel.hpp"
#include "filters.hpp"

namespace breechmark::cmc {

std::vector<double> CmcParams::default_thetas() {
  std::vector<double> t;
  for (int d = -30; d <= 30; d += 3) t.push_back(d);
  return t;
}

void CmcParams::validate() const {
  if (!(t_x > 0.0) || !(t_y > 0.0)) throw ConfigError("cmc.t_x and cmc.t_y must be positive");
  if (!(t_theta > 0.0)) throw ConfigError("cmc.t_theta must be positive");
  if (!(t_ccf > 0.0) || t_ccf > 1.0) throw ConfigError("cmc.t_ccf must be in (0, 1]");
  if (grid < 2) throw ConfigError("cmc.grid must be >= 2");
  if (thetas.empty()) throw ConfigError("cmc.thetas must not be empty");
  if (!std::is_sorted(thetas.begin(), thetas.end()) ||
      std::adjacent_find(thetas.begin(), thetas.end()) != thetas.end()) {
    throw ConfigError("cmc.thetas must be strictly increasing");
  }
  if (!(min_valid_fraction > 0.0) || min_valid_fraction > 1.0) {
    throw ConfigError("cmc.min_valid_fraction must be in (0, 1]");
  }
  if (!(min_overlap_fraction > 0.0) || min_overlap_fraction > 1.0) {
    throw ConfigError("cmc.min_overlap_fraction must be in (0, 1]");
  }
}

double CmcParams::tx_pixels(std::size_t side) const {
  return translation_in_pixels ? t_x : t_x * static_cast<double>(side);
}
double CmcParams::ty_pixels(std::size_t side) const {
  return translation_in_pixels ? t_y : t_y * static_cast<double>(side);
}

std::vector<Cell> partition_cells(const SurfaceMatrix& scan, std::size_t grid, double min_valid_fraction) {
  if (grid == 0) throw PartitionError("grid must be positive");
  if (scan.rows() != scan.cols()) {
    throw PartitionError("scan is " + std::to_string(scan.rows()) + "x" + std::to_string(scan.cols()) +
                         ", cells need a square image");
  }
  if (scan.rows() % grid != 0) {
    throw PartitionError("grid " + std::to_string(grid) + " does not divide image side " +
                         std::to_string(scan.rows()));
  }
  const std::size_t side = scan.rows() / grid;
  std::vector<Cell> cells;
  cells.reserve(grid * grid);
  for (std::size_t gr = 0; gr < grid; ++gr) {
    for (std::size_t gc = 0; gc < grid; ++gc) {
      Cell c{gr, gc, gr * side, gc * side, side, 0, false};
      for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t k = 0; k < side; ++k) c.valid_count += scan.valid(c.r0 + r, c.c0 + k) ? 1 : 0;
      }
      c.participating = static_cast<double>(c.valid_count) >= min_valid_fraction * static_cast<double>(side * side);
      cells.push_back(c);
    }
  }
  return cells;
}

// --- FFT correlation -------------------------------------------------------

namespace {

using Complex = std::complex<double>;

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

template <typename T>
struct FftwFree {
  void operator()(T* p) const { fftw_free(p); }
};
template <typename T>
using FftwBuffer = std::unique_ptr<T[], FftwFree<T>>;

template <typename T>
FftwBuffer<T> fftw_buffer(std::size_t n) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * n));
  if (!p) throw std::bad_alloc();
  return FftwBuffer<T>(p);
}

// One engine per (thread, transform size). Plans are created under a global
// mutex (the FFTW planner is not thread-safe) with FFTW_ESTIMATE, so the
// chosen algorithm never depends on timing; execution uses the new-array
// interface on identically aligned buffers.
class FftEngine {
 public:
  explicit FftEngine(std::size_t n) : n_(n), spec_(n * (n / 2 + 1)) {
    real_ = fftw_buffer<double>(n * n);
    cplx_ = fftw_buffer<fftw_complex>(spec_);
    std::lock_guard lock(planner_mutex());
    const int ni = static_cast<int>(n);
    fwd_ = fftw_plan_dft_r2c_2d(ni, ni, real_.get(), cplx_.get(), FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_2d(ni, ni, cplx_.get(), real_.get(), FFTW_ESTIMATE);
    if (!fwd_ || !inv_) throw NumericError("FFTW plan creation failed");
  }
  ~FftEngine() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
  }
  FftEngine(const FftEngine&) = delete;
  FftEngine& operator=(const FftEngine&) = delete;

  std::size_t size() const { return n_; }
  std::size_t spectrum_size() const { return spec_; }

  /// Forward transform of an n x n real array.
  std::vector<Complex> forward(const std::vector<double>& in) {
    std::copy(in.begin(), in.end(), real_.get());
    fftw_execute_dft_r2c(fwd_, real_.get(), cplx_.get());
    std::vector<Complex> out(spec_);
    for (std::size_t i = 0; i < spec_; ++i) out[i] = {cplx_[i][0], cplx_[i][1]};
    return out;
  }

  /// corr(s) = sum_q f(q) g(q + s) (circular), from the spectra of f and g.
  void correlate(const std::vector<Complex>& f, const std::vector<Complex>& g, std::vector<double>& out) {
    for (std::size_t i = 0; i < spec_; ++i) {
      const Complex p = std::conj(f[i]) * g[i];
      cplx_[i][0] = p.real();
      cplx_[i][1] = p.imag();
    }
    fftw_execute_dft_c2r(inv_, cplx_.get(), real_.get());
    const double scale = 1.0 / static_cast<double>(n_ * n_);
    out.resize(n_ * n_);
    for (std::size_t i = 0; i < n_ * n_; ++i) out[i] = real_[i] * scale;
  }

 private:
  std::size_t n_;
  std::size_t spec_;
  FftwBuffer<double> real_;
  FftwBuffer<fftw_complex> cplx_;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
};

FftEngine& engine_for(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::unique_ptr<FftEngine>> engines;
  auto& e = engines[n];
  if (!e) e = std::make_unique<FftEngine>(n);
  return *e;
}

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t count = 0;
};

Moments moments(const SurfaceMatrix& s) {
  Moments m;
  double sum = 0.0;
  for (std::size_t i = 0; i < s.heights().size(); ++i) {
    if (s.mask()[i]) {
      sum += s.heights()[i];
      ++m.count;
    }
  }
  if (m.count == 0) return m;
  m.mean = sum / static_cast<double>(m.count);
  double ss = 0.0;
  for (std::size_t i = 0; i < s.heights().size(); ++i) {
    if (s.mask()[i]) ss += (s.heights()[i] - m.mean) * (s.heights()[i] - m.mean);
  }
  m.sd = std::sqrt(ss / static_cast<double>(m.count));
  return m;
}

// Spectra of mask, standardized values and their squares, embedded at the
// origin of an n x n zero array.
struct Spectra {
  std::vector<Complex> mask, value, square;
  std::size_t valid = 0;
  std::size_t side = 0;
};

Spectra spectra_of(const SurfaceMatrix& s, std::size_t n, FftEngine& eng) {
  const Moments m = moments(s);
  if (m.count == 0 || !(m.sd > 0.0)) throw NoCorrelationError("cell or region has no height variation");
  std::vector<double> mk(n * n, 0.0), v(n * n, 0.0), sq(n * n, 0.0);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    for (std::size_t c = 0; c < s.cols(); ++c) {
      if (!s.valid(r, c)) continue;
      const double z = (s.height(r, c) - m.mean) / m.sd;
      mk[r * n + c] = 1.0;
      v[r * n + c] = z;
      sq[r * n + c] = z * z;
    }
  }
  return Spectra{eng.forward(mk), eng.forward(v), eng.forward(sq), m.count, s.rows()};
}

CcfResult correlate_cell(const Spectra& t, const Spectra& r, std::size_t margin, double min_overlap_fraction,
                         FftEngine& eng) {
  const std::size_t n = eng.size();
  std::vector<double> cnt, st, st2, sr, sr2, str;
  eng.correlate(t.mask, r.mask, cnt);
  eng.correlate(t.value, r.mask, st);
  eng.correlate(t.square, r.mask, st2);
  eng.correlate(t.mask, r.value, sr);
  eng.correlate(t.mask, r.square, sr2);
  eng.correlate(t.value, r.value, str);

  const double area = static_cast<double>(t.side * t.side);
  const double need = std::max(0.1 * area, min_overlap_fraction * static_cast<double>(t.valid));
  bool found = false;
  CcfResult best;
  const int m = static_cast<int>(margin);
  for (int dy = -m; dy <= m; ++dy) {
    for (int dx = -m; dx <= m; ++dx) {
      const std::size_t idx = static_cast<std::size_t>(dy + m) * n + static_cast<std::size_t>(dx + m);
      const double overlap = std::round(cnt[idx]);
      if (overlap < need || overlap < 2.0) continue;
      const double vt = st2[idx] - st[idx] * st[idx] / overlap;
      const double vr = sr2[idx] - sr[idx] * sr[idx] / overlap;
      if (!(vt > 1e-9 * overlap) || !(vr > 1e-9 * overlap)) continue;
      double ccf = (str[idx] - st[idx] * sr[idx] / overlap) / std::sqrt(vt * vr);
      ccf = std::clamp(ccf, -1.0, 1.0);
      bool better = !found || ccf > best.ccf;
      if (found && ccf == best.ccf) {
        const int l1 = std::abs(dx) + std::abs(dy), bl1 = std::abs(best.dx) + std::abs(best.dy);
        better = l1 < bl1 || (l1 == bl1 && (dy < best.dy || (dy == best.dy && dx < best.dx)));
      }
      if (better) {
        best = {ccf, dx, dy, static_cast<std::size_t>(overlap)};
        found = true;
      }
    }
  }
  if (!found) throw NoCorrelationError("no lag with sufficient overlap and variance");
  return best;
}

SurfaceMatrix extract(const SurfaceMatrix& s, std::ptrdiff_t r0, std::ptrdiff_t c0, std::size_t side) {
  std::vector<double> h(side * side, 0.0);
  std::vector<std::uint8_t> mk(side * side, 0);
  for (std::size_t r = 0; r < side; ++r) {
    const std::ptrdiff_t sr = r0 + static_cast<std::ptrdiff_t>(r);
    if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(s.rows())) continue;
    for (std::size_t c = 0; c < side; ++c) {
      const std::ptrdiff_t sc = c0 + static_cast<std::ptrdiff_t>(c);
      if (sc < 0 || sc >= static_cast<std::ptrdiff_t>(s.cols())) continue;
      const auto ur = static_cast<std::size_t>(sr), uc = static_cast<std::size_t>(sc);
      if (s.valid(ur, uc)) {
        h[r * side + c] = s.height(ur, uc);
        mk[r * side + c] = 1;
      }
    }
  }
  return SurfaceMatrix(side, side, s.resolution(), std::move(h), std::move(mk));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

CcfResult ccf_max(const SurfaceMatrix& cell, const SurfaceMatrix& region, std::size_t margin,
                  double min_overlap_fraction) {
  if (cell.rows() != cell.cols()) throw ShapeError("ccf_max: cell must be square");
  const std::size_t n = cell.rows() + 2 * margin;
  if (region.rows() != n || region.cols() != n) {
    throw ShapeError("ccf_max: region must be " + std::to_string(n) + "x" + std::to_string(n));
  }
  auto& eng = engine_for(n);
  const Spectra t = spectra_of(cell, n, eng);
  const Spectra r = spectra_of(region, n, eng);
  return correlate_cell(t, r, margin, min_overlap_fraction, eng);
}

SurfaceMatrix rotate(const SurfaceMatrix& scan, double theta_degrees) {
  if (theta_degrees == 0.0) return scan;
  const std::size_t rows = scan.rows(), cols = scan.cols();
  const double cr = (static_cast<double>(rows) - 1.0) / 2.0, cc = (static_cast<double>(cols) - 1.0) / 2.0;
  const double t = theta_degrees * std::numbers::pi / 180.0;
  const double ct = std::cos(t), st = std::sin(t);
  std::vector<double> h(rows * cols, 0.0);
  std::vector<std::uint8_t> mk(rows * cols, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      // Inverse map: output (r, c) samples the input rotated back by theta.
      const double y = static_cast<double>(r) - cr, x = static_cast<double>(c) - cc;
      const double sr = cr + ct * y - st * x;
      const double sc = cc + st * y + ct * x;
      double v = 0.0;
      if (detail::bilinear_masked(scan.heights(), scan.mask(), rows, cols, sr, sc, v)) {
        h[r * cols + c] = v;
        mk[r * cols + c] = 1;
      }
    }
  }
  return SurfaceMatrix(rows, cols, scan.resolution(), std::move(h), std::move(mk));
}

std::map<double, std::size_t> ThetaSweep::counts() const {
  std::map<double, std::size_t> out;
  for (const auto& t : per_theta) out[t.theta] = t.congruent.size();
  return out;
}

double ThetaSweep::best_theta() const {
  if (per_theta.empty()) throw ParameterError("best_theta: empty sweep");
  auto mean_ccf = [](const ThetaResult& t) {
    double s = 0.0;
    for (std::size_t i : t.congruent) s += t.cells[i].ccf;
    return t.congruent.empty() ? 0.0 : s / static_cast<double>(t.congruent.size());
  };
  const ThetaResult* best = &per_theta.front();
  double best_ccf = mean_ccf(*best);
  for (const auto& t : per_theta) {
    const double m = mean_ccf(t);
    const bool better = t.congruent.size() > best->congruent.size() ||
                        (t.congruent.size() == best->congruent.size() &&
                         (m > best_ccf || (m == best_ccf && std::abs(t.theta) < std::abs(best->theta))));
    if (better) {
      best = &t;
      best_ccf = m;
    }
  }
  return best->theta;
}

ThetaSweep cmc_sweep(const SurfaceMatrix& a, const SurfaceMatrix& b, const CmcParams& params) {
  params.validate();
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw SizeMismatchError("CMC scans differ in size: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                            " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  const auto cells = partition_cells(a, params.grid, params.min_valid_fraction);
  const std::size_t side = a.rows() / params.grid;
  const std::size_t margin = params.search_margin;
  const std::size_t n = side + 2 * margin;
  auto& eng = engine_for(n);

  std::vector<std::optional<Spectra>> templates(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!cells[i].participating) continue;
    try {
      templates[i] = spectra_of(extract(a, static_cast<std::ptrdiff_t>(cells[i].r0),
                                        static_cast<std::ptrdiff_t>(cells[i].c0), side),
                                n, eng);
    } catch (const NoCorrelationError&) {
      // flat cell: cannot correlate at any rotation
    }
  }

  const double tx = params.tx_pixels(side), ty = params.ty_pixels(side);
  ThetaSweep sweep;
  for (double theta : params.thetas) {
    // theta is the rotation of B relative to A; undo it before matching.
    const SurfaceMatrix rb = rotate(b, -theta);
    ThetaResult tr;
    tr.theta = theta;
    tr.cells.resize(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      CellMatch& cm = tr.cells[i];
      cm.cell_index = i;
      cm.theta = theta;
      if (!templates[i]) continue;
      const SurfaceMatrix region =
          extract(rb, static_cast<std::ptrdiff_t>(cells[i].r0) - static_cast<std::ptrdiff_t>(margin),
                  static_cast<std::ptrdiff_t>(cells[i].c0) - static_cast<std::ptrdiff_t>(margin), n);
      try {
        const Spectra rs = spectra_of(region, n, eng);
        const CcfResult res = correlate_cell(*templates[i], rs, margin, params.min_overlap_fraction, eng);
        cm.dx = res.dx;
        cm.dy = res.dy;
        cm.ccf = res.ccf;
        cm.valid = true;
      } catch (const NoCorrelationError&) {
        cm.valid = false;
      }
    }
    std::vector<double> xs, ys;
    for (const auto& cm : tr.cells) {
      if (cm.valid && cm.ccf >= params.t_ccf) {
        xs.push_back(cm.dx);
        ys.push_back(cm.dy);
      }
    }
    if (!xs.empty()) {
      tr.consensus_dx = median(xs);
      tr.consensus_dy = median(ys);
      for (const auto& cm : tr.cells) {
        if (cm.valid && cm.ccf >= params.t_ccf && std::abs(cm.dx - tr.consensus_dx) <= tx &&
            std::abs(cm.dy - tr.consensus_dy) <= ty) {
          tr.congruent.push_back(cm.cell_index);
        }
      }
    }
    sweep.per_theta.push_back(std::move(tr));
  }
  return sweep;
}

std::map<double, std::size_t> cmc_counts(const SurfaceMatrix& a, const SurfaceMatrix& b, const CmcParams& params) {
  return cmc_sweep(a, b, params).counts();
}

HighRegion high_region(const std::map<double, std::size_t>& counts, const CmcParams& params) {
  HighRegion h;
  for (const auto& [theta, c] : counts) h.max_count = std::max(h.max_count, c);
  const std::size_t floor = h.max_count > params.high_region_tolerance ? h.max_count - params.high_region_tolerance : 0;
  for (const auto& [theta, c] : counts) {
    if (c >= floor) h.thetas.push_back(theta);
  }
  h.admissible = !h.thetas.empty() && h.thetas.back() - h.thetas.front() <= 2.0 * params.t_theta;
  return h;
}

std::size_t high_cmc(const ThetaSweep& sweep, const CmcParams& params) {
  const auto counts = sweep.counts();
  const HighRegion h = high_region(counts, params);
  if (!params.high_cmc || !h.admissible || h.max_count == 0) return h.max_count;
  std::set<std::size_t> cells;
  for (const auto& tr : sweep.per_theta) {
    if (std::find(h.thetas.begin(), h.thetas.end(), tr.theta) != h.thetas.end()) {
      cells.insert(tr.congruent.begin(), tr.congruent.end());
    }
  }
  return cells.size();
}

CmcComparison cmc_score(const SurfaceMatrix& a, const SurfaceMatrix& b, const CmcParams& params) {
  const ThetaSweep ab = cmc_sweep(a, b, params);
  const ThetaSweep ba = cmc_sweep(b, a, params);
  CmcComparison out;
  out.counts_ab = ab.counts();
  out.counts_ba = ba.counts();
  out.cmc_ab = high_cmc(ab, params);
  out.cmc_ba = high_cmc(ba, params);
  const double denom = 2.0 * static_cast<double>(params.grid * params.grid);
  out.score = std::clamp(static_cast<double>(out.cmc_ab + out.cmc_ba) / denom, 0.0, 1.0);
  return out;
}

CmcComparison cmc_score(const ScanRecord& a, const ScanRecord& b, const CmcParams& params) {
  return cmc_score(a.surface, b.surface, params);
}

eval::ScoreSet cmc_score_all_pairs(const std::vector<ScanRecord>& scans, const CmcParams& params,
                                   std::size_t workers, ScoringStats* stats) {
  params.validate();
  if (scans.size() < 2) throw ParameterError("CMC scoring needs at least two scans");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    for (std::size_t j = i + 1; j < scans.size(); ++j) pairs.emplace_back(i, j);
  }
  eval::ScoreSet set;
  set.method = "cmc";
  set.pairs.resize(pairs.size());
  const auto start = std::chrono::steady_clock::now();
  parallel_for(pairs.size(), workers, [&](std::size_t k) {
    const auto& a = scans[pairs[k].first];
    const auto& b = scans[pairs[k].second];
    eval::ScoredPair& p = set.pairs[k];
    p.casing_a = a.casing_id;
    p.casing_b = b.casing_id;
    p.gun_a = a.gun_id;
    p.gun_b = b.gun_id;
    try {
      const CmcComparison c = cmc_score(a.surface, b.surface, params);
      p.score = c.score;
      p.cmc_ab = static_cast<int>(c.cmc_ab);
      p.cmc_ba = static_cast<int>(c.cmc_ba);
    } catch (const Error& e) {
      p.status = std::string("error: ") + e.what();
    }
  });
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (stats) {
    stats->pairs = pairs.size();
    stats->workers = std::max<std::size_t>(1, std::min(workers, pairs.size()));
    stats->wall_seconds = wall;
    stats->failed = static_cast<std::size_t>(
        std::count_if(set.pairs.begin(), set.pairs.end(), [](const eval::ScoredPair& p) { return !p.ok(); }));
  }
  return set;
}

void write_bench_json(const ScoringStats& stats, const std::filesystem::path& path,
                      const std::map<std::string, std::string>& extra) {
  nlohmann::json j;
  j["pairs"] = stats.pairs;
  j["failed"] = stats.failed;
  j["workers"] = stats.workers;
  j["wall_seconds"] = stats.wall_seconds;
  j["pairs_per_second"] = stats.pairs_per_second();
  for (const auto& [k, v] : extra) j[k] = v;
  eval::write_text(path, j.dump(2) + "\n");
}

}  // namespace breechmark::cmc
