#include <algorithm>
#include <cmath>
#include <set>

#include "breechmark/cmc.hpp"
#include "breechmark/error.hpp"
#include "breechmark/preprocess.hpp"
#include "breechmark/scan_io.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace breechmark;
using namespace breechmark::cmc;

namespace {

SurfaceMatrix window(const SurfaceMatrix& s, long r0, long c0, std::size_t side) {
  SurfaceMatrix out(side, side, s.resolution());
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      const long sr = r0 + long(r), sc = c0 + long(c);
      const bool inside = sr >= 0 && sc >= 0 && sr < long(s.rows()) && sc < long(s.cols());
      out.set_valid(r, c, inside && s.valid(sr, sc));
      out.height(r, c) = out.valid(r, c) ? s.height(sr, sc) : 0.0;
    }
  }
  return out;
}

// Direct-space masked Pearson correlation at every lag.
CcfResult brute_ccf(const SurfaceMatrix& cell, const SurfaceMatrix& region, int margin, double min_overlap) {
  const std::size_t side = cell.rows();
  const double need = std::max(0.1 * double(side * side), min_overlap * double(cell.valid_count()));
  CcfResult best{-2.0, 0, 0, 0};
  for (int dy = -margin; dy <= margin; ++dy) {
    for (int dx = -margin; dx <= margin; ++dx) {
      double n = 0, sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < side; ++i) {
        for (std::size_t j = 0; j < side; ++j) {
          const std::size_t u = std::size_t(margin + dy) + i, v = std::size_t(margin + dx) + j;
          if (!cell.valid(i, j) || !region.valid(u, v)) continue;
          const double a = cell.height(i, j), b = region.height(u, v);
          n += 1, sa += a, sb += b, saa += a * a, sbb += b * b, sab += a * b;
        }
      }
      if (n < need || n < 2) continue;
      const double va = saa - sa * sa / n, vb = sbb - sb * sb / n;
      if (va <= 0 || vb <= 0) continue;
      const double r = (sab - sa * sb / n) / std::sqrt(va * vb);
      if (r > best.ccf + 1e-12) best = {r, dx, dy, std::size_t(n)};
    }
  }
  return best;
}

std::size_t brute_participating(const SurfaceMatrix& s, std::size_t grid, double frac) {
  const std::size_t side = s.rows() / grid;
  std::size_t count = 0;
  for (std::size_t gr = 0; gr < grid; ++gr) {
    for (std::size_t gc = 0; gc < grid; ++gc) {
      std::size_t valid = 0;
      for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) valid += s.valid(gr * side + r, gc * side + c);
      }
      count += double(valid) >= frac * double(side * side);
    }
  }
  return count;
}

// Two independently drawn firearms, preprocessed like real scans.
std::pair<SurfaceMatrix, SurfaceMatrix> independent_pair(std::uint64_t seed) {
  io::SynthParams p;
  p.guns = 2;
  p.casings_per_gun = 2;
  p.seed = seed;
  const auto scans = io::generate_synthetic_dataset(p);
  return {preprocess::preprocess_scan(scans[0].surface).cmc_image,
          preprocess::preprocess_scan(scans[2].surface).cmc_image};
}

const SurfaceMatrix& annulus_scan() {
  static const SurfaceMatrix s = [] {
    io::SynthParams p;
    p.guns = 1;
    p.casings_per_gun = 2;
    p.seed = 77;
    return preprocess::preprocess_scan(io::generate_synthetic_dataset(p)[0].surface).cmc_image;
  }();
  return s;
}

}  // namespace

TEST_CASE("partition_cells") {
  SurfaceMatrix full(224, 224, 1e-6);
  const auto cells = partition_cells(full, 8, 0.5);
  REQUIRE(cells.size() == 64);
  for (const auto& c : cells) {
    CHECK(c.side == 28);
    CHECK(c.participating);
    CHECK(c.r0 == 28 * c.row);
    CHECK(c.c0 == 28 * c.col);
  }

  SurfaceMatrix holed = full;
  for (std::size_t r = 56; r < 168; ++r) {
    for (std::size_t c = 56; c < 140; ++c) holed.set_valid(r, c, false);  // 4 x 3 cells
  }
  auto count = [](const std::vector<Cell>& v) {
    return std::size_t(std::count_if(v.begin(), v.end(), [](const Cell& c) { return c.participating; }));
  };
  CHECK(count(partition_cells(holed, 8, 0.5)) == 52);
  CHECK(brute_participating(holed, 8, 0.5) == 52);

  const auto& ann = annulus_scan();
  for (double frac : {0.3, 0.5, 0.9}) CHECK(count(partition_cells(ann, 8, frac)) == brute_participating(ann, 8, frac));

  CHECK_THROWS_AS(partition_cells(full, 5, 0.5), PartitionError);
  CHECK_THROWS_AS(partition_cells(SurfaceMatrix(224, 200, 1e-6), 8, 0.5), PartitionError);
}

TEST_CASE("ccf_max") {
  const auto field = testing::smooth_field(120, 1, 5);
  const auto cell = window(field, 40, 40, 28);

  SUBCASE("self, zero margin") {
    const auto r = ccf_max(cell, cell, 0);
    CHECK(r.ccf == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.dx == 0);
    CHECK(r.dy == 0);
  }
  SUBCASE("shifted copy") {
    const int margin = 6, dx = 3, dy = -2;
    const auto region = window(field, 40 - margin - dy, 40 - margin - dx, 28 + 2 * margin);
    const auto r = ccf_max(cell, region, margin);
    CHECK(r.dx == 3);
    CHECK(r.dy == -2);
    CHECK(r.ccf >= 0.999);
  }
  SUBCASE("negation") {
    SurfaceMatrix neg = cell;
    for (auto& v : neg.heights()) v = -v;
    const auto r = ccf_max(cell, neg, 0);
    CHECK(r.ccf == doctest::Approx(-1.0).epsilon(1e-9));
  }
  SUBCASE("matches a direct-space oracle with holes") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 10; ++trial) {
      const auto a = testing::smooth_field(100, 1, 100 + trial);
      const auto b = testing::smooth_field(100, 1, 200 + trial);
      SurfaceMatrix c = window(a, 30, 30, 28);
      SurfaceMatrix reg = window(trial % 2 ? a : b, 30 - 18 + trial % 5, 30 - 18, 64);
      std::bernoulli_distribution drop(0.2);
      for (std::size_t i = 0; i < c.size(); ++i) c.mask()[i] &= !drop(rng);
      for (std::size_t i = 0; i < reg.size(); ++i) reg.mask()[i] &= !drop(rng);
      c.scrub_invalid();
      reg.scrub_invalid();
      const auto got = ccf_max(c, reg, 18);
      const auto want = brute_ccf(c, reg, 18, 0.5);
      CHECK(got.ccf == doctest::Approx(want.ccf).epsilon(1e-9));
      CHECK(got.dx == want.dx);
      CHECK(got.dy == want.dy);
      CHECK(got.overlap == want.overlap);
    }
  }
  SUBCASE("no usable overlap") {
    SurfaceMatrix empty_region(28, 28, 1e-6);
    for (auto& m : empty_region.mask()) m = 0;
    CHECK_THROWS_AS(ccf_max(cell, empty_region, 0), NoCorrelationError);
  }
}

TEST_CASE("high_cmc") {
  CmcParams p;
  p.t_theta = 10;
  auto make = [](const std::vector<std::pair<double, std::vector<std::size_t>>>& spec) {
    ThetaSweep s;
    for (const auto& [theta, cells] : spec) {
      ThetaResult t;
      t.theta = theta;
      t.congruent = cells;
      s.per_theta.push_back(t);
    }
    return s;
  };
  auto range = [](std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> v;
    for (std::size_t i = lo; i < hi; ++i) v.push_back(i);
    return v;
  };

  const auto sweep = make({{-6, range(0, 2)}, {-3, range(0, 3)}, {0, range(0, 40)}, {3, range(10, 49)}, {6, range(60, 62)}});
  const auto counts = sweep.counts();
  CHECK(counts.at(0.0) == 40);
  CHECK(counts.at(3.0) == 39);
  const auto h = high_region(counts, p);
  CHECK(h.thetas == std::vector<double>{0.0, 3.0});
  CHECK(h.admissible);
  std::set<std::size_t> oracle;
  for (auto i : range(0, 40)) oracle.insert(i);
  for (auto i : range(10, 49)) oracle.insert(i);
  const std::size_t got = high_cmc(sweep, p);
  CHECK(got == oracle.size());
  CHECK(got >= 40);
  CHECK(got <= 64);

  CHECK(high_cmc(make({{0, range(0, 7)}}), p) == 7);

  std::vector<std::pair<double, std::vector<std::size_t>>> flat;
  for (int t = -30; t <= 30; t += 3) flat.push_back({double(t), range(std::size_t(t + 30), std::size_t(t + 35))});
  const auto fs = make(flat);
  CHECK_FALSE(high_region(fs.counts(), p).admissible);
  CHECK(high_cmc(fs, p) == 5);

  CmcParams original = p;
  original.high_cmc = false;
  CHECK(high_cmc(sweep, original) == 40);
}

TEST_CASE("self comparison") {
  const auto full = testing::smooth_field(224, 1, 11);
  const auto c = cmc_score(full, full);
  CHECK(c.cmc_ab == 64);
  CHECK(c.cmc_ba == 64);
  CHECK(c.score == 1.0);
  CHECK(c.counts_ab.at(0.0) == 64);

  const auto& ann = annulus_scan();
  const auto counts = cmc_counts(ann, ann, {});
  const auto cells = partition_cells(ann, 8, 0.5);
  const auto participating = std::size_t(std::count_if(cells.begin(), cells.end(), [](const Cell& x) { return x.participating; }));
  CHECK(counts.at(0.0) == participating);
}

TEST_CASE("rotation recovery and robustness") {
  const auto& ann = annulus_scan();
  for (double rot : {9.0, -12.0}) {
    const auto sweep = cmc_sweep(ann, rotate(ann, rot), {});
    CAPTURE(rot);
    CHECK(std::abs(sweep.best_theta() - rot) <= 3.0);
  }

  // Rotating a square image pushes its corners out of frame, so corner cells
  // can lose their partner at large angles. Every other cell must stay
  // congruent, and small angles must score >= 0.9 outright.
  const auto full = testing::smooth_field(224, 1, 12);
  const std::set<std::size_t> corners = {0, 1, 8, 6, 7, 15, 48, 56, 57, 55, 62, 63};
  for (double theta : CmcParams::default_thetas()) {
    CAPTURE(theta);
    const auto rotated = rotate(full, theta);
    const auto c = cmc_score(full, rotated);
    if (std::abs(theta) <= 12.0) CHECK(c.score >= 0.9);
    const auto sweep = cmc_sweep(full, rotated, {});
    const auto& at = *std::find_if(sweep.per_theta.begin(), sweep.per_theta.end(),
                                   [&](const ThetaResult& t) { return t.theta == theta; });
    std::set<std::size_t> lost;
    for (std::size_t i = 0; i < 64; ++i) lost.insert(i);
    for (std::size_t i : at.congruent) lost.erase(i);
    for (std::size_t i : lost) CHECK(corners.count(i) == 1);
  }
}

TEST_CASE("independent scans score low, symmetric, monotone in T_CCF") {
  int counts_ok = 0, scores_ok = 0;
  const int trials = 50;
  CmcParams strict;
  strict.t_ccf = 0.7;
  for (int t = 0; t < trials; ++t) {
    const auto [a, b] = independent_pair(1000 + t);
    const auto c = cmc_score(a, b);
    std::size_t max_count = 0;
    for (const auto& [theta, n] : c.counts_ab) max_count = std::max(max_count, n);
    counts_ok += max_count <= 10;
    scores_ok += c.score <= 10.0 / 128.0;
    CHECK(c.score == double(c.cmc_ab + c.cmc_ba) / 128.0);
    if (t < 3) {
      const auto rev = cmc_score(b, a);
      CHECK(rev.score == c.score);
      const auto tight = cmc_counts(a, b, strict);
      for (const auto& [theta, n] : tight) CHECK(n <= c.counts_ab.at(theta));
    }
  }
  MESSAGE("independent pairs: max count <= 10 in " << counts_ok << "/50, score <= 10/128 in " << scores_ok << "/50");
  CHECK(counts_ok >= 48);
  CHECK(scores_ok >= 48);
}

TEST_CASE("all pairs: counting and worker independence") {
  io::SynthParams p;
  p.guns = 2;
  p.casings_per_gun = 2;
  p.seed = 5;
  auto scans = io::generate_synthetic_dataset(p);
  for (auto& s : scans) s.surface = preprocess::preprocess_scan(s.surface).cmc_image;
  ScoringStats stats;
  const auto one = cmc_score_all_pairs(scans, {}, 1, &stats);
  const auto four = cmc_score_all_pairs(scans, {}, 4);
  REQUIRE(one.pairs.size() == 6);
  CHECK(stats.pairs == 6);
  CHECK(stats.failed == 0);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(one.pairs[i].score == four.pairs[i].score);
    CHECK(one.pairs[i].cmc_ab == four.pairs[i].cmc_ab);
    CHECK(one.pairs[i].casing_a == four.pairs[i].casing_a);
    CHECK(one.pairs[i].ok());
  }
  // Same-gun pairs are (0,1) and (4,5) in (i, j) order.
  CHECK(one.pairs[0].same_source());
  CHECK(one.pairs[0].score > 0.5);
  CHECK(one.pairs[1].score < 0.1);

  testing::TempDir dir;
  write_bench_json(stats, dir / "bench.json", {{"note", "x"}});
  CHECK(std::filesystem::file_size(dir / "bench.json") > 10);
  CHECK_THROWS_AS(cmc_score_all_pairs({scans[0]}, {}, 1), ParameterError);
}
