#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "breechmark/error.hpp"
#include "breechmark/metrics.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace breechmark;
using namespace breechmark::eval;

namespace {

// Exhaustive pair enumeration, returned as twice the number of wins so the
// comparison with the rank implementation can be exact.
double brute_auc(const std::vector<double>& s, const std::vector<bool>& pos) {
  std::uint64_t twice = 0, p = 0, n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) (pos[i] ? p : n) += 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (pos[j]) continue;
      if (s[i] > s[j]) twice += 2;
      else if (s[i] == s[j]) twice += 1;
    }
  }
  return static_cast<double>(twice) / static_cast<double>(2 * p * n);
}

double trapezoid(const RocCurve& roc) {
  double area = 0;
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto& a = roc.points[i - 1];
    const auto& b = roc.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2;
  }
  return area;
}

struct Sample {
  std::vector<double> scores;
  std::vector<bool> labels;
};

Sample random_sample(std::mt19937_64& rng, bool ties) {
  std::uniform_int_distribution<int> size(2, 200);
  const int n = size(rng);
  Sample s;
  std::uniform_int_distribution<int> coarse(0, 7);
  std::uniform_real_distribution<double> fine(0.0, 1.0);
  std::bernoulli_distribution label(0.3);
  for (int i = 0; i < n; ++i) {
    s.scores.push_back(ties ? coarse(rng) / 7.0 : fine(rng));
    s.labels.push_back(label(rng));
  }
  // both classes present
  s.labels[0] = true;
  s.labels[1] = false;
  return s;
}

ScoredPair pair(const std::string& a, const std::string& b, const std::string& ga, const std::string& gb, double score) {
  ScoredPair p;
  p.casing_a = a;
  p.casing_b = b;
  p.gun_a = ga;
  p.gun_b = gb;
  p.score = score;
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("pair labels") {
  std::vector<std::string> guns;
  for (int g = 0; g < 12; ++g)
    for (int c = 0; c < 12; ++c) guns.push_back("G" + std::to_string(g));
  const auto labels = pair_labels(guns);
  CHECK(labels.size() == 10296);
  const auto same = std::count_if(labels.begin(), labels.end(), [](const PairLabel& l) { return l.same_source; });
  CHECK(same == 792);
  CHECK(labels.size() - same == 9504);
  for (const auto& l : labels) {
    REQUIRE(l.a < l.b);
    CHECK(l.same_source == (guns[l.a] == guns[l.b]));
  }

  CHECK(pair_labels(std::vector<std::string>{"x", "x"}).size() == 1);
  CHECK(pair_labels(std::vector<std::string>{"x", "x"})[0].same_source);
  const auto three = pair_labels(std::vector<std::string>{"a", "b", "c"});
  CHECK(three.size() == 3);
  CHECK(std::none_of(three.begin(), three.end(), [](const PairLabel& l) { return l.same_source; }));

  std::vector<ScanRecord> recs(3);
  recs[0].gun_id = "g1";
  recs[1].gun_id = "g2";
  recs[2].gun_id = "g1";
  const auto from_records = pair_labels(recs);
  REQUIRE(from_records.size() == 3);
  CHECK(from_records[1].a == 0);
  CHECK(from_records[1].b == 2);
  CHECK(from_records[1].same_source);
}

TEST_CASE("auc examples") {
  CHECK(auc_midrank({0.9, 0.8, 0.3, 0.2}, {true, true, false, false}) == 1.0);
  CHECK(auc_midrank({0.5, 0.5, 0.5, 0.5, 0.5}, {true, false, true, false, false}) == 0.5);
  CHECK(auc_midrank({0.8, 0.4, 0.6, 0.2}, {true, true, false, false}) == 0.75);
  CHECK(auc_midrank({0.1, 0.9}, {true, false}) == 0.0);

  CHECK_THROWS_AS(auc_midrank({0.1, 0.2}, {true, true}), UndefinedAucError);
  CHECK_THROWS_AS(auc_midrank({0.1, 0.2}, {false, false}), UndefinedAucError);
  CHECK_THROWS_AS(auc_midrank({}, {}), UndefinedAucError);
  CHECK_THROWS_AS(auc_midrank({0.1}, {true, false}), ShapeError);
}

TEST_CASE("auc matches brute force on 200 random sets") {
  std::mt19937_64 rng(4242);
  for (int t = 0; t < 200; ++t) {
    const auto s = random_sample(rng, t % 2 == 0);
    const double rank = auc_midrank(s.scores, s.labels);
    CHECK(rank == brute_auc(s.scores, s.labels));
    CHECK(rank >= 0.0);
    CHECK(rank <= 1.0);
  }
}

TEST_CASE("auc properties") {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 50; ++t) {
    auto s = random_sample(rng, t % 2 == 1);
    const double base = auc_midrank(s.scores, s.labels);

    std::vector<double> warped;
    for (double v : s.scores) warped.push_back(std::exp(3.0 * v) + v * v * v - 7.0);
    CHECK(auc_midrank(warped, s.labels) == base);

    if (t % 2 == 0) {
      std::vector<double> neg;
      for (double v : s.scores) neg.push_back(-v);
      CHECK(base + auc_midrank(neg, s.labels) == doctest::Approx(1.0).epsilon(1e-12));
    }

    // order of the inputs does not matter
    std::vector<std::size_t> perm(s.scores.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> ps;
    std::vector<bool> pl;
    for (auto i : perm) {
      ps.push_back(s.scores[i]);
      pl.push_back(s.labels[i]);
    }
    CHECK(auc_midrank(ps, pl) == base);
  }
}

TEST_CASE("roc curve") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 60; ++t) {
    const auto s = random_sample(rng, t % 3 != 0);
    const auto roc = roc_curve(s.scores, s.labels);
    REQUIRE(roc.points.size() >= 2);
    CHECK(roc.points.front().fpr == 0.0);
    CHECK(roc.points.front().tpr == 0.0);
    CHECK(roc.points.back().fpr == 1.0);
    CHECK(roc.points.back().tpr == 1.0);
    std::vector<double> distinct = s.scores;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    CHECK(roc.points.size() == distinct.size() + 1);
    for (std::size_t i = 1; i < roc.points.size(); ++i) {
      CHECK(roc.points[i].fpr >= roc.points[i - 1].fpr);
      CHECK(roc.points[i].tpr >= roc.points[i - 1].tpr);
      CHECK(roc.points[i].threshold < roc.points[i - 1].threshold);
    }
    CHECK(trapezoid(roc) == doctest::Approx(roc.auc).epsilon(1e-12));
    CHECK(roc.positives + roc.negatives == s.scores.size());
  }
}

TEST_CASE("score set validation and roc over ok pairs") {
  ScoreSet set;
  set.method = "contrastive";
  set.pairs = {pair("a", "b", "g1", "g1", 0.9), pair("a", "c", "g1", "g2", 0.2), pair("b", "c", "g1", "g2", 0.4)};
  CHECK_NOTHROW(set.validate());
  auto roc = roc_auc(set);
  CHECK(roc.auc == 1.0);
  CHECK(roc.positives == 1);
  CHECK(roc.negatives == 2);

  auto failed = pair("a", "d", "g1", "g3", std::nan(""));
  failed.status = "failed: no correlation";
  set.pairs.push_back(failed);
  CHECK_NOTHROW(set.validate());
  CHECK(roc_auc(set).negatives == 2);

  auto dup = set;
  dup.pairs.push_back(pair("b", "a", "g1", "g1", 0.5));
  CHECK_THROWS_AS(dup.validate(), JoinError);

  auto nonfinite = set;
  nonfinite.pairs[1].score = INFINITY;
  CHECK_THROWS_AS(nonfinite.validate(), NumericError);

  auto one_class = set;
  one_class.pairs.erase(one_class.pairs.begin());
  CHECK_THROWS_AS(roc_auc(one_class), UndefinedAucError);
}

TEST_CASE("histogram") {
  // hand binning: width 0.3 over [0, 0.9]
  const std::vector<double> s = {0.0, 0.2, 0.35, 0.55, 0.7, 0.9};
  const std::vector<bool> l = {false, true, false, true, true, true};
  const auto h = histogram(s, l, 3);
  REQUIRE(h.edges.size() == 4);
  CHECK(h.edges.front() == 0.0);
  CHECK(h.edges.back() == 0.9);
  CHECK(h.edges[1] == doctest::Approx(0.3));
  CHECK(h.same == std::vector<std::size_t>{1, 1, 2});
  CHECK(h.different == std::vector<std::size_t>{1, 1, 0});

  const auto one = histogram(s, l, 1);
  CHECK(one.same == std::vector<std::size_t>{4});
  CHECK(one.different == std::vector<std::size_t>{2});

  std::mt19937_64 rng(17);
  for (int t = 0; t < 20; ++t) {
    const auto r = random_sample(rng, t % 2 == 0);
    const std::size_t bins = 1 + t;
    const auto hr = histogram(r.scores, r.labels, bins);
    const auto p = std::count(r.labels.begin(), r.labels.end(), true);
    CHECK(std::accumulate(hr.same.begin(), hr.same.end(), std::size_t{0}) == static_cast<std::size_t>(p));
    CHECK(std::accumulate(hr.different.begin(), hr.different.end(), std::size_t{0}) == r.labels.size() - p);
    for (std::size_t i = 1; i < hr.edges.size(); ++i) CHECK(hr.edges[i] > hr.edges[i - 1]);
  }

  const auto flat = histogram({0.4, 0.4, 0.4}, {true, false, false}, 4);
  CHECK(flat.same[0] == 1);
  CHECK(flat.different[0] == 2);
  CHECK(flat.edges.back() > flat.edges.front());

  CHECK_THROWS_AS(histogram(s, l, 0), ParameterError);

  ScoreSet set;
  set.pairs = {pair("a", "b", "g", "g", 1.0), pair("a", "c", "g", "h", 0.0)};
  const auto hs = score_histogram(set, 2);
  CHECK(hs.same == std::vector<std::size_t>{0, 1});
  CHECK(hs.different == std::vector<std::size_t>{1, 0});
}

TEST_CASE("pearson") {
  // x = 1..5, y = 2,4,5,4,5: sxy = 6, sxx = 10, syy = 6
  const auto r = pearson({1, 2, 3, 4, 5}, {2, 4, 5, 4, 5});
  REQUIRE(r.has_value());
  CHECK(std::abs(*r - 6.0 / std::sqrt(60.0)) < 1e-12);
  CHECK(*pearson({1, 2, 3}, {-2, -4, -6}) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_FALSE(pearson({1}, {2}).has_value());
  CHECK_FALSE(pearson({1, 1, 1}, {1, 2, 3}).has_value());
  CHECK_THROWS_AS(pearson({1, 2}, {1}), ShapeError);
}

TEST_CASE("scatter join") {
  ScoreSet a, b;
  a.method = "contrastive";
  b.method = "cmc";
  const std::vector<std::string> ids = {"c0", "c1", "c2", "c3"};
  const std::vector<double> xa = {1, 2, 3, 4, 5, 6};
  const std::vector<double> xb = {2, 4, 5, 4, 5, 0};
  std::size_t k = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j, ++k) {
      a.pairs.push_back(pair(ids[i], ids[j], "g" + std::to_string(i / 2), "g" + std::to_string(j / 2), xa[k]));
      // b lists each pair in the opposite orientation
      b.pairs.push_back(pair(ids[j], ids[i], "g" + std::to_string(j / 2), "g" + std::to_string(i / 2), xb[k]));
    }
  }

  const auto self = score_scatter(a, a, 5);
  CHECK(self.points.size() == 6);
  for (const auto& p : self.points) CHECK(p.score_a == p.score_b);
  REQUIRE(self.pearson_all.has_value());
  CHECK(*self.pearson_all == doctest::Approx(1.0).epsilon(1e-14));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c)
      if (r != c) CHECK(self.grid[r * 5 + c] == 0);

  const auto s = score_scatter(a, b, 4);
  CHECK(s.points.size() == 6);
  REQUIRE(s.pearson_nonzero_b.has_value());
  CHECK(std::abs(*s.pearson_nonzero_b - 6.0 / std::sqrt(60.0)) < 1e-12);
  REQUIRE(s.pearson_all.has_value());
  CHECK(*s.pearson_all == doctest::Approx(*pearson(xa, xb)).epsilon(1e-14));
  CHECK(std::accumulate(s.grid.begin(), s.grid.end(), std::size_t{0}) == 6);
  CHECK(s.min_b == 0.0);
  CHECK(s.max_a == 6.0);
  CHECK(std::count_if(s.points.begin(), s.points.end(), [](const ScatterPoint& p) { return p.same_source; }) == 2);

  ScoreSet other;
  other.method = "cmc";
  other.pairs = {pair("x", "y", "g", "g", 1.0)};
  try {
    score_scatter(a, other);
    FAIL("expected a join error");
  } catch (const JoinError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("7 pairs") != std::string::npos);
    CHECK(msg.find("c0/c1") != std::string::npos);
    CHECK(msg.find("x/y") != std::string::npos);
  }
  CHECK_THROWS_AS(score_scatter(a, b, 0), ParameterError);
}

TEST_CASE("csv round trips") {
  testing::TempDir dir;
  ScoreSet set;
  set.method = "cmc";
  auto p1 = pair("G01-C01", "G01-C02", "G01", "G01", 0.125);
  p1.cmc_ab = 9;
  p1.cmc_ba = 7;
  auto p2 = pair("G01-C01", "G02,C01", "G01", "G02", 1.0 / 3.0);
  p2.cmc_ab = 0;
  p2.cmc_ba = 1;
  auto p3 = pair("G01-C02", "G02,C01", "G01", "G02", 0.0);
  p3.status = "failed: \"no overlap\"";
  set.pairs = {p1, p2, p3};
  write_scores_csv(set, dir / "scores.csv");
  CHECK(read_scores_csv(dir / "scores.csv") == set);
  CHECK(read_scores_csv(dir / "scores.csv", "other").method == "other");

  ScoreSet plain;
  plain.pairs = {pair("a", "b", "g", "g", 0.7)};
  write_scores_csv(plain, dir / "plain.csv");
  CHECK(read_scores_csv(dir / "plain.csv").method == "contrastive");

  {
    std::ofstream bad(dir / "bad_header.csv");
    bad << "a,b,score\n";
  }
  CHECK_THROWS_AS(read_scores_csv(dir / "bad_header.csv"), ParseError);
  {
    std::ofstream bad(dir / "bad_score.csv");
    bad << "casing_a,casing_b,gun_a,gun_b,score,cmc_ab,cmc_ba,status\n";
    bad << "a,b,g,g,0.5,,,ok\n";
    bad << "a,c,g,h,high,,,ok\n";
  }
  try {
    read_scores_csv(dir / "bad_score.csv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  CHECK_THROWS_AS(read_scores_csv(dir / "missing.csv"), IoError);

  const auto roc = roc_curve({0.9, 0.5, 0.5, 0.1}, {true, true, false, false});
  write_roc_csv(roc, dir / "roc.csv");
  const auto text = slurp(dir / "roc.csv");
  CHECK(text.rfind("threshold,fpr,tpr\ninf,0,0\n0.90000000000000002,0,0.5\n", 0) == 0);
  CHECK(text.size() >= 6);
  CHECK(text.substr(text.size() - 5) == ",1,1\n");

  const auto h = histogram({0.0, 0.2, 0.35, 0.55, 0.7, 0.9}, {false, true, false, true, true, true}, 3);
  write_histogram_csv(h, dir / "hist.csv");
  const auto hist = slurp(dir / "hist.csv");
  CHECK(count_of(hist, "\n") == 4);
  CHECK(hist.find("bin_lo,bin_hi,same_source,different_source\n0,") == 0);

  ScoreSet a;
  a.method = "contrastive";
  a.pairs = {pair("a", "b", "g", "g", 0.7), pair("a", "c", "g", "h", 0.1)};
  auto b = a;
  b.method = "cmc";
  write_scatter_csv(score_scatter(a, b), dir / "scatter.csv");
  const auto sc = slurp(dir / "scatter.csv");
  CHECK(sc.find("casing_a,casing_b,score_contrastive,score_cmc,same_source\n") == 0);
  CHECK(sc.find("a,b,0.69999999999999996,0.69999999999999996,1\n") != std::string::npos);
}

TEST_CASE("svg output") {
  const auto roc = roc_curve({0.9, 0.5, 0.5, 0.1}, {true, true, false, false});
  const auto svg = roc_svg({{"model <n=16> & co", roc}, {"cmc", roc}});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.substr(svg.size() - 7) == "</svg>\n");
  CHECK(count_of(svg, "<polyline") == 2);
  CHECK(svg.find("model &lt;n=16&gt; &amp; co") != std::string::npos);
  CHECK(svg.find("AUC 0.875") != std::string::npos);

  const auto h = histogram({0.0, 0.2, 0.35, 0.55, 0.7, 0.9}, {false, true, false, true, true, true}, 3);
  const auto hsvg = histogram_svg(h, "scores");
  // one bar per non-empty (bin, class)
  CHECK(count_of(hsvg, "fill-opacity") == 5);

  ScoreSet a;
  a.method = "contrastive";
  a.pairs = {pair("a", "b", "g", "g", 0.7), pair("a", "c", "g", "h", 0.1), pair("b", "c", "g", "h", 0.3)};
  auto b = a;
  b.method = "cmc";
  const auto ssvg = scatter_svg(score_scatter(a, b, 3));
  CHECK(count_of(ssvg, "fill=\"rgb(") == 3);
  CHECK(ssvg.find("r = 1.000") != std::string::npos);

  testing::TempDir dir;
  write_text(dir / "roc.svg", svg);
  CHECK(slurp(dir / "roc.svg") == svg);
  CHECK_FALSE(std::filesystem::exists(dir / "roc.svg.tmp"));
}
