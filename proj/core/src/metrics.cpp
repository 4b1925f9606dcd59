#include "breechmark/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "breechmark/error.hpp"
#include "csv.hpp"

namespace breechmark::eval {

std::vector<PairLabel> pair_labels(const std::vector<std::string>& gun_ids) {
  std::vector<PairLabel> out;
  out.reserve(gun_ids.size() * (gun_ids.size() - (gun_ids.empty() ? 0 : 1)) / 2);
  for (std::size_t a = 0; a < gun_ids.size(); ++a) {
    for (std::size_t b = a + 1; b < gun_ids.size(); ++b) out.push_back({a, b, gun_ids[a] == gun_ids[b]});
  }
  return out;
}

std::vector<PairLabel> pair_labels(const std::vector<ScanRecord>& records) {
  std::vector<std::string> guns;
  guns.reserve(records.size());
  for (const auto& r : records) guns.push_back(r.gun_id);
  return pair_labels(guns);
}

void ScoreSet::validate() const {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& p : pairs) {
    auto key = std::minmax(p.casing_a, p.casing_b);
    if (p.casing_a == p.casing_b) throw JoinError("pair compares " + p.casing_a + " with itself");
    if (!seen.emplace(key.first, key.second).second) {
      throw JoinError("duplicate pair " + key.first + " / " + key.second);
    }
    if (p.ok() && !std::isfinite(p.score)) {
      throw NumericError("non-finite score for pair " + p.casing_a + " / " + p.casing_b);
    }
  }
}

namespace {

void check_classes(std::size_t pos, std::size_t neg) {
  if (pos == 0 || neg == 0) {
    throw UndefinedAucError("ROC AUC needs both classes; got " + std::to_string(pos) + " same-source and " +
                            std::to_string(neg) + " different-source pairs");
  }
}

void split_ok(const ScoreSet& set, std::vector<double>& scores, std::vector<bool>& labels) {
  for (const auto& p : set.pairs) {
    if (!p.ok()) continue;
    scores.push_back(p.score);
    labels.push_back(p.same_source());
  }
}

}  // namespace

double auc_midrank(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw ShapeError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });
  // Twice the midrank keeps every quantity an integer.
  std::uint64_t pos = 0, neg = 0, rank_sum2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const std::uint64_t twice_rank = static_cast<std::uint64_t>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) {
      if (positive[order[k]]) {
        ++pos;
        rank_sum2 += twice_rank;
      } else {
        ++neg;
      }
    }
    i = j + 1;
  }
  check_classes(pos, neg);
  const std::uint64_t numerator2 = rank_sum2 - pos * (pos + 1);
  return static_cast<double>(numerator2) / static_cast<double>(2 * pos * neg);
}

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<bool>& positive) {
  RocCurve roc;
  roc.auc = auc_midrank(scores, positive);
  for (bool b : positive) (b ? roc.positives : roc.negatives) += 1;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] > scores[j]; });
  const double p = static_cast<double>(roc.positives), n = static_cast<double>(roc.negatives);
  roc.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      (positive[order[i]] ? tp : fp) += 1;
      ++i;
    }
    roc.points.push_back({t, static_cast<double>(fp) / n, static_cast<double>(tp) / p});
  }
  return roc;
}

RocCurve roc_auc(const ScoreSet& set) {
  std::vector<double> scores;
  std::vector<bool> labels;
  split_ok(set, scores, labels);
  return roc_curve(scores, labels);
}

Histogram histogram(const std::vector<double>& scores, const std::vector<bool>& positive, std::size_t bins) {
  if (bins == 0) throw ParameterError("histogram needs at least one bin");
  Histogram h;
  h.same.assign(bins, 0);
  h.different.assign(bins, 0);
  if (scores.empty()) {
    for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(static_cast<double>(i) / static_cast<double>(bins));
    return h;
  }
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, hi = *hi_it;
  const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(lo + width * static_cast<double>(i));
  h.edges.back() = hi > lo ? hi : lo + 1.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    std::size_t b = hi > lo ? static_cast<std::size_t>((scores[i] - lo) / width) : 0;
    b = std::min(b, bins - 1);  // the maximum lands in the last, closed bin
    (positive[i] ? h.same : h.different)[b] += 1;
  }
  return h;
}

Histogram score_histogram(const ScoreSet& set, std::size_t bins) {
  std::vector<double> scores;
  std::vector<bool> labels;
  split_ok(set, scores, labels);
  return histogram(scores, labels, bins);
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("pearson: length mismatch");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

Scatter score_scatter(const ScoreSet& a, const ScoreSet& b, std::size_t bins) {
  if (bins == 0) throw ParameterError("scatter needs at least one bin");
  using Key = std::pair<std::string, std::string>;
  auto key = [](const ScoredPair& p) {
    auto k = std::minmax(p.casing_a, p.casing_b);
    return Key(k.first, k.second);
  };
  std::map<Key, const ScoredPair*> in_b;
  for (const auto& p : b.pairs) in_b.emplace(key(p), &p);
  std::set<Key> in_a;
  std::vector<std::string> missing;
  Scatter s;
  s.method_a = a.method;
  s.method_b = b.method;
  for (const auto& p : a.pairs) {
    const Key k = key(p);
    in_a.insert(k);
    auto it = in_b.find(k);
    if (it == in_b.end()) {
      missing.push_back(k.first + "/" + k.second + " (only in " + (a.method.empty() ? "first" : a.method) + ")");
      continue;
    }
    if (!p.ok() || !it->second->ok()) continue;
    s.points.push_back({k.first, k.second, p.score, it->second->score, p.same_source()});
  }
  for (const auto& [k, p] : in_b) {
    if (!in_a.count(k)) {
      missing.push_back(k.first + "/" + k.second + " (only in " + (b.method.empty() ? "second" : b.method) + ")");
    }
  }
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " pairs do not join:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ...";
    throw JoinError(msg);
  }

  s.bins = bins;
  s.grid.assign(bins * bins, 0);
  std::vector<double> xa, xb, nza, nzb;
  for (const auto& pt : s.points) {
    xa.push_back(pt.score_a);
    xb.push_back(pt.score_b);
    if (pt.score_b != 0.0) {
      nza.push_back(pt.score_a);
      nzb.push_back(pt.score_b);
    }
  }
  if (!s.points.empty()) {
    auto [la, ha] = std::minmax_element(xa.begin(), xa.end());
    auto [lb, hb] = std::minmax_element(xb.begin(), xb.end());
    s.min_a = *la;
    s.max_a = *ha;
    s.min_b = *lb;
    s.max_b = *hb;
    auto bin_of = [bins](double v, double lo, double hi) {
      if (!(hi > lo)) return std::size_t{0};
      auto i = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
      return std::min(i, bins - 1);
    };
    for (const auto& pt : s.points) {
      s.grid[bin_of(pt.score_b, s.min_b, s.max_b) * bins + bin_of(pt.score_a, s.min_a, s.max_a)] += 1;
    }
  }
  s.pearson_all = pearson(xa, xb);
  s.pearson_nonzero_b = pearson(nza, nzb);
  return s;
}

// --- files -----------------------------------------------------------------

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }
std::string short_num(double v) { return fmt::format("{:.6g}", v); }

}  // namespace

void write_scores_csv(const ScoreSet& set, const std::filesystem::path& path) {
  using detail::csv_field;
  std::ostringstream out;
  out << "casing_a,casing_b,gun_a,gun_b,score,cmc_ab,cmc_ba,status\n";
  for (const auto& p : set.pairs) {
    out << csv_field(p.casing_a) << ',' << csv_field(p.casing_b) << ',' << csv_field(p.gun_a) << ','
        << csv_field(p.gun_b) << ',' << (p.ok() ? num(p.score) : std::string()) << ','
        << (p.cmc_ab ? std::to_string(*p.cmc_ab) : std::string()) << ','
        << (p.cmc_ba ? std::to_string(*p.cmc_ba) : std::string()) << ',' << csv_field(p.status) << '\n';
  }
  write_text(path, out.str());
}

ScoreSet read_scores_csv(const std::filesystem::path& path, const std::string& method) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty score file");
  const auto header = detail::split_csv_line(line);
  const std::vector<std::string> expected = {"casing_a", "casing_b", "gun_a", "gun_b",
                                             "score",    "cmc_ab",   "cmc_ba", "status"};
  if (header != expected) {
    throw ParseError(path.string() + ": header must be " + "casing_a,casing_b,gun_a,gun_b,score,cmc_ab,cmc_ba,status");
  }
  ScoreSet set;
  set.method = method;
  std::size_t line_no = 1;
  auto parse_int = [&](const std::string& s) -> std::optional<int> {
    if (s.empty()) return std::nullopt;
    try {
      return std::stoi(s);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad integer '" + s + "'");
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != expected.size()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 8 fields, got " +
                       std::to_string(f.size()));
    }
    ScoredPair p;
    p.casing_a = f[0];
    p.casing_b = f[1];
    p.gun_a = f[2];
    p.gun_b = f[3];
    p.status = f[7];
    if (p.ok()) {
      try {
        std::size_t used = 0;
        p.score = std::stod(f[4], &used);
        if (used != f[4].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad score '" + f[4] + "'");
      }
    }
    p.cmc_ab = parse_int(f[5]);
    p.cmc_ba = parse_int(f[6]);
    set.pairs.push_back(std::move(p));
  }
  if (set.method.empty()) {
    set.method = std::any_of(set.pairs.begin(), set.pairs.end(), [](const ScoredPair& p) { return p.cmc_ab.has_value(); })
                     ? "cmc"
                     : "contrastive";
  }
  set.validate();
  return set;
}

void write_roc_csv(const RocCurve& roc, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "threshold,fpr,tpr\n";
  for (const auto& p : roc.points) out << (std::isinf(p.threshold) ? "inf" : num(p.threshold)) << ',' << num(p.fpr) << ',' << num(p.tpr) << '\n';
  write_text(path, out.str());
}

void write_histogram_csv(const Histogram& h, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "bin_lo,bin_hi,same_source,different_source\n";
  for (std::size_t i = 0; i < h.same.size(); ++i) {
    out << num(h.edges[i]) << ',' << num(h.edges[i + 1]) << ',' << h.same[i] << ',' << h.different[i] << '\n';
  }
  write_text(path, out.str());
}

void write_scatter_csv(const Scatter& s, const std::filesystem::path& path) {
  using detail::csv_field;
  std::ostringstream out;
  out << "casing_a,casing_b,score_" << (s.method_a.empty() ? "a" : s.method_a) << ",score_"
      << (s.method_b.empty() ? "b" : s.method_b) << ",same_source\n";
  for (const auto& p : s.points) {
    out << csv_field(p.casing_a) << ',' << csv_field(p.casing_b) << ',' << num(p.score_a) << ',' << num(p.score_b)
        << ',' << (p.same_source ? 1 : 0) << '\n';
  }
  write_text(path, out.str());
}

// --- SVG -------------------------------------------------------------------

namespace {

constexpr double kW = 480, kH = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

std::string open_svg(const std::string& title, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      kW, kH, kW, kH);
  s += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n", kW / 2, escape(title));
  s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", kLeft, kTop,
                   kW - kLeft - kRight, kH - kTop - kBottom);
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", f.px(xv), kH - kBottom + 16,
                     short_num(xv));
    s += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{}</text>\n", kLeft - 6, f.py(yv) + 4,
                     short_num(yv));
  }
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", (kLeft + kW - kRight) / 2, kH - 12,
                   escape(xlabel));
  s += fmt::format("<text transform=\"translate(16 {}) rotate(-90)\" text-anchor=\"middle\">{}</text>\n",
                   (kTop + kH - kBottom) / 2, escape(ylabel));
  return s;
}

}  // namespace

std::string roc_svg(const std::vector<LabeledCurve>& curves) {
  const Frame f{0, 1, 0, 1};
  std::string s = open_svg("ROC", f, "false positive rate", "true positive rate");
  s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n",
                   f.px(0), f.py(0), f.px(1), f.py(1));
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* color = kPalette[i % 5];
    std::string pts;
    for (const auto& p : curves[i].curve.points) pts += fmt::format("{:.2f},{:.2f} ", f.px(p.fpr), f.py(p.tpr));
    s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", color, pts);
    s += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{} (AUC {:.3f})</text>\n", f.px(0.45),
                     f.py(0.08) + 16.0 * static_cast<double>(i) - 16.0 * static_cast<double>(curves.size() - 1),
                     color, escape(curves[i].label), curves[i].curve.auc);
  }
  return s + "</svg>\n";
}

std::string histogram_svg(const Histogram& h, const std::string& title) {
  std::size_t top = 1;
  for (std::size_t i = 0; i < h.same.size(); ++i) top = std::max({top, h.same[i], h.different[i]});
  // Densities would hide the class imbalance; raw counts on a shared axis.
  const Frame f{h.edges.front(), h.edges.back(), 0, static_cast<double>(top)};
  std::string s = open_svg(title, f, "score", "pairs");
  for (std::size_t i = 0; i < h.same.size(); ++i) {
    const double x0 = f.px(h.edges[i]), x1 = f.px(h.edges[i + 1]);
    for (int cls = 0; cls < 2; ++cls) {
      const double c = static_cast<double>(cls == 0 ? h.different[i] : h.same[i]);
      if (c == 0) continue;
      s += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\" "
                       "fill-opacity=\"0.5\"/>\n",
                       x0, f.py(c), std::max(x1 - x0, 0.5), f.py(0) - f.py(c), cls == 0 ? kPalette[0] : kPalette[1]);
    }
  }
  s += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">different source</text>\n", kW - 150, kTop + 16, kPalette[0]);
  s += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">same source</text>\n", kW - 150, kTop + 32, kPalette[1]);
  return s + "</svg>\n";
}

std::string scatter_svg(const Scatter& sc) {
  const double ax1 = sc.max_a > sc.min_a ? sc.max_a : sc.min_a + 1;
  const double bx1 = sc.max_b > sc.min_b ? sc.max_b : sc.min_b + 1;
  const Frame f{sc.min_a, ax1, sc.min_b, bx1};
  std::string title = "score heatmap";
  if (sc.pearson_nonzero_b) title += fmt::format(" (r = {:.3f} where {} != 0)", *sc.pearson_nonzero_b, sc.method_b);
  std::string s = open_svg(title, f, sc.method_a.empty() ? "score a" : sc.method_a,
                           sc.method_b.empty() ? "score b" : sc.method_b);
  std::size_t top = 1;
  for (auto c : sc.grid) top = std::max(top, c);
  const double cw = (kW - kLeft - kRight) / static_cast<double>(sc.bins);
  const double ch = (kH - kTop - kBottom) / static_cast<double>(sc.bins);
  for (std::size_t r = 0; r < sc.bins; ++r) {
    for (std::size_t c = 0; c < sc.bins; ++c) {
      const auto count = sc.grid[r * sc.bins + c];
      if (count == 0) continue;
      // log scale so the sparse same-source cells stay visible
      const double t = std::log1p(static_cast<double>(count)) / std::log1p(static_cast<double>(top));
      const int shade = static_cast<int>(std::lround(230.0 * (1.0 - t)));
      s += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"rgb({},{},255)\"/>\n",
                       kLeft + cw * static_cast<double>(c), kH - kBottom - ch * static_cast<double>(r + 1), cw, ch,
                       shade, shade);
    }
  }
  return s + "</svg>\n";
}

}  // namespace breechmark::eval
