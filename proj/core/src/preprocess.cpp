#include "breechmark/preprocess.hpp"

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "binary_io.hpp"
#include "breechmark/error.hpp"
#include "filters.hpp"

namespace breechmark::preprocess {
namespace {

constexpr char kPolarMagic[] = "BMKP";
constexpr std::size_t kPolarSize = kAngularSamples * kRadialSamples;

// Gaussian sigma (in wavelengths) giving 50% transmission at the cutoff.
const double kIsoSigmaPerCutoff = std::sqrt(std::numbers::ln2 / std::numbers::pi) / std::sqrt(2.0 * std::numbers::pi);

}  // namespace

PolarImage::PolarImage() : values_(kPolarSize, 0.0), mask_(kPolarSize, 0) {}

PolarImage::PolarImage(std::vector<double> values, std::vector<std::uint8_t> mask)
    : values_(std::move(values)), mask_(std::move(mask)) {
  if (values_.size() != kPolarSize || mask_.size() != kPolarSize) {
    throw SizeMismatchError("PolarImage must be 377x60, got " + std::to_string(values_.size()) + " values");
  }
  for (std::size_t i = 0; i < kPolarSize; ++i) {
    if (!mask_[i]) values_[i] = 0.0;
  }
}

PolarImage PolarImage::from_values(std::vector<double> values) {
  std::vector<std::uint8_t> mask(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) mask[i] = values[i] != 0.0 ? 1 : 0;
  return PolarImage(std::move(values), std::move(mask));
}

std::size_t PolarImage::valid_count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

PolarImage PolarImage::shifted(std::ptrdiff_t shift) const {
  const auto n = static_cast<std::ptrdiff_t>(kAngularSamples);
  std::vector<double> v(kPolarSize);
  std::vector<std::uint8_t> m(kPolarSize);
  for (std::ptrdiff_t a = 0; a < n; ++a) {
    std::ptrdiff_t src = ((a - shift) % n + n) % n;
    std::copy_n(values_.begin() + src * static_cast<std::ptrdiff_t>(kRadialSamples), kRadialSamples,
                v.begin() + a * static_cast<std::ptrdiff_t>(kRadialSamples));
    std::copy_n(mask_.begin() + src * static_cast<std::ptrdiff_t>(kRadialSamples), kRadialSamples,
                m.begin() + a * static_cast<std::ptrdiff_t>(kRadialSamples));
  }
  return PolarImage(std::move(v), std::move(m));
}

void PreprocessParams::validate() const {
  if (!(high_cut > 0.0) || !(low_cut > high_cut)) {
    throw ParameterError("band-pass cutoffs must satisfy low_cut > high_cut > 0");
  }
  if (!(coverage > 0.0 && coverage <= 1.0) || !(min_coverage > 0.0 && min_coverage <= coverage)) {
    throw ParameterError("coverage thresholds must satisfy 0 < min_coverage <= coverage <= 1");
  }
  if (!(full_disk_inner_ratio > 0.0 && full_disk_inner_ratio < 1.0)) {
    throw ParameterError("full_disk_inner_ratio must be in (0, 1)");
  }
}

SurfaceMatrix level_surface(const SurfaceMatrix& scan) {
  const std::size_t n = scan.valid_count();
  if (n < 3) throw LevelingError("leveling needs at least 3 valid samples, have " + std::to_string(n));

  // Centred, scaled coordinates keep the design matrix well conditioned.
  const double rc = 0.5 * static_cast<double>(scan.rows() - 1);
  const double cc = 0.5 * static_cast<double>(scan.cols() - 1);
  const double scale = 1.0 / static_cast<double>(std::max(scan.rows(), scan.cols()));
  Eigen::MatrixXd design(static_cast<Eigen::Index>(n), 3);
  Eigen::VectorXd z(static_cast<Eigen::Index>(n));
  Eigen::Index k = 0;
  for (std::size_t r = 0; r < scan.rows(); ++r) {
    for (std::size_t c = 0; c < scan.cols(); ++c) {
      if (!scan.valid(r, c)) continue;
      design(k, 0) = 1.0;
      design(k, 1) = (static_cast<double>(r) - rc) * scale;
      design(k, 2) = (static_cast<double>(c) - cc) * scale;
      z(k) = scan.height(r, c);
      ++k;
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < 3) throw LevelingError("degenerate plane fit: valid samples are collinear");
  Eigen::Vector3d coef = qr.solve(z);

  SurfaceMatrix out = scan;
  for (std::size_t r = 0; r < scan.rows(); ++r) {
    for (std::size_t c = 0; c < scan.cols(); ++c) {
      if (!scan.valid(r, c)) continue;
      double plane = coef(0) + coef(1) * (static_cast<double>(r) - rc) * scale +
                     coef(2) * (static_cast<double>(c) - cc) * scale;
      out.height(r, c) = scan.height(r, c) - plane;
    }
  }
  return out;
}

BreechFace isolate_breech_face(const SurfaceMatrix& scan, const PreprocessParams& params) {
  params.validate();
  const std::size_t n_valid = scan.valid_count();
  if (n_valid == 0) throw IsolationError("cannot isolate breech face: scan has no valid samples");

  double sum_r = 0.0, sum_c = 0.0;
  for (std::size_t r = 0; r < scan.rows(); ++r) {
    for (std::size_t c = 0; c < scan.cols(); ++c) {
      if (scan.valid(r, c)) {
        sum_r += static_cast<double>(r);
        sum_c += static_cast<double>(c);
      }
    }
  }
  const double cr = sum_r / static_cast<double>(n_valid);
  const double cc = sum_c / static_cast<double>(n_valid);
  const double max_radius = std::min({cr, static_cast<double>(scan.rows() - 1) - cr, cc,
                                      static_cast<double>(scan.cols() - 1) - cc});
  const auto rings = static_cast<std::size_t>(std::floor(max_radius));
  if (rings < 2) throw IsolationError("mask centroid lies at the image border");

  std::vector<std::size_t> total(rings, 0), valid(rings, 0);
  for (std::size_t r = 0; r < scan.rows(); ++r) {
    for (std::size_t c = 0; c < scan.cols(); ++c) {
      double d = std::hypot(static_cast<double>(r) - cr, static_cast<double>(c) - cc);
      auto ring = static_cast<std::size_t>(d);
      if (ring >= rings) continue;
      ++total[ring];
      if (scan.valid(r, c)) ++valid[ring];
    }
  }
  std::vector<double> coverage(rings, 0.0);
  for (std::size_t k = 0; k < rings; ++k) {
    coverage[k] = total[k] ? static_cast<double>(valid[k]) / static_cast<double>(total[k]) : 0.0;
  }

  double threshold = params.coverage;
  if (*std::max_element(coverage.begin(), coverage.end()) < threshold) {
    threshold = params.min_coverage;
    spdlog::warn("breech face isolation: no ring reaches {:.0f}% coverage, falling back to {:.0f}%",
                 100.0 * params.coverage, 100.0 * params.min_coverage);
  }
  auto first = std::find_if(coverage.begin(), coverage.end(), [&](double v) { return v >= threshold; });
  if (first == coverage.end()) {
    throw IsolationError("no radius band reaches " + std::to_string(params.min_coverage) + " valid coverage");
  }
  auto k_in = static_cast<std::size_t>(first - coverage.begin());
  std::size_t k_out = k_in;
  for (std::size_t k = k_in; k < rings; ++k) {
    if (coverage[k] >= threshold) k_out = k;
  }

  Annulus ann{cr, cc, static_cast<double>(k_in), std::min(static_cast<double>(k_out + 1), max_radius)};
  bool hole_found = k_in > 0;
  if (!hole_found) {
    ann.r_inner = params.full_disk_inner_ratio * ann.r_outer;
    spdlog::warn("breech face isolation: no firing-pin hole found, using r_inner = {:.1f}", ann.r_inner);
  }
  if (!(ann.r_outer > ann.r_inner)) throw IsolationError("degenerate annulus: r_outer <= r_inner");

  SurfaceMatrix out = scan;
  for (std::size_t r = 0; r < scan.rows(); ++r) {
    for (std::size_t c = 0; c < scan.cols(); ++c) {
      double d = std::hypot(static_cast<double>(r) - cr, static_cast<double>(c) - cc);
      if (d < ann.r_inner || d > ann.r_outer) out.set_valid(r, c, false);
    }
  }
  out.scrub_invalid();
  return {std::move(out), ann, hole_found};
}

BreechFace crop_to_annulus(const BreechFace& face) {
  const SurfaceMatrix& src = face.surface;
  const auto side = std::max<std::size_t>(2 * static_cast<std::size_t>(std::ceil(face.annulus.r_outer)) + 2,
                                          kCmcImageSide);
  const double half = 0.5 * static_cast<double>(side - 1);
  const auto top = static_cast<std::ptrdiff_t>(std::llround(face.annulus.center_row - half));
  const auto left = static_cast<std::ptrdiff_t>(std::llround(face.annulus.center_col - half));

  std::vector<double> heights(side * side, 0.0);
  std::vector<std::uint8_t> mask(side * side, 0);
  for (std::size_t r = 0; r < side; ++r) {
    std::ptrdiff_t sr = top + static_cast<std::ptrdiff_t>(r);
    if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(src.rows())) continue;
    for (std::size_t c = 0; c < side; ++c) {
      std::ptrdiff_t sc = left + static_cast<std::ptrdiff_t>(c);
      if (sc < 0 || sc >= static_cast<std::ptrdiff_t>(src.cols())) continue;
      auto ur = static_cast<std::size_t>(sr), uc = static_cast<std::size_t>(sc);
      heights[r * side + c] = src.height(ur, uc);
      mask[r * side + c] = src.valid(ur, uc) ? 1 : 0;
    }
  }
  Annulus ann = face.annulus;
  ann.center_row -= static_cast<double>(top);
  ann.center_col -= static_cast<double>(left);
  return {SurfaceMatrix(side, side, src.resolution(), std::move(heights), std::move(mask)), ann, face.hole_found};
}

SurfaceMatrix bandpass_filter(const SurfaceMatrix& scan, double low_cut, double high_cut) {
  if (!(high_cut > 0.0) || !(low_cut > high_cut)) {
    throw ParameterError("band-pass cutoffs must satisfy low_cut > high_cut > 0");
  }
  const double sigma_hp = kIsoSigmaPerCutoff * low_cut / scan.resolution();
  const double sigma_lp = kIsoSigmaPerCutoff * high_cut / scan.resolution();

  auto waviness = detail::masked_gaussian(scan.heights(), scan.mask(), scan.rows(), scan.cols(), sigma_hp);
  std::vector<double> detail_part(scan.size(), 0.0);
  for (std::size_t i = 0; i < scan.size(); ++i) {
    if (scan.mask()[i]) detail_part[i] = scan.heights()[i] - waviness[i];
  }
  auto smoothed = detail::masked_gaussian(detail_part, scan.mask(), scan.rows(), scan.cols(), sigma_lp);
  return SurfaceMatrix(scan.rows(), scan.cols(), scan.resolution(), std::move(smoothed), scan.mask());
}

namespace {

// Footprint weights of source samples for each output index along one axis.
struct AxisWeights {
  std::vector<std::size_t> first;
  std::vector<std::vector<double>> weights;
};

AxisWeights area_weights(std::size_t src, std::size_t dst) {
  AxisWeights aw;
  const double f = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t i = 0; i < dst; ++i) {
    double lo = static_cast<double>(i) * f, hi = static_cast<double>(i + 1) * f;
    auto s0 = static_cast<std::size_t>(std::floor(lo));
    auto s1 = std::min(src, static_cast<std::size_t>(std::ceil(hi)));
    std::vector<double> w;
    for (std::size_t s = s0; s < s1; ++s) {
      double overlap = std::min(hi, static_cast<double>(s + 1)) - std::max(lo, static_cast<double>(s));
      w.push_back(std::max(0.0, overlap));
    }
    aw.first.push_back(s0);
    aw.weights.push_back(std::move(w));
  }
  return aw;
}

}  // namespace

SurfaceMatrix resize_area(const SurfaceMatrix& scan, std::size_t side) {
  if (scan.rows() < side || scan.cols() < side) {
    throw UpscaleRefusedError("resize refuses to upscale " + std::to_string(scan.rows()) + "x" +
                              std::to_string(scan.cols()) + " to " + std::to_string(side));
  }
  auto wr = area_weights(scan.rows(), side);
  auto wc = area_weights(scan.cols(), side);

  // Columns first: per source row, per output column.
  std::vector<double> num(scan.rows() * side, 0.0), den(scan.rows() * side, 0.0), area(scan.rows() * side, 0.0);
  for (std::size_t r = 0; r < scan.rows(); ++r) {
    for (std::size_t j = 0; j < side; ++j) {
      double sn = 0.0, sd = 0.0, sa = 0.0;
      for (std::size_t t = 0; t < wc.weights[j].size(); ++t) {
        std::size_t c = wc.first[j] + t;
        double w = wc.weights[j][t];
        sa += w;
        if (scan.valid(r, c)) {
          sd += w;
          sn += w * scan.height(r, c);
        }
      }
      num[r * side + j] = sn;
      den[r * side + j] = sd;
      area[r * side + j] = sa;
    }
  }
  std::vector<double> heights(side * side, 0.0);
  std::vector<std::uint8_t> mask(side * side, 0);
  for (std::size_t i = 0; i < side; ++i) {
    for (std::size_t j = 0; j < side; ++j) {
      double sn = 0.0, sd = 0.0, sa = 0.0;
      for (std::size_t t = 0; t < wr.weights[i].size(); ++t) {
        std::size_t r = wr.first[i] + t;
        double w = wr.weights[i][t];
        sn += w * num[r * side + j];
        sd += w * den[r * side + j];
        sa += w * area[r * side + j];
      }
      if (sd > 0.0 && sd >= 0.5 * sa) {
        heights[i * side + j] = sn / sd;
        mask[i * side + j] = 1;
      }
    }
  }
  const double res = scan.resolution() * static_cast<double>(scan.rows()) / static_cast<double>(side);
  return SurfaceMatrix(side, side, res, std::move(heights), std::move(mask));
}

Annulus rescale_annulus(const Annulus& a, std::size_t rows, std::size_t cols, std::size_t side) {
  const double fr = static_cast<double>(side) / static_cast<double>(rows);
  const double fc = static_cast<double>(side) / static_cast<double>(cols);
  const double f = std::min(fr, fc);
  return {(a.center_row + 0.5) * fr - 0.5, (a.center_col + 0.5) * fc - 0.5, a.r_inner * f, a.r_outer * f};
}

PolarImage to_polar(const SurfaceMatrix& scan, const Annulus& annulus) {
  if (!(annulus.r_inner >= 0.0) || !(annulus.r_outer > annulus.r_inner)) {
    throw ParameterError("to_polar: annulus needs 0 <= r_inner < r_outer");
  }
  std::vector<double> values(kPolarSize, 0.0);
  std::vector<std::uint8_t> mask(kPolarSize, 0);
  const double dr = (annulus.r_outer - annulus.r_inner) / static_cast<double>(kRadialSamples);
  for (std::size_t a = 0; a < kAngularSamples; ++a) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(a) / static_cast<double>(kAngularSamples);
    const double s = std::sin(theta), c = std::cos(theta);
    for (std::size_t r = 0; r < kRadialSamples; ++r) {
      const double rho = annulus.r_inner + (static_cast<double>(r) + 0.5) * dr;
      double v = 0.0;
      if (detail::bilinear_masked(scan.heights(), scan.mask(), scan.rows(), scan.cols(),
                                  annulus.center_row + rho * s, annulus.center_col + rho * c, v)) {
        values[a * kRadialSamples + r] = v;
        mask[a * kRadialSamples + r] = 1;
      }
    }
  }
  return PolarImage(std::move(values), std::move(mask));
}

PolarImage normalize_nonzero(const PolarImage& img) {
  const auto& v = img.values();
  const auto& m = img.mask();
  std::size_t n = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (m[i]) {
      sum += v[i];
      ++n;
    }
  }
  if (n < 2) throw NormalizationError("normalization needs at least 2 valid entries, have " + std::to_string(n));
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (m[i]) ss += (v[i] - mean) * (v[i] - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 0.0) || !std::isfinite(sd)) throw NormalizationError("normalization: valid entries have zero spread");
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (m[i]) out[i] = (v[i] - mean) / sd;
  }
  return PolarImage(std::move(out), m);
}

PreprocessedScan preprocess_scan(const SurfaceMatrix& raw, const PreprocessParams& params) {
  params.validate();
  auto face = crop_to_annulus(isolate_breech_face(level_surface(raw), params));
  auto filtered = bandpass_filter(face.surface, params.low_cut, params.high_cut);
  auto annulus = rescale_annulus(face.annulus, filtered.rows(), filtered.cols(), kCmcImageSide);
  auto image = resize_to_224(filtered);
  auto polar = normalize_nonzero(to_polar(image, annulus));
  return {std::move(image), annulus, std::move(polar), face.hole_found};
}

void write_polar(const PolarImage& img, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kPolarMagic, 4);
    detail::put<std::uint32_t>(out, kPolarVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(kAngularSamples));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(kRadialSamples));
    detail::put_doubles(out, img.values());
    detail::put_mask_bits(out, img.mask());
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

PolarImage read_polar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (detail::read_magic(in) != kPolarMagic) throw ParseError("not a BMKP polar file: " + path.string());
  auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kPolarVersion) throw VersionError("unsupported BMKP version " + std::to_string(version));
  auto a = detail::get<std::uint32_t>(in, "angular size");
  auto r = detail::get<std::uint32_t>(in, "radial size");
  if (a != kAngularSamples || r != kRadialSamples) {
    throw SizeMismatchError("BMKP grid " + std::to_string(a) + "x" + std::to_string(r) + " is not 377x60");
  }
  auto values = detail::get_doubles(in, kPolarSize, "values");
  auto mask = detail::get_mask_bits(in, kPolarSize, "mask");
  return PolarImage(std::move(values), std::move(mask));
}

}  // namespace breechmark::preprocess
