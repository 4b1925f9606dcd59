#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "breechmark/error.hpp"
#include "breechmark/rng.hpp"
#include "breechmark/scan_io.hpp"
#include "filters.hpp"

namespace breechmark::io {
namespace {

// Annulus geometry as fractions of the grid side.
constexpr double kOuterRadiusFrac = 0.42;
constexpr double kInnerRadiusFrac = 0.15;
// Physical scale of the signature, meters.
constexpr double kSignatureAmplitude = 1e-6;
constexpr double kMaxTiltPerSample = 2e-8;
constexpr double kMaxOffset = 5e-6;

std::string label(char prefix, int index, int count) {
  std::string digits = std::to_string(count);
  std::string n = std::to_string(index + 1);
  return std::string(1, prefix) + std::string(digits.size() - std::min(digits.size(), n.size()), '0') + n;
}

std::vector<double> make_signature(std::size_t n, double smoothness, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> white(n * n);
  for (double& v : white) v = gauss(rng);
  std::vector<std::uint8_t> all(n * n, 1);
  auto field = smoothness > 0.0 ? detail::masked_gaussian(white, all, n, n, smoothness) : white;
  double mean = 0.0;
  for (double v : field) mean += v;
  mean /= static_cast<double>(field.size());
  double var = 0.0;
  for (double v : field) var += (v - mean) * (v - mean);
  double sd = std::sqrt(var / static_cast<double>(field.size()));
  for (double& v : field) v = (v - mean) / sd;
  return field;
}

}  // namespace

void SynthParams::validate() const {
  if (guns < 1) throw ParameterError("synth: guns must be >= 1");
  if (casings_per_gun < 2) throw ParameterError("synth: casings_per_gun must be >= 2");
  if (grid_size < 32) throw ParameterError("synth: grid_size must be >= 32");
  if (signature_smoothness < 0.0) throw ParameterError("synth: signature_smoothness must be >= 0");
  if (noise_sigma < 0.0) throw ParameterError("synth: noise_sigma must be >= 0");
  if (max_rotation < 0.0 || max_rotation > 180.0) throw ParameterError("synth: max_rotation must be in [0, 180]");
  if (max_translation < 0.0) throw ParameterError("synth: max_translation must be >= 0");
  if (max_translation + kOuterRadiusFrac * grid_size >= 0.5 * grid_size - 1.0) {
    throw ParameterError("synth: max_translation pushes the annulus out of the grid");
  }
  if (!(resolution > 0.0)) throw ParameterError("synth: resolution must be > 0");
}

std::vector<ScanRecord> generate_synthetic_dataset(const SynthParams& params) {
  params.validate();
  const auto n = static_cast<std::size_t>(params.grid_size);
  const double center = 0.5 * static_cast<double>(n - 1);
  const double r_out = kOuterRadiusFrac * static_cast<double>(n);
  const double r_in = kInnerRadiusFrac * static_cast<double>(n);
  std::vector<std::uint8_t> all_valid(n * n, 1);

  std::vector<ScanRecord> records;
  records.reserve(static_cast<std::size_t>(params.guns * params.casings_per_gun));
  for (int g = 0; g < params.guns; ++g) {
    std::mt19937_64 gun_rng(derive_seed(params.seed, {0x5167ULL, static_cast<std::uint64_t>(g)}));
    auto signature = make_signature(n, params.signature_smoothness, gun_rng);

    for (int k = 0; k < params.casings_per_gun; ++k) {
      std::mt19937_64 rng(derive_seed(params.seed, {0xca5eULL, static_cast<std::uint64_t>(g),
                                                    static_cast<std::uint64_t>(k)}));
      std::uniform_real_distribution<double> unit(-1.0, 1.0);
      std::normal_distribution<double> gauss(0.0, 1.0);
      const double angle = unit(rng) * params.max_rotation * std::numbers::pi / 180.0;
      const double shift_r = unit(rng) * params.max_translation;
      const double shift_c = unit(rng) * params.max_translation;
      const double offset = unit(rng) * kMaxOffset;
      const double tilt_r = unit(rng) * kMaxTiltPerSample;
      const double tilt_c = unit(rng) * kMaxTiltPerSample;
      const double cos_a = std::cos(angle), sin_a = std::sin(angle);

      std::vector<double> heights(n * n, 0.0);
      std::vector<std::uint8_t> mask(n * n, 0);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
          const std::size_t idx = r * n + c;
          // Drawn for every sample so the stream layout is independent of the mask.
          const double noise = gauss(rng);
          const double qr = static_cast<double>(r) - shift_r - center;
          const double qc = static_cast<double>(c) - shift_c - center;
          const double radius = std::hypot(qr, qc);
          if (radius < r_in || radius > r_out) continue;
          // Casing-local coordinates rotated back into the signature frame.
          const double sr = center + cos_a * qr - sin_a * qc;
          const double sc = center + sin_a * qr + cos_a * qc;
          double sig = 0.0;
          if (!detail::bilinear_masked(signature, all_valid, n, n, sr, sc, sig)) continue;
          mask[idx] = 1;
          heights[idx] = kSignatureAmplitude * (sig + params.noise_sigma * noise) + offset +
                         tilt_r * static_cast<double>(r) + tilt_c * static_cast<double>(c);
        }
      }
      ScanRecord rec;
      rec.surface = SurfaceMatrix(n, n, params.resolution, std::move(heights), std::move(mask));
      rec.gun_id = label('G', g, params.guns);
      rec.casing_id = rec.gun_id + "-" + label('C', k, params.casings_per_gun);
      rec.source_path = "synthetic:" + std::to_string(params.seed) + "/" + rec.gun_id + "/" + rec.casing_id;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

}  // namespace breechmark::io
