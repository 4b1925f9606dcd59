#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "breechmark/surface.hpp"

namespace breechmark::preprocess {

inline constexpr std::size_t kAngularSamples = 377;
inline constexpr std::size_t kRadialSamples = 60;
inline constexpr std::size_t kCmcImageSide = 224;

/// Ring-shaped breech-face region between the firing-pin hole and the
/// casing edge, in sample coordinates of the image it was measured on.
struct Annulus {
  double center_row = 0.0;
  double center_col = 0.0;
  double r_inner = 0.0;
  double r_outer = 0.0;
};

/// Breech face resampled on a 377 (angle) x 60 (radius) grid, angle-major.
///
/// Validity is tracked separately from the values; zeros are only
/// materialized for invalid entries so a valid sample that normalizes to
/// exactly 0.0 stays valid.
class PolarImage {
 public:
  PolarImage();
  PolarImage(std::vector<double> values, std::vector<std::uint8_t> mask);
  /// Treats every nonzero entry as valid.
  static PolarImage from_values(std::vector<double> values);

  static constexpr std::size_t angular() { return kAngularSamples; }
  static constexpr std::size_t radial() { return kRadialSamples; }

  double value(std::size_t a, std::size_t r) const { return values_[a * kRadialSamples + r]; }
  bool valid(std::size_t a, std::size_t r) const { return mask_[a * kRadialSamples + r] != 0; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }
  std::size_t valid_count() const;

  /// Rolls the angular axis: out(a) = in((a - shift) mod 377).
  PolarImage shifted(std::ptrdiff_t shift) const;

  friend bool operator==(const PolarImage&, const PolarImage&) = default;

 private:
  std::vector<double> values_;
  std::vector<std::uint8_t> mask_;
};

struct PreprocessParams {
  double low_cut = 250e-6;   ///< high-pass cutoff wavelength, meters
  double high_cut = 16e-6;   ///< low-pass cutoff wavelength, meters
  double coverage = 0.95;    ///< ring coverage that counts as breech face
  double min_coverage = 0.5; ///< below this nowhere, isolation fails
  double full_disk_inner_ratio = 0.25;

  void validate() const;
};

/// Subtracts the least-squares plane fitted over valid samples.
SurfaceMatrix level_surface(const SurfaceMatrix& scan);

struct BreechFace {
  SurfaceMatrix surface;
  Annulus annulus;
  bool hole_found = true;
};

/// Centre from the mask centroid, radii from per-ring valid coverage;
/// everything outside the annulus is masked out.
BreechFace isolate_breech_face(const SurfaceMatrix& scan, const PreprocessParams& params = {});

/// Square crop centred on the annulus with side max(2*ceil(r_outer)+2, 224).
/// Samples beyond the source image come back invalid.
BreechFace crop_to_annulus(const BreechFace& face);

/// Gaussian (ISO 16610-61 weighting) high-pass at `low_cut` followed by a
/// Gaussian low-pass at `high_cut`, both as normalized convolutions over
/// valid samples. Cutoffs are wavelengths in meters.
SurfaceMatrix bandpass_filter(const SurfaceMatrix& scan, double low_cut, double high_cut);

/// Mask-aware area-average downsampling to side x side. An output sample is
/// invalid iff less than half of its source footprint is valid.
SurfaceMatrix resize_area(const SurfaceMatrix& scan, std::size_t side);
inline SurfaceMatrix resize_to_224(const SurfaceMatrix& scan) { return resize_area(scan, kCmcImageSide); }

/// Maps an annulus measured on a rows x cols image onto the resized grid.
Annulus rescale_annulus(const Annulus& a, std::size_t rows, std::size_t cols, std::size_t side);

/// Bilinear resampling onto the polar grid. Sample (a, r) sits at angle
/// 2*pi*a/377 from the +col axis toward +row, radius
/// r_inner + (r + 0.5) * (r_outer - r_inner) / 60. Not normalized.
PolarImage to_polar(const SurfaceMatrix& scan, const Annulus& annulus);

/// Maps valid entries to zero mean and unit population std.
PolarImage normalize_nonzero(const PolarImage& img);

struct PreprocessedScan {
  SurfaceMatrix cmc_image;  ///< 224 x 224, breech face only
  Annulus annulus;          ///< in cmc_image coordinates
  PolarImage polar;         ///< normalized network input
  bool hole_found = true;
};

/// level -> isolate -> crop -> band-pass -> 224 -> polar -> normalize.
PreprocessedScan preprocess_scan(const SurfaceMatrix& raw, const PreprocessParams& params = {});

/// Binary polar format, magic "BMKP".
void write_polar(const PolarImage& img, const std::filesystem::path& path);
PolarImage read_polar(const std::filesystem::path& path);

inline constexpr std::uint32_t kPolarVersion = 1;

}  // namespace breechmark::preprocess
