#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "breechmark/surface.hpp"

namespace breechmark::io {

/// Reads an ISO 5436-2 (x3p) container: a zip archive with `main.xml` and a
/// float64 little-endian row-major raster. NaN marks invalid samples.
/// Only isotropic rasters are accepted (X/Y increments within 1%).
///
/// The returned record has empty gun/casing labels; labels come from a
/// manifest.
ScanRecord read_x3p(const std::filesystem::path& path);

/// Versioned binary scan format, magic "BMK1". Lossless for heights, mask,
/// resolution and labels.
void write_internal(const ScanRecord& scan, const std::filesystem::path& path);
ScanRecord read_internal(const std::filesystem::path& path);

/// Loads a scan from either format, chosen by file magic.
ScanRecord read_scan(const std::filesystem::path& path);

inline constexpr std::uint32_t kInternalVersion = 1;

struct ManifestEntry {
  std::filesystem::path path;
  std::string gun_id;
  std::string casing_id;
};

struct DatasetManifest {
  std::string name;
  std::vector<ManifestEntry> entries;
};

/// CSV with header `path,gun_id,casing_id`. Relative paths are resolved
/// against the manifest's directory. Rejects duplicate (gun, casing) pairs.
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Writes paths relative to the manifest's directory when possible.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Loads every scan in the manifest and attaches its labels. Fails listing
/// all unresolvable paths at once.
std::vector<ScanRecord> load_dataset(const DatasetManifest& manifest);

struct SynthParams {
  int guns = 12;
  int casings_per_gun = 12;
  int grid_size = 448;
  double signature_smoothness = 2.0;  ///< Gaussian sigma, samples
  double noise_sigma = 0.3;           ///< relative to signature std
  double max_rotation = 15.0;         ///< degrees
  double max_translation = 6.0;       ///< samples
  double resolution = 6.25e-6;        ///< meters per sample
  std::uint64_t seed = 1;

  void validate() const;
};

/// Deterministic stand-in for a breech-face dataset. Each gun owns a smooth
/// random signature on an annulus; each casing is that signature rotated,
/// translated, tilted and perturbed by fresh noise. Output order is
/// gun-major. Pure function of `params`.
std::vector<ScanRecord> generate_synthetic_dataset(const SynthParams& params);

}  // namespace breechmark::io
