#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace breechmark {

/// Raster of surface heights (meters) with a validity mask.
///
/// The mask is authoritative: heights under an invalid sample carry no
/// meaning and are kept at 0.0 so kernels never see NaN.
class SurfaceMatrix {
 public:
  SurfaceMatrix() = default;
  /// All samples valid, heights zero.
  SurfaceMatrix(std::size_t rows, std::size_t cols, double resolution);
  SurfaceMatrix(std::size_t rows, std::size_t cols, double resolution,
                std::vector<double> heights, std::vector<std::uint8_t> mask);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return rows_ * cols_; }
  double resolution() const { return resolution_; }
  bool empty() const { return size() == 0; }

  double height(std::size_t r, std::size_t c) const { return heights_[r * cols_ + c]; }
  double& height(std::size_t r, std::size_t c) { return heights_[r * cols_ + c]; }
  bool valid(std::size_t r, std::size_t c) const { return mask_[r * cols_ + c] != 0; }
  void set_valid(std::size_t r, std::size_t c, bool v) { mask_[r * cols_ + c] = v ? 1 : 0; }

  const std::vector<double>& heights() const { return heights_; }
  std::vector<double>& heights() { return heights_; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }
  std::vector<std::uint8_t>& mask() { return mask_; }

  std::size_t valid_count() const;

  /// Zeroes heights under invalid samples.
  void scrub_invalid();

  friend bool operator==(const SurfaceMatrix&, const SurfaceMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  double resolution_ = 1.0;
  std::vector<double> heights_;
  std::vector<std::uint8_t> mask_;
};

/// One scan together with its firearm / casing labels.
struct ScanRecord {
  SurfaceMatrix surface;
  std::string gun_id;
  std::string casing_id;
  std::string source_path;

  friend bool operator==(const ScanRecord&, const ScanRecord&) = default;
};

}  // namespace breechmark
