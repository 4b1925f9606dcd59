#include "breechmark/surface.hpp"

#include <algorithm>
#include <string>

#include "breechmark/error.hpp"

namespace breechmark {

SurfaceMatrix::SurfaceMatrix(std::size_t rows, std::size_t cols, double resolution)
    : SurfaceMatrix(rows, cols, resolution, std::vector<double>(rows * cols, 0.0),
                    std::vector<std::uint8_t>(rows * cols, 1)) {}

SurfaceMatrix::SurfaceMatrix(std::size_t rows, std::size_t cols, double resolution,
                             std::vector<double> heights, std::vector<std::uint8_t> mask)
    : rows_(rows), cols_(cols), resolution_(resolution), heights_(std::move(heights)),
      mask_(std::move(mask)) {
  if (rows == 0 || cols == 0) throw ParameterError("SurfaceMatrix needs positive rows and cols");
  if (!(resolution > 0.0)) throw ParameterError("SurfaceMatrix resolution must be > 0");
  if (heights_.size() != rows * cols || mask_.size() != rows * cols) {
    throw SizeMismatchError("SurfaceMatrix heights/mask size " + std::to_string(heights_.size()) +
                            "/" + std::to_string(mask_.size()) + " != " + std::to_string(rows) +
                            "x" + std::to_string(cols));
  }
  scrub_invalid();
}

std::size_t SurfaceMatrix::valid_count() const {
  return static_cast<std::size_t>(std::count_if(mask_.begin(), mask_.end(),
                                                [](std::uint8_t m) { return m != 0; }));
}

void SurfaceMatrix::scrub_invalid() {
  for (std::size_t i = 0; i < heights_.size(); ++i) {
    if (!mask_[i]) heights_[i] = 0.0;
  }
}

}  // namespace breechmark
