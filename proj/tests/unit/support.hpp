#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "breechmark/surface.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct ZipMember {
  std::string name;
  std::string data;
  bool deflate = false;
};

/// Minimal zip writer (local headers, central directory, end record).
void write_zip(const std::filesystem::path& path, const std::vector<ZipMember>& members);

std::string x3p_main_xml(long size_x, long size_y, double inc_x, double inc_y, const std::string& extra_record1 = "",
                         bool with_size_y = true);

/// Little-endian float64 bytes, byte by byte (no memcpy of the whole array).
std::string le_doubles(const std::vector<double>& values);

breechmark::SurfaceMatrix random_surface(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

/// Smooth, fully valid random field: white noise blurred with a box of
/// radius `radius`, then standardized.
breechmark::SurfaceMatrix smooth_field(std::size_t side, int radius, std::uint64_t seed);

}  // namespace testing
