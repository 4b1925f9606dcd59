#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "breechmark/error.hpp"

namespace breechmark::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written by direct little-endian copies");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
  return value;
}

inline void put_bytes(std::ostream& out, const std::string& s) {
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_bytes(std::istream& in, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
  return s;
}

inline void put_doubles(std::ostream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> get_doubles(std::istream& in, std::size_t n, const char* what) {
  std::vector<double> v(n);
  if (n > 0 && !in.read(reinterpret_cast<char*>(v.data()),
                        static_cast<std::streamsize>(n * sizeof(double)))) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
  return v;
}

/// Mask bits packed LSB-first, ceil(n/8) bytes.
inline void put_mask_bits(std::ostream& out, const std::vector<std::uint8_t>& mask) {
  std::vector<char> packed((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) packed[i / 8] = static_cast<char>(packed[i / 8] | (1 << (i % 8)));
  }
  out.write(packed.data(), static_cast<std::streamsize>(packed.size()));
}

inline std::vector<std::uint8_t> get_mask_bits(std::istream& in, std::size_t n, const char* what) {
  std::vector<char> packed((n + 7) / 8);
  if (!packed.empty() && !in.read(packed.data(), static_cast<std::streamsize>(packed.size()))) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
  std::vector<std::uint8_t> mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = (static_cast<unsigned char>(packed[i / 8]) >> (i % 8)) & 1u;
  }
  return mask;
}

inline std::string read_magic(std::istream& in) { return get_bytes(in, 4, "magic"); }

}  // namespace breechmark::detail
