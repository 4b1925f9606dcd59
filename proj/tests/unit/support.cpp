#include "support.hpp"

#include <zlib.h>

#include <atomic>
#include <cstring>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace testing {

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          ("bmk-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

namespace {

void u16(std::string& s, unsigned v) {
  s += static_cast<char>(v & 0xff);
  s += static_cast<char>((v >> 8) & 0xff);
}
void u32(std::string& s, unsigned long v) {
  for (int i = 0; i < 4; ++i) s += static_cast<char>((v >> (8 * i)) & 0xff);
}

std::string raw_deflate(const std::string& in) {
  z_stream zs{};
  if (deflateInit2(&zs, 6, Z_DEFLATED, -15, 8, Z_DEFAULT_STRATEGY) != Z_OK) throw std::runtime_error("deflateInit2");
  std::string out(deflateBound(&zs, in.size()), '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  if (deflate(&zs, Z_FINISH) != Z_STREAM_END) throw std::runtime_error("deflate");
  out.resize(zs.total_out);
  deflateEnd(&zs);
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_zip(const std::filesystem::path& path, const std::vector<ZipMember>& members) {
  std::string body, central;
  for (const auto& m : members) {
    const unsigned long crc = crc32(0L, reinterpret_cast<const Bytef*>(m.data.data()), static_cast<uInt>(m.data.size()));
    const std::string payload = m.deflate ? raw_deflate(m.data) : m.data;
    const unsigned long offset = body.size();
    const unsigned method = m.deflate ? 8 : 0;
    body += "PK\x03\x04";
    u16(body, 20);
    u16(body, 0);
    u16(body, method);
    u16(body, 0);
    u16(body, 0);
    u32(body, crc);
    u32(body, payload.size());
    u32(body, m.data.size());
    u16(body, static_cast<unsigned>(m.name.size()));
    u16(body, 0);
    body += m.name;
    body += payload;

    central += "PK\x01\x02";
    u16(central, 20);
    u16(central, 20);
    u16(central, 0);
    u16(central, method);
    u16(central, 0);
    u16(central, 0);
    u32(central, crc);
    u32(central, payload.size());
    u32(central, m.data.size());
    u16(central, static_cast<unsigned>(m.name.size()));
    u16(central, 0);
    u16(central, 0);
    u16(central, 0);
    u16(central, 0);
    u32(central, 0);
    u32(central, offset);
    central += m.name;
  }
  std::string eocd = "PK\x05\x06";
  u16(eocd, 0);
  u16(eocd, 0);
  u16(eocd, static_cast<unsigned>(members.size()));
  u16(eocd, static_cast<unsigned>(members.size()));
  u32(eocd, central.size());
  u32(eocd, body.size());
  u16(eocd, 0);
  std::ofstream out(path, std::ios::binary);
  out << body << central << eocd;
}

std::string x3p_main_xml(long size_x, long size_y, double inc_x, double inc_y, const std::string& extra_record1,
                         bool with_size_y) {
  std::string xml = R"(<?xml version="1.0" encoding="UTF-8"?>
<p:ISO5436_2 xmlns:p="http://www.opengps.eu/2008/ISO5436_2">
 <Record1>
  <Revision>ISO5436 - 2000</Revision>
  <FeatureType>SUR</FeatureType>
  <Axes>
   <CX><AxisType>I</AxisType><DataType>D</DataType><Increment>)" +
                    num(inc_x) + R"(</Increment><Offset>0</Offset></CX>
   <CY><AxisType>I</AxisType><DataType>D</DataType><Increment>)" +
                    num(inc_y) + R"(</Increment><Offset>0</Offset></CY>
   <CZ><AxisType>A</AxisType><DataType>D</DataType></CZ>
  </Axes>)" + extra_record1 +
                    R"(
 </Record1>
 <Record3>
  <MatrixDimension><SizeX>)" +
                    std::to_string(size_x) + "</SizeX>" +
                    (with_size_y ? "<SizeY>" + std::to_string(size_y) + "</SizeY>" : std::string()) +
                    R"(<SizeZ>1</SizeZ></MatrixDimension>
  <DataLink><PointDataLink>bindata/data.bin</PointDataLink></DataLink>
 </Record3>
</p:ISO5436_2>
)";
  return xml;
}

std::string le_doubles(const std::vector<double>& values) {
  std::string out;
  for (double v : values) {
    std::uint64_t bits;
    static_assert(sizeof bits == sizeof v);
    std::memcpy(&bits, &v, sizeof v);
    for (int i = 0; i < 8; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xff);
  }
  return out;
}

breechmark::SurfaceMatrix random_surface(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1e-6);
  std::bernoulli_distribution valid(0.8);
  std::vector<double> h(rows * cols);
  std::vector<std::uint8_t> m(rows * cols);
  for (std::size_t i = 0; i < h.size(); ++i) {
    m[i] = valid(rng) ? 1 : 0;
    h[i] = m[i] ? n(rng) : 0.0;
  }
  return breechmark::SurfaceMatrix(rows, cols, 3.125e-6, std::move(h), std::move(m));
}

breechmark::SurfaceMatrix smooth_field(std::size_t side, int radius, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  const std::size_t pad = static_cast<std::size_t>(radius);
  const std::size_t big = side + 2 * pad;
  std::vector<double> w(big * big);
  for (auto& v : w) v = n(rng);
  std::vector<double> h(side * side, 0.0);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      double s = 0.0;
      for (int dr = -radius; dr <= radius; ++dr) {
        for (int dc = -radius; dc <= radius; ++dc) {
          s += w[(r + pad + dr) * big + (c + pad + dc)];
        }
      }
      h[r * side + c] = s;
    }
  }
  double mean = 0.0, ss = 0.0;
  for (double v : h) mean += v;
  mean /= static_cast<double>(h.size());
  for (double v : h) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(h.size()));
  for (auto& v : h) v = (v - mean) / sd * 1e-6;
  return breechmark::SurfaceMatrix(side, side, 12.5e-6, std::move(h), std::vector<std::uint8_t>(side * side, 1));
}

}  // namespace testing
