#include "breechmark/scan_io.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "csv.hpp"
#include "breechmark/error.hpp"
#include "zip_reader.hpp"

namespace breechmark::io {

using detail::csv_field;
using detail::split_csv_line;
namespace {

namespace pt = boost::property_tree;

constexpr char kScanMagic[] = "BMK1";

std::string local_name(const std::string& tag) {
  auto colon = tag.find(':');
  return colon == std::string::npos ? tag : tag.substr(colon + 1);
}

const pt::ptree* child(const pt::ptree& node, const std::string& name) {
  for (const auto& [key, sub] : node) {
    if (local_name(key) == name) return &sub;
  }
  return nullptr;
}

const pt::ptree* find_path(const pt::ptree& root, std::initializer_list<const char*> path) {
  const pt::ptree* node = &root;
  for (const char* part : path) {
    node = child(*node, part);
    if (node == nullptr) return nullptr;
  }
  return node;
}

std::string path_string(std::initializer_list<const char*> path) {
  std::string s;
  for (const char* p : path) {
    if (!s.empty()) s += '/';
    s += p;
  }
  return s;
}

std::string require_text(const pt::ptree& root, std::initializer_list<const char*> path) {
  const pt::ptree* node = find_path(root, path);
  if (node == nullptr) throw ParseError("x3p: missing field " + path_string(path));
  std::string text = node->get_value<std::string>();
  auto first = text.find_first_not_of(" \t\r\n");
  auto last = text.find_last_not_of(" \t\r\n");
  if (first == std::string::npos) throw ParseError("x3p: empty field " + path_string(path));
  return text.substr(first, last - first + 1);
}

std::optional<std::string> optional_text(const pt::ptree& root, std::initializer_list<const char*> path) {
  if (find_path(root, path) == nullptr) return std::nullopt;
  return require_text(root, path);
}

template <typename T>
T require_number(const pt::ptree& root, std::initializer_list<const char*> path) {
  std::string text = require_text(root, path);
  std::istringstream ss(text);
  T value{};
  if (!(ss >> value)) throw ParseError("x3p: field " + path_string(path) + " is not numeric: " + text);
  return value;
}

}  // namespace

ScanRecord read_x3p(const std::filesystem::path& path) {
  auto members = detail::read_zip(path);
  auto xml_it = members.find("main.xml");
  if (xml_it == members.end()) throw ParseError("x3p: container has no main.xml: " + path.string());

  pt::ptree doc;
  try {
    std::istringstream xml(xml_it->second);
    pt::read_xml(xml, doc);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError(std::string("x3p: malformed main.xml: ") + e.what());
  }
  if (doc.empty()) throw ParseError("x3p: main.xml has no root element");
  const pt::ptree& root = doc.begin()->second;

  auto size_x = require_number<long long>(root, {"Record3", "MatrixDimension", "SizeX"});
  auto size_y = require_number<long long>(root, {"Record3", "MatrixDimension", "SizeY"});
  auto inc_x = require_number<double>(root, {"Record1", "Axes", "CX", "Increment"});
  auto inc_y = require_number<double>(root, {"Record1", "Axes", "CY", "Increment"});
  if (size_x <= 0 || size_y <= 0) throw ParseError("x3p: non-positive matrix dimension");
  if (!(inc_x > 0.0) || !(inc_y > 0.0)) throw ParseError("x3p: non-positive axis increment");
  if (std::abs(inc_x - inc_y) > 0.01 * std::max(inc_x, inc_y)) {
    throw UnsupportedGeometryError("x3p: anisotropic increments CX=" + std::to_string(inc_x) +
                                   " CY=" + std::to_string(inc_y));
  }
  for (const char* axis : {"CX", "CY"}) {
    if (auto type = optional_text(root, {"Record1", "Axes", axis, "AxisType"}); type && *type != "I") {
      throw UnsupportedGeometryError(std::string("x3p: axis ") + axis + " is not incremental");
    }
  }
  if (auto type = optional_text(root, {"Record1", "Axes", "CZ", "DataType"}); type && *type != "D") {
    throw UnsupportedGeometryError("x3p: only float64 rasters are supported, got DataType " + *type);
  }
  if (auto size_z = optional_text(root, {"Record3", "MatrixDimension", "SizeZ"}); size_z && *size_z != "1") {
    throw UnsupportedGeometryError("x3p: multi-layer rasters are not supported");
  }

  std::string link = optional_text(root, {"Record3", "DataLink", "PointDataLink"}).value_or("bindata/data.bin");
  auto bin_it = members.find(link);
  if (bin_it == members.end()) throw ParseError("x3p: container has no " + link);
  const std::string& raster = bin_it->second;

  const auto rows = static_cast<std::size_t>(size_y);
  const auto cols = static_cast<std::size_t>(size_x);
  const std::size_t n = rows * cols;
  if (raster.size() != 8 * n) {
    throw SizeMismatchError("x3p: raster holds " + std::to_string(raster.size()) + " bytes, expected " +
                            std::to_string(8 * n) + " for SizeX=" + std::to_string(size_x) +
                            " SizeY=" + std::to_string(size_y));
  }

  std::vector<double> heights(n);
  std::memcpy(heights.data(), raster.data(), raster.size());
  std::vector<std::uint8_t> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = std::isnan(heights[i]) ? 0 : 1;

  ScanRecord rec;
  rec.surface = SurfaceMatrix(rows, cols, inc_x, std::move(heights), std::move(mask));
  rec.source_path = path.string();
  return rec;
}

void write_internal(const ScanRecord& scan, const std::filesystem::path& path) {
  const SurfaceMatrix& s = scan.surface;
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kScanMagic, 4);
    detail::put<std::uint32_t>(out, kInternalVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.rows()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.cols()));
    detail::put<double>(out, s.resolution());
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(scan.gun_id.size()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(scan.casing_id.size()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(scan.source_path.size()));
    detail::put_bytes(out, scan.gun_id);
    detail::put_bytes(out, scan.casing_id);
    detail::put_bytes(out, scan.source_path);
    detail::put_doubles(out, s.heights());
    detail::put_mask_bits(out, s.mask());
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ScanRecord read_internal(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (detail::read_magic(in) != kScanMagic) throw ParseError("not a BMK1 scan file: " + path.string());
  auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kInternalVersion) {
    throw VersionError("unsupported BMK1 version " + std::to_string(version) + " in " + path.string());
  }
  auto rows = detail::get<std::uint32_t>(in, "rows");
  auto cols = detail::get<std::uint32_t>(in, "cols");
  auto resolution = detail::get<double>(in, "resolution");
  auto gun_len = detail::get<std::uint32_t>(in, "label length");
  auto casing_len = detail::get<std::uint32_t>(in, "label length");
  auto source_len = detail::get<std::uint32_t>(in, "label length");
  ScanRecord rec;
  rec.gun_id = detail::get_bytes(in, gun_len, "gun_id");
  rec.casing_id = detail::get_bytes(in, casing_len, "casing_id");
  rec.source_path = detail::get_bytes(in, source_len, "source_path");
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  auto heights = detail::get_doubles(in, n, "heights");
  auto mask = detail::get_mask_bits(in, n, "mask");
  rec.surface = SurfaceMatrix(rows, cols, resolution, std::move(heights), std::move(mask));
  return rec;
}

ScanRecord read_scan(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in && std::memcmp(magic, kScanMagic, 4) == 0) return read_internal(path);
  if (in && magic[0] == 'P' && magic[1] == 'K') return read_x3p(path);
  throw ParseError("unrecognized scan file format: " + path.string());
}


DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("manifest is empty: " + path.string());
  auto header = split_csv_line(line);
  if (header != std::vector<std::string>{"path", "gun_id", "casing_id"}) {
    throw ParseError("manifest header must be `path,gun_id,casing_id`: " + path.string());
  }
  DatasetManifest manifest;
  manifest.name = path.stem().string();
  std::set<std::pair<std::string, std::string>> seen;
  const auto base = path.parent_path();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() != 3) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": expected 3 fields");
    }
    if (f[1].empty() || f[2].empty()) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": empty gun_id or casing_id");
    }
    if (!seen.emplace(f[1], f[2]).second) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": duplicate (gun_id, casing_id) (" +
                       f[1] + ", " + f[2] + ")");
    }
    std::filesystem::path p(f[0]);
    if (p.is_relative()) p = base / p;
    manifest.entries.push_back({p, f[1], f[2]});
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "path,gun_id,casing_id\n";
  const auto base = std::filesystem::absolute(path).parent_path();
  for (const auto& e : manifest.entries) {
    std::filesystem::path p = e.path;
    auto abs = std::filesystem::absolute(p);
    auto rel = abs.lexically_relative(base);
    if (!rel.empty() && rel.native().rfind("..", 0) != 0) p = rel;
    out << csv_field(p.generic_string()) << ',' << csv_field(e.gun_id) << ',' << csv_field(e.casing_id)
        << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<ScanRecord> load_dataset(const DatasetManifest& manifest) {
  std::vector<std::string> missing;
  for (const auto& e : manifest.entries) {
    if (!std::filesystem::exists(e.path)) missing.push_back(e.path.string());
  }
  if (!missing.empty()) {
    std::string msg = "manifest '" + manifest.name + "' references " + std::to_string(missing.size()) +
                      " missing file(s):";
    for (const auto& m : missing) msg += "\n  " + m;
    throw IoError(msg);
  }
  std::vector<ScanRecord> records;
  records.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    ScanRecord rec = read_scan(e.path);
    rec.gun_id = e.gun_id;
    rec.casing_id = e.casing_id;
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace breechmark::io
