#include "zip_reader.hpp"

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "breechmark/error.hpp"

namespace breechmark::detail {
namespace {

constexpr std::uint32_t kLocalHeaderSig = 0x04034b50;
constexpr std::uint32_t kCentralHeaderSig = 0x02014b50;
constexpr std::uint32_t kEndOfDirSig = 0x06054b50;

std::uint16_t u16(const std::string& b, std::size_t off) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[off]) |
                                    (static_cast<unsigned char>(b[off + 1]) << 8));
}

std::uint32_t u32(const std::string& b, std::size_t off) {
  return static_cast<std::uint32_t>(u16(b, off)) | (static_cast<std::uint32_t>(u16(b, off + 2)) << 16);
}

void need(const std::string& b, std::size_t off, std::size_t n, const std::string& what) {
  if (off + n > b.size()) throw ParseError("zip: truncated " + what);
}

std::string inflate_raw(const char* data, std::size_t size, std::size_t expected) {
  std::string out(expected, '\0');
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw ParseError("zip: inflateInit failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data));
  zs.avail_in = static_cast<uInt>(size);
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  int rc = inflate(&zs, Z_FINISH);
  std::size_t produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != expected) throw ParseError("zip: corrupt deflate stream");
  return out;
}

}  // namespace

std::map<std::string, std::string> read_zip(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 22) throw ParseError("zip: file too small: " + path.string());

  // End-of-central-directory record sits in the last 22 + 65535 bytes.
  std::size_t eocd = std::string::npos;
  std::size_t lowest = bytes.size() > 22 + 65535 ? bytes.size() - 22 - 65535 : 0;
  for (std::size_t pos = bytes.size() - 22 + 1; pos-- > lowest;) {
    if (u32(bytes, pos) == kEndOfDirSig) {
      eocd = pos;
      break;
    }
  }
  if (eocd == std::string::npos) throw ParseError("zip: no end-of-central-directory record");

  std::uint16_t entries = u16(bytes, eocd + 10);
  std::uint32_t dir_offset = u32(bytes, eocd + 16);
  if (dir_offset == 0xffffffffu) throw ParseError("zip: zip64 archives are not supported");

  std::map<std::string, std::string> members;
  std::size_t pos = dir_offset;
  for (std::uint16_t i = 0; i < entries; ++i) {
    need(bytes, pos, 46, "central directory");
    if (u32(bytes, pos) != kCentralHeaderSig) throw ParseError("zip: bad central directory entry");
    std::uint16_t method = u16(bytes, pos + 10);
    std::uint32_t crc = u32(bytes, pos + 16);
    std::uint32_t csize = u32(bytes, pos + 20);
    std::uint32_t usize = u32(bytes, pos + 24);
    std::uint16_t name_len = u16(bytes, pos + 28);
    std::uint16_t extra_len = u16(bytes, pos + 30);
    std::uint16_t comment_len = u16(bytes, pos + 32);
    std::uint32_t local = u32(bytes, pos + 42);
    need(bytes, pos + 46, name_len, "entry name");
    std::string name = bytes.substr(pos + 46, name_len);
    pos += 46 + name_len + extra_len + comment_len;

    if (!name.empty() && name.back() == '/') continue;
    need(bytes, local, 30, "local header");
    if (u32(bytes, local) != kLocalHeaderSig) throw ParseError("zip: bad local header for " + name);
    std::size_t data = local + 30 + u16(bytes, local + 26) + u16(bytes, local + 28);
    need(bytes, data, csize, "member data for " + name);

    std::string content;
    if (method == 0) {
      content = bytes.substr(data, csize);
    } else if (method == 8) {
      content = inflate_raw(bytes.data() + data, csize, usize);
    } else {
      throw ParseError("zip: unsupported compression method " + std::to_string(method) + " for " + name);
    }
    auto actual = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(content.data()), static_cast<uInt>(content.size())));
    if (actual != crc) throw ParseError("zip: CRC mismatch for " + name);
    members.emplace(std::move(name), std::move(content));
  }
  return members;
}

}  // namespace breechmark::detail
