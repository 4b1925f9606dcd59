#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace breechmark::detail {

/// Reads every member of a (non-zip64) zip archive. Supports the stored and
/// deflate methods, which is all x3p writers emit.
std::map<std::string, std::string> read_zip(const std::filesystem::path& path);

}  // namespace breechmark::detail
