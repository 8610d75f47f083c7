#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

namespace tci {

/// Writes through a temporary sibling file and renames it into place, so
/// readers never observe a partial file. Throws IoError.
void write_file_atomic(const std::filesystem::path& path,
                       const std::function<void(std::ostream&)>& writer, bool binary = true);

std::string read_file(const std::filesystem::path& path);

}  // namespace tci
