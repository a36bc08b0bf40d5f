#pragma once

#include <filesystem>
#include <string>

namespace gridshield {

/// Writes `content` to `path` via `path.partial` and a rename, so readers never
/// see a half-written file.
void write_file(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

/// Shortest representation that parses back to the same double.
void append_double(std::string& out, double v);

}  // namespace gridshield
