#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace amos::pipeline {

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// Regular file: its SHA-256. Directory: SHA-256 of the sorted
/// "relative-path sha256" lines of every regular file below it.
std::string sha256_tree(const std::filesystem::path& path);

/// Writes to `path.tmp`, fsyncs and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);
std::string read_file(const std::filesystem::path& path);

}  // namespace amos::pipeline
