#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace cotasks {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

std::string sha256_file_hex(const std::filesystem::path& path);

std::string base64_encode(std::span<const unsigned char> bytes);

std::string read_file(const std::filesystem::path& path);

/// Writes `contents` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace cotasks
