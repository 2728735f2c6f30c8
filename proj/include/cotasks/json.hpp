#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cotasks {

/// Insertion-ordered JSON; every file this project writes keeps a fixed field order.
using Json = nlohmann::ordered_json;

/// One JSON value per non-empty line. Throws ParseError with "line N" on bad input.
std::vector<Json> read_jsonl(const std::filesystem::path& path);

/// Serializes `rows` one per line (compact form, trailing newline after each).
std::string to_jsonl(const std::vector<Json>& rows);

Json read_json_file(const std::filesystem::path& path);

}  // namespace cotasks
