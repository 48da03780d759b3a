#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sdls {

/// RFC 4180 field quoting (only when needed).
std::string csv_field(std::string_view value);
std::string csv_row(const std::vector<std::string>& fields);

/// Parses a CSV document. Lines starting with '#' outside quotes are skipped.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

}  // namespace sdls
