#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace manner::io {

std::vector<std::string_view> split(std::string_view line, char sep);
std::string_view trim(std::string_view s);

/// Strict parse: the whole field must be a number. Throws DataError with
/// `where` in the message on failure.
double parse_double(std::string_view field, const std::string& where);
long long parse_int(std::string_view field, const std::string& where);

/// Shortest-safe representation: 17 significant digits, so reading the text
/// back gives the identical double.
std::string format_double(double v);

/// Reads a whole file; throws DataError when it cannot be opened.
std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Writes `content` to a temporary sibling then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::string location(const std::filesystem::path& path, std::size_t line_no);

}  // namespace manner::io
