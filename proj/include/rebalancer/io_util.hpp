#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace rebalancer {

// Shortest-precision-17 rendering; parse_double(format_double(x)) == x bitwise.
std::string format_double(double value, int significant_digits = 17);

bool try_parse_double(std::string_view text, double& out);

std::string read_text_file(const std::filesystem::path& path);

// Writes to "<path>.tmp" then renames, so partially written artifacts never
// appear under the final name.
void write_text_atomic(const std::filesystem::path& path, std::string_view content);

// Splits one CSV line on `delim`, trimming surrounding blanks and '\r'.
std::vector<std::string> split_csv_line(std::string_view line, char delim = ',');

// Splits text into lines, dropping a trailing empty line.
std::vector<std::string> split_lines(std::string_view text);

}  // namespace rebalancer
