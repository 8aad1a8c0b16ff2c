#pragma once

// Small helpers shared by the CSV readers and writers. Doubles are written in
// shortest round-trip form so that every file reloads to identical values.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace calib::csv {

std::string format_double(double v);

/// Parses a full field as a double; throws on trailing garbage.
double parse_double(std::string_view field, std::string_view context);

std::vector<std::string> split(std::string_view line, char sep = ',');

std::string trim(std::string_view s);

/// Reads a whole text file; throws naming the path when it cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename, so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

} // namespace calib::csv
