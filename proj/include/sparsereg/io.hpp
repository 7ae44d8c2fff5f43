#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>

namespace sparsereg::io {

/// Appends v as 8 little-endian bytes.
void put_f64(std::string& out, double v);
double get_f64(const unsigned char* p);

/// Writes to "<path>.tmp" and renames, so readers never see a half-written file.
void write_atomically(const std::filesystem::path& path, const std::string& bytes);
/// Whole file as bytes; ParseError when it cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// 1-based line and column of a byte offset.
std::pair<std::size_t, std::size_t> line_and_column(const std::string& text, std::size_t byte);

/// Shortest round-trip decimal form; NaN as "nan".
std::string format_double(double v);

}  // namespace sparsereg::io
