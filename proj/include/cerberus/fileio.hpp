#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cerberus {

// Throws IoError.
std::string read_text_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Appends one line plus '\n' and flushes.
void append_line(const std::filesystem::path& path, std::string_view line);

// Splits on '\n', dropping a trailing '\r' and lines that are blank.
std::vector<std::string> nonblank_lines(std::string_view content);

}  // namespace cerberus
