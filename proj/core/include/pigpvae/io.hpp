#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace pigpvae {

// Shortest decimal form that round-trips a double exactly.
std::string fmt_double(double v);

std::string read_text(const std::filesystem::path& path);

// Writes to a temp file in the same directory, then renames into place.
void write_text_atomic(const std::filesystem::path& path,
                       const std::string& content);

void ensure_dir(const std::filesystem::path& dir);

void log_warn(const std::string& message);
void log_info(const std::string& message);

}  // namespace pigpvae
