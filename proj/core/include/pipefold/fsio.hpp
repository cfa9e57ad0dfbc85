#pragma once

#include <string>

namespace pipefold {

// Reads a whole file; throws IoError when missing or unreadable.
std::string read_file(const std::string& path);

// Writes via a temp file in the same directory followed by a rename, so a
// crash never leaves a half-written artifact behind.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace pipefold
