#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pipefold/errors.hpp"

namespace pipefold {

// Minimal UTF-8 handling for the character-level task: alphabets are code
// points, words are their concatenation.

inline std::string codepoint_to_utf8(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

// Splits a UTF-8 string into per-code-point strings. Throws ValueError on
// malformed input.
inline std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    if (c < 0x80) len = 1;
    else if ((c >> 5) == 0x6) len = 2;
    else if ((c >> 4) == 0xE) len = 3;
    else if ((c >> 3) == 0x1E) len = 4;
    else throw ValueError("utf8_chars: malformed byte at offset " + std::to_string(i));
    if (i + len > s.size())
      throw ValueError("utf8_chars: truncated sequence at offset " + std::to_string(i));
    for (std::size_t k = 1; k < len; ++k)
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2)
        throw ValueError("utf8_chars: malformed continuation at offset " + std::to_string(i + k));
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace pipefold
