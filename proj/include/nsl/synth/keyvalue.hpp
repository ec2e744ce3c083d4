#pragma once

// Plain "key = value" text: one entry per line, '#' starts a comment, blank
// lines are ignored, keys may repeat.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace nsl::synth {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// FormatError (naming the line) for lines without '=' or with an empty key.
KeyValues parse_key_values(const std::string& text);
std::string read_text_file(const std::string& path);

// Strict conversions; FormatError naming the key on failure.
double to_double(const std::string& key, const std::string& value);
std::uint64_t to_u64(const std::string& key, const std::string& value);
bool to_bool(const std::string& key, const std::string& value);

}  // namespace nsl::synth
