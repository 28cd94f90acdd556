#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace valcon {

std::string trim(std::string_view s);
std::string ascii_lower(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
// Lowercase, trim and collapse internal whitespace runs to one space.
std::string normalize_name(std::string_view s);

// Quotes a CSV field when it contains a delimiter, quote or newline.
std::string csv_field(std::string_view s);
// Splits one CSV record; handles quoted fields with doubled quotes.
std::vector<std::string> parse_csv_line(std::string_view line);

std::string sha256_hex(std::string_view data);

}  // namespace valcon

namespace valcon {

// FNV-1a; stable across platforms and runs, unlike std::hash.
std::uint64_t stable_hash64(std::string_view s, std::uint64_t seed = 0);

}  // namespace valcon
