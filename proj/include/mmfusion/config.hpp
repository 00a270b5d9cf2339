#pragma once

// Flat `key = value` text files. '#' starts a comment; blank lines are
// ignored; a repeated key keeps the last value.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace mmf {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text, const std::string& source = "<string>");
KeyValues read_key_value_file(const std::filesystem::path& path);

// Typed field parsers; the key is only used in error messages.
double parse_real(const std::string& key, const std::string& value);
std::size_t parse_size(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

}  // namespace mmf
