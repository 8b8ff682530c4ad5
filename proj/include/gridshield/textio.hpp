#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace gridshield::textio {

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);

/// Strict decimal parse (optional exponent); throws MalformedDocument.
double parse_double(std::string_view token, std::string_view context);
int parse_int(std::string_view token, std::string_view context);

std::vector<std::string_view> split_ws(std::string_view line);
std::string_view trim(std::string_view s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

/// FNV-1a, 64 bit, hex encoded. Stable across platforms and runs.
std::string fnv1a_hex(std::string_view data);

}  // namespace gridshield::textio
