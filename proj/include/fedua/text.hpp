#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace fedua {

/// Shortest decimal text that parses back to exactly `value`.
/// Non-finite values render as "inf", "-inf" or "nan".
std::string format_double(double value);

/// Strict parse of a full token; throws ParseError on trailing garbage.
double parse_double(std::string_view text);

std::vector<std::string_view> split(std::string_view line, char sep);

std::string_view trim(std::string_view text);

}  // namespace fedua
