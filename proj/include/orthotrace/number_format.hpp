#pragma once

#include <string>
#include <string_view>

namespace orthotrace {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_shortest(double v);

/// Like format_shortest, but padded so at least `min_decimals` digits follow
/// the decimal point ("561000" -> "561000.000" for 3).
std::string format_decimal(double v, int min_decimals);

/// Fixed-point text with exactly `decimals` digits.
std::string format_fixed(double v, int decimals);

/// Strict full-string parse; throws ParseError on trailing garbage.
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

}  // namespace orthotrace
