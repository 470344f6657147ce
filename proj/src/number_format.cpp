#include "orthotrace/number_format.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <system_error>

#include "orthotrace/error.hpp"

namespace orthotrace {

std::string format_shortest(double v)
{
    if (std::isnan(v))
        return "nan";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc())
        throw Error("number formatting failed");
    std::string s(buf, end);
    if (s == "-0")
        s = "0";
    return s;
}

std::string format_decimal(double v, int min_decimals)
{
    std::string s = format_shortest(v);
    if (!std::isfinite(v))
        return s;
    // Exponent notation has no natural place for padding; fall back to fixed
    // with enough digits to round trip.
    if (s.find_first_of("eE") != std::string::npos) {
        char buf[512];
        std::snprintf(buf, sizeof(buf), "%.17f", v);
        s = buf;
        while (!s.empty() && s.back() == '0')
            s.pop_back();
    }
    auto dot = s.find('.');
    int decimals = 0;
    if (dot == std::string::npos) {
        if (min_decimals > 0)
            s += '.';
    } else {
        decimals = static_cast<int>(s.size() - dot - 1);
    }
    for (; decimals < min_decimals; ++decimals)
        s += '0';
    return s;
}

std::string format_fixed(double v, int decimals)
{
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

namespace {

std::string_view trim(std::string_view t)
{
    while (!t.empty() && (t.front() == ' ' || t.front() == '\t' || t.front() == '\r'))
        t.remove_prefix(1);
    while (!t.empty() && (t.back() == ' ' || t.back() == '\t' || t.back() == '\r'))
        t.remove_suffix(1);
    return t;
}

}  // namespace

double parse_double(std::string_view text)
{
    auto t = trim(text);
    if (!t.empty() && t.front() == '+')
        t.remove_prefix(1);
    double v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
        throw ParseError("not a number: '" + std::string(text) + "'");
    return v;
}

long long parse_int(std::string_view text)
{
    auto t = trim(text);
    if (!t.empty() && t.front() == '+')
        t.remove_prefix(1);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
        throw ParseError("not an integer: '" + std::string(text) + "'");
    return v;
}

}  // namespace orthotrace
