#include "orthotrace/formats/geo_offset.hpp"

#include <sstream>
#include <vector>

#include "orthotrace/error.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/number_format.hpp"

namespace orthotrace::formats {

GeoOffset parse_geo_offset(const std::string& text)
{
    std::vector<std::pair<int, std::string>> lines;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.find_first_not_of(" \t") != std::string::npos)
            lines.emplace_back(lineno, line);
    }
    if (lines.size() < 2)
        throw ParseError("geo offset: expected a projection line and an offset line");

    GeoOffset g;
    Crs crs;
    try {
        crs = Crs::parse(lines[0].second);
    } catch (const ParseError& e) {
        throw ParseError(std::string("geo offset: ") + e.what(), lines[0].first);
    }
    if (crs.kind != Crs::Kind::Utm)
        throw ParseError("geo offset: projection must be a UTM zone", lines[0].first);
    g.zone = crs.zone;
    g.hemisphere = crs.hemisphere;

    std::istringstream nums(lines[1].second);
    std::string a, b, extra;
    if (!(nums >> a >> b) || (nums >> extra))
        throw ParseError("geo offset: expected two numbers", lines[1].first);
    try {
        g.offset_x = parse_double(a);
        g.offset_y = parse_double(b);
    } catch (const ParseError&) {
        throw ParseError("geo offset: malformed number", lines[1].first);
    }
    if (lines.size() > 2)
        throw ParseError("geo offset: unexpected trailing content", lines[2].first);
    return g;
}

GeoOffset read_geo_offset(const std::string& path)
{
    try {
        return parse_geo_offset(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void write_geo_offset(const GeoOffset& g, const std::string& path)
{
    const std::string hemi = g.hemisphere == Hemisphere::North ? "N" : "S";
    write_text_file(path, "WGS84 UTM " + std::to_string(g.zone) + hemi + "\n" + format_decimal(g.offset_x, 1) + " "
                              + format_decimal(g.offset_y, 1) + "\n");
}

}  // namespace orthotrace::formats
