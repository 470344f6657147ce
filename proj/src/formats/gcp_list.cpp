#include "orthotrace/formats/gcp_list.hpp"

#include <cmath>
#include <iterator>
#include <sstream>

#include "orthotrace/error.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/number_format.hpp"

namespace orthotrace::formats {

void check_gcp_bounds(const std::vector<GcpEntry>& entries, const ImageDims& dims)
{
    for (const auto& e : entries) {
        if (!std::isfinite(e.im_x) || !std::isfinite(e.im_y) || !std::isfinite(e.geo_x) || !std::isfinite(e.geo_y)
            || !std::isfinite(e.geo_z))
            throw InvalidArgument("GCP mark in " + e.image_name + " has non-finite coordinates");
        if (e.im_x < 0 || e.im_y < 0)
            throw InvalidArgument("GCP mark (" + format_shortest(e.im_x) + ", " + format_shortest(e.im_y) + ") lies outside "
                                  + e.image_name);
        auto it = dims.find(e.image_name);
        if (it != dims.end() && (e.im_x > it->second.first || e.im_y > it->second.second))
            throw InvalidArgument("GCP mark (" + format_shortest(e.im_x) + ", " + format_shortest(e.im_y) + ") lies outside "
                                  + e.image_name + " (" + std::to_string(it->second.first) + "x"
                                  + std::to_string(it->second.second) + ")");
    }
}

std::string format_gcp_list(const std::vector<GcpEntry>& entries, const std::string& proj_line)
{
    if (proj_line.empty() || proj_line.find('\n') != std::string::npos)
        throw InvalidArgument("gcp_list projection must be a single non-empty line");
    std::string out = proj_line + "\n";
    for (const auto& e : entries) {
        if (e.image_name.empty() || e.image_name.find_first_of(" \t\r\n") != std::string::npos)
            throw InvalidArgument("gcp_list image names must be non-empty and contain no whitespace");
        if (e.gcp_id.find_first_of(" \t\r\n") != std::string::npos)
            throw InvalidArgument("gcp_list point names must contain no whitespace");
        out += format_decimal(e.geo_x, 3) + " " + format_decimal(e.geo_y, 3) + " " + format_decimal(e.geo_z, 3) + " "
               + format_decimal(e.im_x, 3) + " " + format_decimal(e.im_y, 3) + " " + e.image_name;
        if (!e.gcp_id.empty())
            out += " " + e.gcp_id;
        out += "\n";
    }
    return out;
}

void write_gcp_list(const std::vector<GcpEntry>& entries, const std::string& proj_line, const std::string& path,
                    const ImageDims& dims)
{
    check_gcp_bounds(entries, dims);
    write_text_file(path, format_gcp_list(entries, proj_line));
}

GcpList parse_gcp_list(const std::string& text)
{
    GcpList out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos)
            continue;
        if (!have_header) {
            out.projection = line;
            have_header = true;
            continue;
        }
        if (line[line.find_first_not_of(" \t")] == '#')
            continue;
        std::istringstream fields(line);
        std::vector<std::string> tok{std::istream_iterator<std::string>(fields), std::istream_iterator<std::string>()};
        if (tok.size() < 6)
            throw ParseError("gcp_list: expected 'geo_x geo_y geo_z im_x im_y image_name'", lineno);
        GcpEntry e;
        try {
            e.geo_x = parse_double(tok[0]);
            e.geo_y = parse_double(tok[1]);
            e.geo_z = parse_double(tok[2]);
            e.im_x = parse_double(tok[3]);
            e.im_y = parse_double(tok[4]);
        } catch (const ParseError&) {
            throw ParseError("gcp_list: malformed number", lineno);
        }
        e.image_name = tok[5];
        if (tok.size() >= 7)
            e.gcp_id = tok[6];
        out.entries.push_back(std::move(e));
    }
    if (!have_header)
        throw ParseError("gcp_list: missing projection line");
    return out;
}

GcpList read_gcp_list(const std::string& path)
{
    try {
        return parse_gcp_list(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

std::string gcp_projection_line(const Crs& crs)
{
    if (crs.kind != Crs::Kind::Utm)
        return "EPSG:4326";
    return "WGS84 UTM " + std::to_string(crs.zone) + (crs.hemisphere == Hemisphere::North ? "N" : "S");
}

}  // namespace orthotrace::formats
