#include "orthotrace/gcp_select.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <tuple>

#include <spdlog/spdlog.h>

#include "orthotrace/error.hpp"
#include "orthotrace/formats/csv.hpp"
#include "orthotrace/formats/exif.hpp"
#include "orthotrace/gps_embed.hpp"
#include "orthotrace/number_format.hpp"

namespace orthotrace {

namespace {

UtmCoord to_zone(const UtmCoord& u, const UtmCoord& like)
{
    if (u.zone == like.zone && u.hemisphere == like.hemisphere)
        return u;
    UtmCoord out = wgs84_to_utm(utm_to_wgs84(u), like.zone);
    if (out.hemisphere != like.hemisphere) {
        // Keep one northing convention across the equator.
        out.northing += like.hemisphere == Hemisphere::South ? 10000000.0 : -10000000.0;
        out.hemisphere = like.hemisphere;
    }
    return out;
}

}  // namespace

std::vector<Candidate> candidate_images(const UtmCoord& gcp, const std::vector<ImagePosition>& images, double radius)
{
    if (!(radius > 0))
        throw InvalidArgument("search radius must be positive");
    std::vector<Candidate> out;
    for (const auto& im : images) {
        if (!im.pos) {
            spdlog::warn("gcp: {} has no GPS position; skipped", im.image);
            continue;
        }
        UtmCoord p;
        try {
            p = to_zone(*im.pos, gcp);
        } catch (const InvalidArgument& e) {
            spdlog::warn("gcp: {}: {}; skipped", im.image, e.what());
            continue;
        }
        const double d = std::hypot(p.easting - gcp.easting, p.northing - gcp.northing);
        if (d <= radius)
            out.push_back({im.image, d});
    }
    std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
        return std::tie(a.distance, a.image) < std::tie(b.distance, b.image);
    });
    return out;
}

double default_radius(double flight_alt, const SensorSpec& s)
{
    if (!(flight_alt > 0) || s.width_px <= 0 || s.height_px <= 0 || !(s.focal_norm > 0))
        throw InvalidArgument("altitude, sensor size and focal length must be positive");
    const double m = std::max(s.width_px, s.height_px);
    const double w = s.width_px / m, h = s.height_px / m;
    return flight_alt / s.focal_norm * 0.5 * std::sqrt(w * w + h * h);
}

std::vector<GroundControlPoint> load_gcp_file(const std::string& path, std::optional<int> zone)
{
    const auto table = formats::CsvTable::read(path);
    const bool geographic = table.has("lat") && table.has("lon");
    const bool projected = table.has("easting") && table.has("northing") && table.has("zone")
                           && table.has("hemisphere");
    if (!table.has("name") || (!geographic && !projected))
        throw ParseError(path + ": GCP file needs name,lat,lon,alt or name,easting,northing,elevation,zone,hemisphere");

    std::vector<GroundControlPoint> out;
    std::set<std::string> names;
    for (size_t r = 0; r < table.size(); ++r) {
        GroundControlPoint g;
        g.name = table.get(r, "name");
        if (g.name.empty() || !names.insert(g.name).second)
            throw ParseError(path + ": missing or duplicate GCP name", static_cast<int>(table.line_of(r)));
        try {
            if (geographic) {
                const GeoPoint p{table.number(r, "lat"), table.number(r, "lon"), std::nullopt};
                const int z = zone ? *zone : out.empty() ? utm_zone_for(p.lon) : out.front().pos.zone;
                g.pos = wgs84_to_utm(p, z);
                g.elevation = table.has("alt") ? table.number(r, "alt") : 0.0;
            } else {
                g.pos.easting = table.number(r, "easting");
                g.pos.northing = table.number(r, "northing");
                g.pos.zone = static_cast<int>(parse_int(table.get(r, "zone")));
                const auto& h = table.get(r, "hemisphere");
                if (h != "N" && h != "S")
                    throw ParseError("hemisphere must be N or S");
                g.pos.hemisphere = h == "N" ? Hemisphere::North : Hemisphere::South;
                g.elevation = table.has("elevation") ? table.number(r, "elevation") : 0.0;
                g.pos.validate();
            }
        } catch (const Error& e) {
            throw ParseError(path + ": " + e.what(), static_cast<int>(table.line_of(r)));
        }
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<ImagePosition> image_positions_from_dir(const std::string& dir, int zone)
{
    std::vector<ImagePosition> out;
    for (const auto& path : list_jpegs(dir)) {
        ImagePosition ip;
        ip.image = std::filesystem::path(path).filename().string();
        try {
            if (auto gps = formats::read_exif_gps(path))
                ip.pos = wgs84_to_utm(*gps, zone);
        } catch (const Error& e) {
            spdlog::warn("gcp: {}: {}", path, e.what());
        }
        out.push_back(std::move(ip));
    }
    return out;
}

std::vector<GcpCandidates> find_gcp_candidates(const std::vector<GroundControlPoint>& gcps,
                                               const std::vector<ImagePosition>& images, double radius)
{
    std::vector<GcpCandidates> out;
    for (const auto& g : gcps)
        out.push_back({g, candidate_images(g.pos, images, radius)});
    return out;
}

std::vector<std::string> validate_gcp_marks(const std::vector<formats::GcpEntry>& marks, const formats::ImageDims& dims)
{
    formats::check_gcp_bounds(marks, dims);
    std::map<std::string, std::set<std::string>> images_per_gcp;
    for (const auto& m : marks) {
        const std::string key = !m.gcp_id.empty() ? m.gcp_id
                                                  : format_shortest(m.geo_x) + " " + format_shortest(m.geo_y) + " "
                                                        + format_shortest(m.geo_z);
        images_per_gcp[key].insert(m.image_name);
    }
    int usable = 0;
    std::vector<std::string> warnings;
    for (const auto& [gcp, images] : images_per_gcp) {
        if (images.size() >= 2)
            ++usable;
        if (images.size() < 3)
            warnings.push_back("GCP " + gcp + " is marked in only " + std::to_string(images.size())
                               + " image(s); 3 or more recommended");
    }
    if (usable < 3)
        throw InvalidArgument("georeferencing needs at least 3 GCPs each marked in at least 2 images; have "
                              + std::to_string(usable));
    for (const auto& w : warnings)
        spdlog::warn("gcp: {}", w);
    return warnings;
}

std::vector<std::string> assemble_gcp_list(const std::vector<formats::GcpEntry>& marks, const std::string& proj_line,
                                           const std::string& path, const formats::ImageDims& dims)
{
    auto warnings = validate_gcp_marks(marks, dims);
    formats::write_gcp_list(marks, proj_line, path, dims);
    return warnings;
}

}  // namespace orthotrace
