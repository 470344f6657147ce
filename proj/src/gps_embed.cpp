#include "orthotrace/gps_embed.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <regex>

#include <spdlog/spdlog.h>

#include "orthotrace/error.hpp"
#include "orthotrace/formats/csv.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/number_format.hpp"
#include "orthotrace/parallel.hpp"

namespace orthotrace {

namespace fs = std::filesystem;

double parse_utc_time(const std::string& text)
{
    try {
        return parse_double(text);
    } catch (const ParseError&) {
    }
    static const std::regex iso(R"(^\s*(\d{4})-(\d{2})-(\d{2})[T ](\d{2}):(\d{2}):(\d{2})(\.\d+)?(Z|[+-]00:?00)?\s*$)");
    std::smatch m;
    if (!std::regex_match(text, m, iso))
        throw ParseError("unrecognized time '" + text + "'");
    const std::string exif_form = m[1].str() + ":" + m[2].str() + ":" + m[3].str() + " " + m[4].str() + ":" + m[5].str()
                                  + ":" + m[6].str();
    double t = formats::parse_exif_datetime(exif_form);
    if (m[7].matched)
        t += parse_double("0" + m[7].str());
    return t;
}

std::vector<GnssFix> parse_gnss_log(const std::string& text, const GnssLoadOptions& opts)
{
    const formats::CsvTable table(formats::parse_csv(text));
    for (const char* col : {"t", "easting", "northing", "zone", "hemisphere", "alt"})
        if (!table.has(col))
            throw ParseError(std::string("GNSS log: missing column '") + col + "'");

    std::vector<GnssFix> fixes;
    fixes.reserve(table.size());
    double latest = 0;
    for (size_t r = 0; r < table.size(); ++r) {
        const int line = static_cast<int>(table.line_of(r));
        GnssFix f;
        try {
            f.t = parse_utc_time(table.get(r, "t"));
            f.pos.easting = table.number(r, "easting");
            f.pos.northing = table.number(r, "northing");
            f.pos.zone = static_cast<int>(parse_int(table.get(r, "zone")));
            f.alt = table.number(r, "alt");
        } catch (const ParseError& e) {
            throw ParseError(std::string("GNSS log: ") + e.what(), e.line() ? 0 : line);
        }
        const std::string h = table.get(r, "hemisphere");
        if (h == "N" || h == "n")
            f.pos.hemisphere = Hemisphere::North;
        else if (h == "S" || h == "s")
            f.pos.hemisphere = Hemisphere::South;
        else
            throw ParseError("GNSS log: hemisphere must be N or S", line);
        try {
            f.pos.validate();
        } catch (const InvalidArgument& e) {
            throw ParseError(std::string("GNSS log: ") + e.what(), line);
        }
        if (!fixes.empty() && f.t < latest - opts.reorder_tolerance)
            throw ParseError("GNSS log: timestamps out of order by more than "
                                 + format_shortest(opts.reorder_tolerance) + " s",
                             line);
        latest = fixes.empty() ? f.t : std::max(latest, f.t);
        fixes.push_back(f);
    }
    std::stable_sort(fixes.begin(), fixes.end(), [](const GnssFix& a, const GnssFix& b) { return a.t < b.t; });
    for (size_t i = 1; i < fixes.size(); ++i)
        if (fixes[i].t == fixes[i - 1].t)
            throw ParseError("GNSS log: duplicate timestamp " + format_shortest(fixes[i].t));
    return fixes;
}

std::vector<GnssFix> load_gnss_log(const std::string& path, const GnssLoadOptions& opts)
{
    try {
        return parse_gnss_log(read_text_file(path), opts);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

std::vector<ImageMatch> match_nearest(const std::vector<formats::ExifGpsRecord>& images,
                                      const std::vector<GnssFix>& fixes, const MatchOptions& opts)
{
    if (fixes.empty())
        throw InvalidArgument("GNSS fix list is empty");
    if (!(opts.max_dt > 0))
        throw InvalidArgument("max_dt must be positive");

    std::vector<ImageMatch> out;
    out.reserve(images.size());
    for (const auto& img : images) {
        ImageMatch m;
        m.image_path = img.image_path;
        m.image_t = img.timestamp + opts.clock_offset;
        const auto hi = std::lower_bound(fixes.begin(), fixes.end(), m.image_t,
                                         [](const GnssFix& f, double t) { return f.t < t; });
        size_t best;
        if (hi == fixes.begin())
            best = 0;
        else if (hi == fixes.end())
            best = fixes.size() - 1;
        else {
            const size_t j = static_cast<size_t>(hi - fixes.begin());
            // Equal distances resolve to the earlier fix.
            best = (hi->t - m.image_t) < (m.image_t - fixes[j - 1].t) ? j : j - 1;
        }
        m.fix_index = best;
        m.dt = std::abs(m.image_t - fixes[best].t);
        if (m.dt > opts.max_dt) {
            m.fix_index.reset();
            out.push_back(std::move(m));
            continue;
        }
        m.position = fixes[best];
        if (opts.interpolate && hi != fixes.begin() && hi != fixes.end() && hi->t != m.image_t) {
            const GnssFix& a = *(hi - 1);
            const GnssFix& b = *hi;
            if (b.t - a.t <= 2 * opts.max_dt && a.pos.zone == b.pos.zone && a.pos.hemisphere == b.pos.hemisphere) {
                const double w = (m.image_t - a.t) / (b.t - a.t);
                GnssFix f = a;
                f.t = m.image_t;
                f.pos.easting = a.pos.easting + w * (b.pos.easting - a.pos.easting);
                f.pos.northing = a.pos.northing + w * (b.pos.northing - a.pos.northing);
                f.alt = a.alt + w * (b.alt - a.alt);
                m.position = f;
                m.interpolated = true;
            }
        }
        out.push_back(std::move(m));
    }
    return out;
}

nlohmann::json EmbedReport::to_json() const
{
    nlohmann::json fails = nlohmann::json::array();
    for (const auto& [image, msg] : failures)
        fails.push_back({{"image", image}, {"error", msg}});
    return {{"embedded", embedded},   {"unchanged", unchanged},       {"unmatched", unmatched},
            {"failed", failed},       {"unmatched_images", unmatched_images}, {"failures", fails}};
}

EmbedReport embed_all(const std::vector<ImageMatch>& matches)
{
    enum class Outcome { Written, Unchanged, Unmatched, Failed };
    std::vector<Outcome> outcome(matches.size());
    std::vector<std::string> errors(matches.size());
    parallel_for(matches.size(), [&](size_t i) {
        const auto& m = matches[i];
        if (!m.matched()) {
            outcome[i] = Outcome::Unmatched;
            return;
        }
        try {
            GeoPoint p = utm_to_wgs84(m.position->pos);
            p.alt = m.position->alt;
            outcome[i] = formats::write_exif_gps(m.image_path, p) ? Outcome::Written : Outcome::Unchanged;
        } catch (const std::exception& e) {
            outcome[i] = Outcome::Failed;
            errors[i] = e.what();
        }
    });

    EmbedReport report;
    for (size_t i = 0; i < matches.size(); ++i) {
        switch (outcome[i]) {
        case Outcome::Unchanged:
            ++report.unchanged;
            [[fallthrough]];
        case Outcome::Written:
            ++report.embedded;
            break;
        case Outcome::Unmatched:
            ++report.unmatched;
            report.unmatched_images.push_back(matches[i].image_path);
            break;
        case Outcome::Failed:
            ++report.failed;
            report.failures.emplace_back(matches[i].image_path, errors[i]);
            spdlog::warn("gps-embed: {}: {}", matches[i].image_path, errors[i]);
            break;
        }
    }
    return report;
}

std::vector<std::string> list_jpegs(const std::string& dir)
{
    if (!fs::is_directory(dir))
        throw Error("not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file())
            continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".jpg" || ext == ".jpeg")
            out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

EmbedReport gps_embed_directory(const std::string& images_dir, const std::string& gnss_path, const MatchOptions& opts)
{
    const auto fixes = load_gnss_log(gnss_path);
    std::vector<formats::ExifGpsRecord> records;
    EmbedReport unreadable;
    for (const auto& path : list_jpegs(images_dir)) {
        try {
            records.push_back(formats::read_exif(path));
        } catch (const std::exception& e) {
            ++unreadable.failed;
            unreadable.failures.emplace_back(path, e.what());
            spdlog::warn("gps-embed: {}: {}", path, e.what());
        }
    }
    EmbedReport report = embed_all(match_nearest(records, fixes, opts));
    report.failed += unreadable.failed;
    report.failures.insert(report.failures.end(), unreadable.failures.begin(), unreadable.failures.end());
    std::sort(report.failures.begin(), report.failures.end());
    return report;
}

}  // namespace orthotrace
