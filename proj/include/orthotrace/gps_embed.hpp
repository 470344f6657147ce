#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthotrace/formats/exif.hpp"
#include "orthotrace/geodesy.hpp"

namespace orthotrace {

struct GnssFix {
    double t = 0;  // UTC seconds since the epoch
    UtmCoord pos;
    double alt = 0;
};

struct GnssLoadOptions {
    /// Fixes may appear out of order by up to this many seconds (logger
    /// buffering); larger inversions are rejected.
    double reorder_tolerance = 1.0;
};

/// CSV with header columns t, easting, northing, zone, hemisphere, alt.
/// `t` is epoch seconds or an ISO-8601 UTC time ("2021-06-16T12:30:05.2Z").
/// Returns fixes sorted by time; duplicate timestamps are an error.
std::vector<GnssFix> load_gnss_log(const std::string& path, const GnssLoadOptions& opts = {});
std::vector<GnssFix> parse_gnss_log(const std::string& text, const GnssLoadOptions& opts = {});

/// Parses epoch seconds or ISO-8601 UTC.
double parse_utc_time(const std::string& text);

struct MatchOptions {
    double max_dt = 1.0;        // seconds
    double clock_offset = 0.0;  // added to image timestamps
    /// Interpolate linearly between the bracketing fixes when both lie within
    /// 2*max_dt of each other and share a UTM zone.
    bool interpolate = false;
};

struct ImageMatch {
    std::string image_path;
    double image_t = 0;                // corrected image time
    std::optional<size_t> fix_index;   // nearest fix; empty when unmatched
    double dt = 0;                     // |image_t - fix.t| of the nearest fix
    std::optional<GnssFix> position;   // fix or interpolated position to embed
    bool interpolated = false;

    bool matched() const { return position.has_value(); }
};

/// Nearest fix per image by binary search; ties go to the earlier fix.
/// Images whose nearest fix is more than max_dt away stay unmatched.
std::vector<ImageMatch> match_nearest(const std::vector<formats::ExifGpsRecord>& images,
                                      const std::vector<GnssFix>& fixes, const MatchOptions& opts = {});

struct EmbedReport {
    int embedded = 0;
    int unchanged = 0;  // embedded images whose EXIF already held the position
    int unmatched = 0;
    int failed = 0;
    std::vector<std::string> unmatched_images;
    std::vector<std::pair<std::string, std::string>> failures;  // image, message

    nlohmann::json to_json() const;
};

/// Converts each matched position to WGS84 and writes it into the image's
/// EXIF. Per-image errors are counted as failures without stopping the batch.
EmbedReport embed_all(const std::vector<ImageMatch>& matches);

/// Reads every .jpg/.jpeg in `images_dir`, matches against the log and
/// embeds. Images whose EXIF cannot be read count as failed.
EmbedReport gps_embed_directory(const std::string& images_dir, const std::string& gnss_path,
                                const MatchOptions& opts = {});

/// Sorted .jpg/.jpeg paths in a directory.
std::vector<std::string> list_jpegs(const std::string& dir);

}  // namespace orthotrace
