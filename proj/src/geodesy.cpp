#include "orthotrace/geodesy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <regex>
#include <sstream>

#include "orthotrace/error.hpp"
#include "orthotrace/number_format.hpp"

namespace orthotrace {

namespace {

constexpr double kSemiMajor = 6378137.0;
constexpr double kInvFlattening = 298.257223563;
constexpr double kScale = 0.9996;
constexpr double kFalseEasting = 500000.0;
constexpr double kFalseNorthingSouth = 10000000.0;
constexpr double kMaxLatitude = 84.0;

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
constexpr double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

// Krueger series coefficients for WGS84, evaluated once.
struct TmSeries {
    double e;         // first eccentricity
    double rect_a;    // rectifying radius A
    std::array<double, 6> alpha;
    std::array<double, 6> beta;

    TmSeries()
    {
        const double f = 1.0 / kInvFlattening;
        e = std::sqrt(f * (2 - f));
        const double n = f / (2 - f);
        const double n2 = n * n, n3 = n2 * n, n4 = n3 * n, n5 = n4 * n, n6 = n5 * n;
        rect_a = kSemiMajor / (1 + n) * (1 + n2 / 4 + n4 / 64 + n6 / 256);

        alpha = {
            n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180 - 127 * n5 / 288 + 7891 * n6 / 37800,
            13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440 + 281 * n5 / 630 - 1983433 * n6 / 1935360,
            61 * n3 / 240 - 103 * n4 / 140 + 15061 * n5 / 26880 + 167603 * n6 / 181440,
            49561 * n4 / 161280 - 179 * n5 / 168 + 6601661 * n6 / 7257600,
            34729 * n5 / 80640 - 3418889 * n6 / 1995840,
            212378941 * n6 / 319334400,
        };
        beta = {
            n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360 - 81 * n5 / 512 + 96199 * n6 / 604800,
            n2 / 48 + n3 / 15 - 437 * n4 / 1440 + 46 * n5 / 105 - 1118711 * n6 / 3870720,
            17 * n3 / 480 - 37 * n4 / 840 - 209 * n5 / 4480 + 5569 * n6 / 90720,
            4397 * n4 / 161280 - 11 * n5 / 504 - 830251 * n6 / 7257600,
            4583 * n5 / 161280 - 108847 * n6 / 3991680,
            20648693 * n6 / 638668800,
        };
    }
};

const TmSeries& series()
{
    static const TmSeries s;
    return s;
}

// tan of the conformal latitude from tan of the geodetic latitude.
double conformal_tau(double tau, double e)
{
    const double tau1 = std::hypot(1.0, tau);
    const double sig = std::sinh(e * std::atanh(e * tau / tau1));
    return tau * std::hypot(1.0, sig) - sig * tau1;
}

// Newton inversion of conformal_tau.
double geodetic_tau(double tau_prime, double e)
{
    const double e2m = 1 - e * e;
    double tau = tau_prime;
    for (int i = 0; i < 20; ++i) {
        const double tp = conformal_tau(tau, e);
        const double dtau = (tau_prime - tp) * (1 + e2m * tau * tau)
                            / (e2m * std::hypot(1.0, tau) * std::hypot(1.0, tp));
        tau += dtau;
        if (std::abs(dtau) < 1e-15 * std::max(1.0, std::abs(tau)))
            break;
    }
    return tau;
}

}  // namespace

void GeoPoint::validate() const
{
    if (std::isnan(lat) || std::isnan(lon) || (alt && std::isnan(*alt)))
        throw InvalidArgument("GeoPoint contains NaN");
    if (lat < -90 || lat > 90)
        throw InvalidArgument("latitude out of range: " + format_shortest(lat));
    if (lon < -180 || lon >= 180)
        throw InvalidArgument("longitude out of range: " + format_shortest(lon));
}

void UtmCoord::validate() const
{
    if (zone < 1 || zone > 60)
        throw InvalidArgument("UTM zone out of range: " + std::to_string(zone));
    if (!(easting > 100000 && easting < 900000))
        throw InvalidArgument("UTM easting out of range: " + format_shortest(easting));
    if (!(northing >= 0 && northing < 10000000))
        throw InvalidArgument("UTM northing out of range: " + format_shortest(northing));
}

int utm_zone_for(double lon)
{
    int zone = static_cast<int>(std::floor(lon / 6.0)) + 31;
    return std::clamp(zone, 1, 60);
}

double utm_central_meridian(int zone)
{
    return zone * 6.0 - 183.0;
}

UtmCoord wgs84_to_utm(const GeoPoint& p, std::optional<int> forced_zone)
{
    p.validate();
    if (std::abs(p.lat) > kMaxLatitude)
        throw InvalidArgument("latitude " + format_shortest(p.lat) + " outside UTM validity (|lat| <= 84)");
    if (forced_zone && (*forced_zone < 1 || *forced_zone > 60))
        throw InvalidArgument("forced UTM zone out of range: " + std::to_string(*forced_zone));

    const auto& s = series();
    const int zone = forced_zone ? *forced_zone : utm_zone_for(p.lon);
    double dlon = p.lon - utm_central_meridian(zone);
    dlon = std::remainder(dlon, 360.0);

    const double phi = deg2rad(p.lat);
    const double lam = deg2rad(dlon);
    const double tau_p = conformal_tau(std::tan(phi), s.e);
    const double xi_p = std::atan2(tau_p, std::cos(lam));
    const double eta_p = std::asinh(std::sin(lam) / std::hypot(tau_p, std::cos(lam)));

    double xi = xi_p, eta = eta_p;
    for (int j = 1; j <= 6; ++j) {
        const double a = s.alpha[j - 1];
        xi += a * std::sin(2 * j * xi_p) * std::cosh(2 * j * eta_p);
        eta += a * std::cos(2 * j * xi_p) * std::sinh(2 * j * eta_p);
    }

    UtmCoord u;
    u.zone = zone;
    u.hemisphere = p.lat < 0 ? Hemisphere::South : Hemisphere::North;
    u.easting = kFalseEasting + kScale * s.rect_a * eta;
    u.northing = kScale * s.rect_a * xi + (u.hemisphere == Hemisphere::South ? kFalseNorthingSouth : 0.0);
    return u;
}

GeoPoint utm_to_wgs84(const UtmCoord& u)
{
    u.validate();
    const auto& s = series();
    const double north = u.northing - (u.hemisphere == Hemisphere::South ? kFalseNorthingSouth : 0.0);
    const double xi = north / (kScale * s.rect_a);
    const double eta = (u.easting - kFalseEasting) / (kScale * s.rect_a);

    double xi_p = xi, eta_p = eta;
    for (int j = 1; j <= 6; ++j) {
        const double b = s.beta[j - 1];
        xi_p -= b * std::sin(2 * j * xi) * std::cosh(2 * j * eta);
        eta_p -= b * std::cos(2 * j * xi) * std::sinh(2 * j * eta);
    }

    const double tau_p = std::sin(xi_p) / std::hypot(std::sinh(eta_p), std::cos(xi_p));
    const double lam = std::atan2(std::sinh(eta_p), std::cos(xi_p));
    const double tau = geodetic_tau(tau_p, s.e);

    GeoPoint p;
    p.lat = rad2deg(std::atan(tau));
    p.lon = utm_central_meridian(u.zone) + rad2deg(lam);
    if (p.lon >= 180)
        p.lon -= 360;
    if (p.lon < -180)
        p.lon += 360;

    if (std::abs(p.lat) > kMaxLatitude + 1e-9)
        throw InvalidArgument("UTM coordinate maps outside the UTM validity band");
    if ((u.hemisphere == Hemisphere::North && p.lat < 0) || (u.hemisphere == Hemisphere::South && p.lat > 0))
        throw InvalidArgument("UTM northing inconsistent with hemisphere");
    return p;
}

// --- CRS --------------------------------------------------------------------

Crs Crs::parse(const std::string& text)
{
    static const std::regex utm_re(R"(UTM[\s_]*(?:zone[\s_]*)?(\d{1,2})\s*([NnSs]))", std::regex::icase);
    static const std::regex epsg_re(R"(EPSG\s*:\s*(\d+))", std::regex::icase);
    std::smatch m;
    if (std::regex_search(text, m, utm_re)) {
        const int zone = std::stoi(m[1].str());
        if (zone < 1 || zone > 60)
            throw ParseError("UTM zone out of range in CRS '" + text + "'");
        const char h = static_cast<char>(std::toupper(static_cast<unsigned char>(m[2].str()[0])));
        return utm(zone, h == 'S' ? Hemisphere::South : Hemisphere::North);
    }
    if (std::regex_search(text, m, epsg_re)) {
        const int code = std::stoi(m[1].str());
        if (code == 4326)
            return wgs84();
        if (code > 32600 && code <= 32660)
            return utm(code - 32600, Hemisphere::North);
        if (code > 32700 && code <= 32760)
            return utm(code - 32700, Hemisphere::South);
        throw ParseError("unsupported EPSG code " + std::to_string(code));
    }
    static const std::regex wgs_re(R"re(^\s*(WGS\s*-?\s*84|GCS_WGS_1984|GEOGCS\[))re", std::regex::icase);
    if (std::regex_search(text, wgs_re))
        return wgs84();
    throw ParseError("unrecognized CRS '" + text + "'");
}

int Crs::epsg() const
{
    if (kind == Kind::Wgs84)
        return 4326;
    return (hemisphere == Hemisphere::North ? 32600 : 32700) + zone;
}

std::string Crs::to_string() const
{
    if (kind == Kind::Wgs84)
        return "WGS84";
    return "UTM " + std::to_string(zone) + (hemisphere == Hemisphere::North ? " N" : " S");
}

std::string Crs::to_wkt() const
{
    const std::string geogcs =
        R"(GEOGCS["GCS_WGS_1984",DATUM["D_WGS_1984",SPHEROID["WGS_1984",6378137.0,298.257223563]],)"
        R"(PRIMEM["Greenwich",0.0],UNIT["Degree",0.0174532925199433]])";
    if (kind == Kind::Wgs84)
        return geogcs;
    const char h = hemisphere == Hemisphere::North ? 'N' : 'S';
    std::ostringstream os;
    os << "PROJCS[\"WGS_1984_UTM_Zone_" << zone << h << "\"," << geogcs
       << R"(,PROJECTION["Transverse_Mercator"],PARAMETER["False_Easting",500000.0],)"
       << "PARAMETER[\"False_Northing\"," << (hemisphere == Hemisphere::North ? "0.0" : "10000000.0") << "],"
       << "PARAMETER[\"Central_Meridian\"," << format_decimal(utm_central_meridian(zone), 1) << "],"
       << R"(PARAMETER["Scale_Factor",0.9996],PARAMETER["Latitude_Of_Origin",0.0],UNIT["Meter",1.0]])";
    return os.str();
}

// --- Affine geotransform ------------------------------------------------------

bool AffineGeotransform::invertible() const
{
    const double scale = std::max({std::abs(pixel_w), std::abs(pixel_h), std::abs(rot_x), std::abs(rot_y)});
    const double det = determinant();
    return std::isfinite(det) && scale > 0 && std::abs(det) > 1e-14 * scale * scale;
}

WorldXY pixel_to_world(const AffineGeotransform& gt, double col, double row)
{
    return {gt.origin_x + col * gt.pixel_w + row * gt.rot_x, gt.origin_y + col * gt.rot_y + row * gt.pixel_h};
}

PixelXY world_to_pixel(const AffineGeotransform& gt, double x, double y)
{
    if (!gt.invertible())
        throw InvalidArgument("singular geotransform");
    const double dx = x - gt.origin_x;
    const double dy = y - gt.origin_y;
    if (gt.rot_x == 0 && gt.rot_y == 0)
        return {dx / gt.pixel_w, dy / gt.pixel_h};
    const double det = gt.determinant();
    return {(gt.pixel_h * dx - gt.rot_x * dy) / det, (gt.pixel_w * dy - gt.rot_y * dx) / det};
}

AffineGeotransform read_world_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error("cannot open world file " + path);
    std::array<double, 6> v{};
    std::string line;
    int n = 0, lineno = 0;
    while (n < 6 && std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            v[n++] = parse_double(line);
        } catch (const ParseError&) {
            throw ParseError("world file " + path + ": expected a number", lineno);
        }
    }
    if (n != 6)
        throw ParseError("world file " + path + ": expected 6 values, found " + std::to_string(n));
    AffineGeotransform gt;
    gt.pixel_w = v[0];
    gt.rot_y = v[1];
    gt.rot_x = v[2];
    gt.pixel_h = v[3];
    gt.origin_x = v[4];
    gt.origin_y = v[5];
    if (!gt.invertible())
        throw ParseError("world file " + path + " describes a singular transform");
    return gt;
}

void write_world_file(const AffineGeotransform& gt, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write world file " + path);
    for (double v : {gt.pixel_w, gt.rot_y, gt.rot_x, gt.pixel_h, gt.origin_x, gt.origin_y})
        out << format_shortest(v) << '\n';
}

}  // namespace orthotrace
