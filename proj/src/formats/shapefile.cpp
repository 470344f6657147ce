#include "orthotrace/formats/shapefile.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "../byte_io.hpp"
#include "orthotrace/error.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/number_format.hpp"

namespace orthotrace::formats {

using detail::ByteOrder;
using detail::ByteWriter;

namespace {

constexpr int32_t kFileCode = 9994;
constexpr int32_t kVersion = 1000;
constexpr int32_t kShapePolygon = 5;
constexpr int kIdWidth = 10;
constexpr int kNumWidth = 19;
constexpr int kNumDecimals = 6;

struct Box {
    double min_x = INFINITY, min_y = INFINITY, max_x = -INFINITY, max_y = -INFINITY;

    void add(const WorldXY& p)
    {
        min_x = std::min(min_x, p.x);
        min_y = std::min(min_y, p.y);
        max_x = std::max(max_x, p.x);
        max_y = std::max(max_y, p.y);
    }
    void add(const Box& b)
    {
        add(WorldXY{b.min_x, b.min_y});
        add(WorldXY{b.max_x, b.max_y});
    }
};

double cross(const WorldXY& o, const WorldXY& a, const WorldXY& b)
{
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(const WorldXY& p, const WorldXY& a, const WorldXY& b)
{
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y
           && p.y <= std::max(a.y, b.y);
}

bool segments_touch(const WorldXY& a, const WorldXY& b, const WorldXY& c, const WorldXY& d)
{
    const double d1 = cross(c, d, a), d2 = cross(c, d, b), d3 = cross(a, b, c), d4 = cross(a, b, d);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
        return true;
    return (d1 == 0 && on_segment(a, c, d)) || (d2 == 0 && on_segment(b, c, d)) || (d3 == 0 && on_segment(c, a, b))
           || (d4 == 0 && on_segment(d, a, b));
}

std::vector<WorldXY> open_ring(const std::vector<WorldXY>& ring)
{
    std::vector<WorldXY> r = ring;
    if (r.size() >= 2 && r.front().x == r.back().x && r.front().y == r.back().y)
        r.pop_back();
    return r;
}

// Closed clockwise ring ready for writing.
std::vector<WorldXY> normalized_ring(const Polygon& poly)
{
    auto r = open_ring(poly.ring);
    const std::string where = "polygon " + std::to_string(poly.id);
    if (r.size() < 3)
        throw InvalidArgument(where + " needs at least three distinct vertices");
    for (const auto& p : r)
        if (!std::isfinite(p.x) || !std::isfinite(p.y))
            throw InvalidArgument(where + " has non-finite vertices");
    if (ring_signed_area(r) == 0)
        throw InvalidArgument(where + " is degenerate (zero area)");
    if (ring_self_intersects(r))
        throw InvalidArgument(where + " ring self-intersects");
    if (ring_signed_area(r) > 0)
        std::reverse(r.begin() + 1, r.end());
    r.push_back(r.front());
    return r;
}

void write_box(ByteWriter& w, const Box& b)
{
    w.f64(b.min_x);
    w.f64(b.min_y);
    w.f64(b.max_x);
    w.f64(b.max_y);
}

// Writes the 100-byte header shared by .shp and .shx; `words` is the file
// length in 16-bit words.
void write_header(ByteWriter& w, int32_t words, const Box& b)
{
    ByteWriter be(ByteOrder::Big);
    be.u32(static_cast<uint32_t>(kFileCode));
    be.zeros(20);
    be.u32(static_cast<uint32_t>(words));
    w.bytes(be.buffer());
    w.u32(static_cast<uint32_t>(kVersion));
    w.u32(static_cast<uint32_t>(kShapePolygon));
    write_box(w, b);
    w.zeros(32);  // Z and M ranges
}

void put_be32(ByteWriter& w, int32_t v)
{
    ByteWriter be(ByteOrder::Big);
    be.u32(static_cast<uint32_t>(v));
    w.bytes(be.buffer());
}

std::string right_justify(const std::string& s, int width, const std::string& what)
{
    if (static_cast<int>(s.size()) > width)
        throw InvalidArgument("value " + s + " does not fit the " + what + " column");
    return std::string(width - s.size(), ' ') + s;
}

}  // namespace

Polygon rectangle_polygon(int64_t id, double min_x, double min_y, double max_x, double max_y)
{
    Polygon p;
    p.id = id;
    p.ring = {{min_x, min_y}, {min_x, max_y}, {max_x, max_y}, {max_x, min_y}, {min_x, min_y}};
    return p;
}

double ring_signed_area(const std::vector<WorldXY>& ring)
{
    const auto r = open_ring(ring);
    double a = 0;
    for (size_t i = 0; i < r.size(); ++i) {
        const auto& p = r[i];
        const auto& q = r[(i + 1) % r.size()];
        a += p.x * q.y - q.x * p.y;
    }
    return a / 2;
}

bool ring_self_intersects(const std::vector<WorldXY>& ring)
{
    const auto r = open_ring(ring);
    const size_t n = r.size();
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
            const WorldXY &a = r[i], &b = r[(i + 1) % n], &c = r[j], &d = r[(j + 1) % n];
            if (adjacent) {
                // Adjacent edges share one vertex; they may only overlap if collinear and folding back.
                const WorldXY& shared = (j == i + 1) ? b : a;
                const WorldXY& p = (j == i + 1) ? a : b;
                const WorldXY& q = (j == i + 1) ? d : c;
                if (cross(shared, p, q) == 0 && ((p.x - shared.x) * (q.x - shared.x) + (p.y - shared.y) * (q.y - shared.y)) > 0)
                    return true;
                continue;
            }
            if (segments_touch(a, b, c, d))
                return true;
        }
    }
    return false;
}

void write_shapefile(const std::vector<Polygon>& polygons, const Crs& crs, const std::string& basepath)
{
    if (polygons.empty())
        throw InvalidArgument("shapefile needs at least one polygon");

    std::vector<std::vector<WorldXY>> rings;
    std::vector<Box> boxes;
    Box total;
    for (const auto& p : polygons) {
        rings.push_back(normalized_ring(p));
        Box b;
        for (const auto& v : rings.back())
            b.add(v);
        boxes.push_back(b);
        total.add(b);
    }

    std::set<std::string> field_names;
    for (const auto& p : polygons)
        for (const auto& [name, v] : p.fields) {
            if (name.empty() || name.size() > 10 || name == "id")
                throw InvalidArgument("DBF field name '" + name + "' must be 1-10 characters and not 'id'");
            field_names.insert(name);
        }

    // .shp and .shx
    std::vector<int32_t> content_words;
    for (const auto& r : rings)
        content_words.push_back(static_cast<int32_t>((4 + 32 + 4 + 4 + 4 + 16 * r.size()) / 2));
    int32_t shp_words = 50;
    for (int32_t c : content_words)
        shp_words += 4 + c;

    ByteWriter shp(ByteOrder::Little), shx(ByteOrder::Little);
    write_header(shp, shp_words, total);
    write_header(shx, static_cast<int32_t>(50 + 4 * rings.size()), total);
    for (size_t i = 0; i < rings.size(); ++i) {
        put_be32(shx, static_cast<int32_t>(shp.size() / 2));
        put_be32(shx, content_words[i]);
        put_be32(shp, static_cast<int32_t>(i + 1));
        put_be32(shp, content_words[i]);
        shp.u32(static_cast<uint32_t>(kShapePolygon));
        write_box(shp, boxes[i]);
        shp.u32(1);
        shp.u32(static_cast<uint32_t>(rings[i].size()));
        shp.u32(0);
        for (const auto& v : rings[i]) {
            shp.f64(v.x);
            shp.f64(v.y);
        }
    }

    // .dbf
    ByteWriter dbf(ByteOrder::Little);
    const size_t nfields = 1 + field_names.size();
    const uint16_t header_size = static_cast<uint16_t>(32 + 32 * nfields + 1);
    const uint16_t record_size = static_cast<uint16_t>(1 + kIdWidth + kNumWidth * field_names.size());
    dbf.u8(0x03);
    dbf.u8(70);  // fixed date 1970-01-01 keeps output reproducible
    dbf.u8(1);
    dbf.u8(1);
    dbf.u32(static_cast<uint32_t>(polygons.size()));
    dbf.u16(header_size);
    dbf.u16(record_size);
    dbf.zeros(20);
    auto descriptor = [&](const std::string& name, int width, int decimals) {
        std::array<uint8_t, 11> n{};
        std::copy(name.begin(), name.end(), n.begin());
        dbf.bytes(n);
        dbf.u8('N');
        dbf.zeros(4);
        dbf.u8(static_cast<uint8_t>(width));
        dbf.u8(static_cast<uint8_t>(decimals));
        dbf.zeros(14);
    };
    descriptor("id", kIdWidth, 0);
    for (const auto& name : field_names)
        descriptor(name, kNumWidth, kNumDecimals);
    dbf.u8(0x0D);
    for (const auto& p : polygons) {
        dbf.u8(' ');
        const std::string id = right_justify(std::to_string(p.id), kIdWidth, "id");
        dbf.bytes(std::span(reinterpret_cast<const uint8_t*>(id.data()), id.size()));
        for (const auto& name : field_names) {
            auto it = p.fields.find(name);
            std::string cell(kNumWidth, ' ');
            if (it != p.fields.end() && it->second && std::isfinite(*it->second))
                cell = right_justify(format_fixed(*it->second, kNumDecimals), kNumWidth, name);
            dbf.bytes(std::span(reinterpret_cast<const uint8_t*>(cell.data()), cell.size()));
        }
    }
    dbf.u8(0x1A);

    write_file_atomic(basepath + ".shp", shp.buffer());
    write_file_atomic(basepath + ".shx", shx.buffer());
    write_file_atomic(basepath + ".dbf", dbf.buffer());
    write_text_file(basepath + ".prj", crs.to_wkt());
}

}  // namespace orthotrace::formats
