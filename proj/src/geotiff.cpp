#include "geotiff.hpp"

#include <cmath>
#include <map>

#include "byte_io.hpp"
#include "orthotrace/number_format.hpp"

namespace orthotrace::detail {

namespace {

enum : uint16_t {
    kImageWidth = 256,
    kImageLength = 257,
    kBitsPerSample = 258,
    kCompression = 259,
    kStripOffsets = 273,
    kSamplesPerPixel = 277,
    kRowsPerStrip = 278,
    kStripByteCounts = 279,
    kTileWidth = 322,
    kSampleFormat = 339,
    kModelPixelScale = 33550,
    kModelTiepoint = 33922,
    kModelTransformation = 34264,
    kGeoKeyDirectory = 34735,
    kGdalNodata = 42113,
};

size_t type_size(uint16_t type)
{
    switch (type) {
    case 1: case 2: case 6: case 7: return 1;
    case 3: case 8: return 2;
    case 4: case 9: case 11: return 4;
    case 5: case 10: case 12: return 8;
    default: return 0;
    }
}

struct Entry {
    uint16_t type = 0;
    uint32_t count = 0;
    size_t value_offset = 0;  // absolute offset of the value bytes
};

std::vector<double> numbers(const ByteReader& r, const Entry& e)
{
    std::vector<double> out;
    out.reserve(e.count);
    const size_t sz = type_size(e.type);
    for (uint32_t i = 0; i < e.count; ++i) {
        const size_t off = e.value_offset + i * sz;
        switch (e.type) {
        case 1: out.push_back(r.u8(off)); break;
        case 3: out.push_back(r.u16(off)); break;
        case 4: out.push_back(r.u32(off)); break;
        case 11: out.push_back(r.f32(off)); break;
        case 12: out.push_back(r.f64(off)); break;
        default: throw ParseError("unsupported TIFF field type " + std::to_string(e.type));
        }
    }
    return out;
}

}  // namespace

RasterGrid read_geotiff(const std::string& path)
{
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 8)
        throw ParseError("GeoTIFF " + path + ": file too short");
    ByteOrder order;
    if (bytes[0] == 'I' && bytes[1] == 'I')
        order = ByteOrder::Little;
    else if (bytes[0] == 'M' && bytes[1] == 'M')
        order = ByteOrder::Big;
    else
        throw ParseError("GeoTIFF " + path + ": missing TIFF byte-order mark");
    ByteReader r(bytes, order);
    if (r.u16(2) != 42)
        throw ParseError("GeoTIFF " + path + ": unsupported TIFF variant (BigTIFF is not supported)");

    std::map<uint16_t, Entry> tags;
    try {
        const size_t ifd = r.u32(4);
        const uint16_t n = r.u16(ifd);
        for (uint16_t i = 0; i < n; ++i) {
            const size_t eo = ifd + 2 + 12 * size_t(i);
            Entry e;
            const uint16_t tag = r.u16(eo);
            e.type = r.u16(eo + 2);
            e.count = r.u32(eo + 4);
            const size_t total = type_size(e.type) * e.count;
            e.value_offset = total <= 4 ? eo + 8 : r.u32(eo + 8);
            if (type_size(e.type) != 0)
                r.require(e.value_offset, total);
            tags[tag] = e;
        }
    } catch (const ParseError& e) {
        throw ParseError("GeoTIFF " + path + ": malformed IFD: " + e.what());
    }

    auto scalar = [&](uint16_t tag, std::optional<double> dflt = std::nullopt) -> double {
        auto it = tags.find(tag);
        if (it == tags.end()) {
            if (dflt)
                return *dflt;
            throw ParseError("GeoTIFF " + path + ": missing tag " + std::to_string(tag));
        }
        return numbers(r, it->second).at(0);
    };

    if (tags.count(kTileWidth))
        throw ParseError("GeoTIFF " + path + ": tiled layout is not supported");
    if (scalar(kCompression, 1.0) != 1)
        throw ParseError("GeoTIFF " + path + ": compressed data is not supported");
    if (scalar(kSamplesPerPixel, 1.0) != 1)
        throw ParseError("GeoTIFF " + path + ": only single-band rasters are supported");

    RasterGrid g;
    g.width = static_cast<int>(scalar(kImageWidth));
    g.height = static_cast<int>(scalar(kImageLength));
    const int bits = static_cast<int>(scalar(kBitsPerSample, 8.0));
    const int fmt = static_cast<int>(scalar(kSampleFormat, 1.0));
    const size_t bps = static_cast<size_t>(bits / 8);
    if (!((fmt == 1 && (bits == 8 || bits == 16 || bits == 32)) || (fmt == 2 && (bits == 16 || bits == 32))
          || (fmt == 3 && (bits == 32 || bits == 64))))
        throw ParseError("GeoTIFF " + path + ": unsupported sample type");

    const int rows_per_strip = static_cast<int>(scalar(kRowsPerStrip, double(g.height)));
    if (!tags.count(kStripOffsets) || !tags.count(kStripByteCounts))
        throw ParseError("GeoTIFF " + path + ": missing strip layout");
    const auto offsets = numbers(r, tags[kStripOffsets]);
    const auto counts = numbers(r, tags[kStripByteCounts]);
    if (offsets.size() != counts.size())
        throw ParseError("GeoTIFF " + path + ": strip tables disagree");

    g.values.resize(static_cast<size_t>(g.width) * g.height);
    const size_t row_bytes = bps * g.width;
    for (int row = 0; row < g.height; ++row) {
        const size_t strip = row / rows_per_strip;
        if (strip >= offsets.size())
            throw ParseError("GeoTIFF " + path + ": dimension mismatch with strip table");
        const size_t base = static_cast<size_t>(offsets[strip]) + (row % rows_per_strip) * row_bytes;
        r.require(base, row_bytes);
        for (int col = 0; col < g.width; ++col) {
            const size_t off = base + col * bps;
            double v = 0;
            if (fmt == 3)
                v = bits == 32 ? r.f32(off) : r.f64(off);
            else if (fmt == 2)
                v = bits == 16 ? static_cast<int16_t>(r.u16(off)) : static_cast<int32_t>(r.u32(off));
            else
                v = bits == 8 ? r.u8(off) : bits == 16 ? r.u16(off) : r.u32(off);
            g.at(col, row) = v;
        }
    }

    bool pixel_is_point = false;
    if (auto it = tags.find(kGeoKeyDirectory); it != tags.end()) {
        const auto keys = numbers(r, it->second);
        if (keys.size() >= 4) {
            const size_t nkeys = static_cast<size_t>(keys[3]);
            for (size_t k = 0; k < nkeys && 4 + 4 * k + 3 < keys.size(); ++k) {
                const int id = static_cast<int>(keys[4 + 4 * k]);
                const int loc = static_cast<int>(keys[4 + 4 * k + 1]);
                const int value = static_cast<int>(keys[4 + 4 * k + 3]);
                if (loc != 0)
                    continue;
                if (id == 1025)
                    pixel_is_point = (value == 2);
                else if (id == 3072 || (id == 2048 && !g.crs)) {
                    try {
                        g.crs = Crs::parse("EPSG:" + std::to_string(value));
                    } catch (const ParseError&) {
                    }
                }
            }
        }
    }

    const double half = pixel_is_point ? 0.0 : 0.5;
    if (auto it = tags.find(kModelTransformation); it != tags.end()) {
        const auto m = numbers(r, it->second);
        if (m.size() < 16)
            throw ParseError("GeoTIFF " + path + ": malformed ModelTransformation");
        g.gt.pixel_w = m[0];
        g.gt.rot_x = m[1];
        g.gt.rot_y = m[4];
        g.gt.pixel_h = m[5];
        g.gt.origin_x = m[3] + half * (m[0] + m[1]);
        g.gt.origin_y = m[7] + half * (m[4] + m[5]);
    } else if (tags.count(kModelTiepoint) && tags.count(kModelPixelScale)) {
        const auto tp = numbers(r, tags[kModelTiepoint]);
        const auto sc = numbers(r, tags[kModelPixelScale]);
        if (tp.size() < 6 || sc.size() < 2)
            throw ParseError("GeoTIFF " + path + ": malformed tiepoint/scale");
        g.gt.pixel_w = sc[0];
        g.gt.pixel_h = -sc[1];
        g.gt.origin_x = tp[3] + (half - tp[0]) * sc[0];
        g.gt.origin_y = tp[4] - (half - tp[1]) * sc[1];
    } else {
        throw ParseError("GeoTIFF " + path + ": no georeferencing tags");
    }

    if (auto it = tags.find(kGdalNodata); it != tags.end() && it->second.type == 2) {
        std::string s(reinterpret_cast<const char*>(bytes.data() + it->second.value_offset), it->second.count);
        while (!s.empty() && (s.back() == '\0' || s.back() == ' '))
            s.pop_back();
        if (!s.empty())
            g.nodata = (s == "nan" || s == "NaN") ? NAN : parse_double(s);
    }
    g.validate();
    return g;
}

}  // namespace orthotrace::detail
