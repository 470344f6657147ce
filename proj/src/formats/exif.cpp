#include "orthotrace/formats/exif.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <regex>

#include "../byte_io.hpp"
#include "orthotrace/error.hpp"
#include "orthotrace/number_format.hpp"

namespace orthotrace::formats {

using detail::ByteOrder;
using detail::ByteReader;
using detail::ByteWriter;

namespace {

constexpr uint16_t kTagExifIfd = 0x8769;
constexpr uint16_t kTagGpsIfd = 0x8825;
constexpr uint16_t kTagDateTimeOriginal = 0x9003;
constexpr uint16_t kTagOffsetTimeOriginal = 0x9011;
constexpr uint16_t kTagSubSecTimeOriginal = 0x9291;

constexpr uint16_t kTypeByte = 1, kTypeAscii = 2, kTypeShort = 3, kTypeLong = 4, kTypeRational = 5;

constexpr std::array<uint8_t, 6> kExifHeader{'E', 'x', 'i', 'f', 0, 0};

// Seconds are stored with this denominator (0.1 ms of arc, ~3 mm).
constexpr uint32_t kSecondsDenominator = 10000;
constexpr uint32_t kAltitudeDenominator = 1000;

struct Segment {
    size_t start;   // offset of the 0xFF marker byte
    uint8_t marker;
    size_t length;  // total bytes including the marker
};

std::vector<Segment> scan_segments(std::span<const uint8_t> jpeg)
{
    if (jpeg.size() < 4 || jpeg[0] != 0xFF || jpeg[1] != 0xD8)
        throw ParseError("not a JPEG stream (missing SOI marker)");
    std::vector<Segment> segs;
    size_t pos = 2;
    while (pos + 1 < jpeg.size()) {
        if (jpeg[pos] != 0xFF)
            throw ParseError("corrupt JPEG marker sequence at offset " + std::to_string(pos));
        size_t m = pos + 1;
        while (m < jpeg.size() && jpeg[m] == 0xFF)
            ++m;
        if (m >= jpeg.size())
            break;
        const uint8_t marker = jpeg[m];
        if (marker == 0xD9 || marker == 0xDA)  // EOI / start of scan: headers end
            break;
        if ((marker >= 0xD0 && marker <= 0xD7) || marker == 0x01) {
            pos = m + 1;
            continue;
        }
        if (m + 2 >= jpeg.size())
            throw ParseError("truncated JPEG segment header");
        const size_t len = (size_t(jpeg[m + 1]) << 8) | jpeg[m + 2];
        if (len < 2 || m + 1 + len > jpeg.size())
            throw ParseError("JPEG segment length out of range");
        segs.push_back({pos, marker, (m + 1 + len) - pos});
        pos = m + 1 + len;
    }
    return segs;
}

std::optional<Segment> find_exif_segment(std::span<const uint8_t> jpeg, const std::vector<Segment>& segs)
{
    for (const auto& s : segs) {
        if (s.marker != 0xE1 || s.length < 4 + kExifHeader.size())
            continue;
        if (std::memcmp(jpeg.data() + s.start + 4, kExifHeader.data(), kExifHeader.size()) == 0)
            return s;
    }
    return std::nullopt;
}

std::span<const uint8_t> tiff_payload(std::span<const uint8_t> jpeg, const Segment& s)
{
    const size_t off = s.start + 4 + kExifHeader.size();
    return jpeg.subspan(off, s.start + s.length - off);
}

ByteOrder tiff_order(std::span<const uint8_t> tiff)
{
    if (tiff.size() < 8)
        throw ParseError("EXIF TIFF header truncated");
    if (tiff[0] == 'I' && tiff[1] == 'I')
        return ByteOrder::Little;
    if (tiff[0] == 'M' && tiff[1] == 'M')
        return ByteOrder::Big;
    throw ParseError("EXIF TIFF header has no byte-order mark");
}

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

struct IfdEntry {
    uint16_t tag = 0;
    uint16_t type = 0;
    uint32_t count = 0;
    size_t entry_offset = 0;  // offset of the 12-byte entry
    size_t value_offset = 0;  // offset of the value bytes
    bool inline_value = true;
};

struct Ifd {
    size_t offset = 0;
    std::vector<IfdEntry> entries;
    uint32_t next = 0;

    const IfdEntry* find(uint16_t tag) const
    {
        for (const auto& e : entries)
            if (e.tag == tag)
                return &e;
        return nullptr;
    }
};

Ifd read_ifd(const ByteReader& r, size_t off)
{
    Ifd ifd;
    ifd.offset = off;
    const uint16_t n = r.u16(off);
    if (n > 4096)
        throw ParseError("implausible EXIF IFD entry count");
    r.require(off + 2, 12 * size_t(n) + 4);
    for (uint16_t i = 0; i < n; ++i) {
        IfdEntry e;
        e.entry_offset = off + 2 + 12 * size_t(i);
        e.tag = r.u16(e.entry_offset);
        e.type = r.u16(e.entry_offset + 2);
        e.count = r.u32(e.entry_offset + 4);
        const size_t total = type_size(e.type) * size_t(e.count);
        e.inline_value = total <= 4;
        e.value_offset = e.inline_value ? e.entry_offset + 8 : r.u32(e.entry_offset + 8);
        if (type_size(e.type) != 0)
            r.require(e.value_offset, total);
        ifd.entries.push_back(e);
    }
    ifd.next = r.u32(off + 2 + 12 * size_t(n));
    return ifd;
}

std::string read_ascii(const ByteReader& r, const IfdEntry& e)
{
    if (e.type != kTypeAscii && e.type != 7)
        throw ParseError("EXIF tag " + std::to_string(e.tag) + " is not ASCII");
    r.require(e.value_offset, e.count);
    std::string s(reinterpret_cast<const char*>(r.bytes().data() + e.value_offset), e.count);
    while (!s.empty() && (s.back() == '\0' || s.back() == ' '))
        s.pop_back();
    return s;
}

uint32_t read_offset_tag(const ByteReader& r, const IfdEntry& e)
{
    if (e.type == kTypeLong)
        return r.u32(e.value_offset);
    if (e.type == kTypeShort)
        return r.u16(e.value_offset);
    if (e.type == 13)  // IFD
        return r.u32(e.value_offset);
    throw ParseError("EXIF IFD pointer has unexpected type");
}

// Raw GPS values as stored, compared field-by-field for idempotent rewrites.
struct GpsFields {
    char lat_ref = 0;
    std::array<uint32_t, 6> lat{};
    char lon_ref = 0;
    std::array<uint32_t, 6> lon{};
    std::optional<uint8_t> alt_ref;
    std::optional<std::array<uint32_t, 2>> alt;

    friend bool operator==(const GpsFields&, const GpsFields&) = default;
};

std::array<uint32_t, 6> encode_dms(double deg)
{
    const long long total = std::llround(std::abs(deg) * 3600.0 * kSecondsDenominator);
    const long long per_deg = 3600LL * kSecondsDenominator;
    const long long per_min = 60LL * kSecondsDenominator;
    const long long d = total / per_deg;
    const long long rem = total % per_deg;
    return {static_cast<uint32_t>(d), 1, static_cast<uint32_t>(rem / per_min), 1,
            static_cast<uint32_t>(rem % per_min), kSecondsDenominator};
}

GpsFields encode_gps(const GeoPoint& p)
{
    p.validate();
    GpsFields f;
    f.lat_ref = p.lat < 0 ? 'S' : 'N';
    f.lat = encode_dms(p.lat);
    f.lon_ref = p.lon < 0 ? 'W' : 'E';
    f.lon = encode_dms(p.lon);
    if (p.alt) {
        const long long a = std::llround(std::abs(*p.alt) * kAltitudeDenominator);
        if (a > 0xFFFFFFFFLL)
            throw InvalidArgument("altitude too large for EXIF rational");
        f.alt_ref = *p.alt < 0 ? 1 : 0;
        f.alt = std::array<uint32_t, 2>{static_cast<uint32_t>(a), kAltitudeDenominator};
    }
    return f;
}

std::optional<GpsFields> decode_gps_fields(const ByteReader& r, const Ifd& gps)
{
    const auto* lat_ref = gps.find(1);
    const auto* lat = gps.find(2);
    const auto* lon_ref = gps.find(3);
    const auto* lon = gps.find(4);
    if (!lat_ref || !lat || !lon_ref || !lon)
        return std::nullopt;
    if (lat->type != kTypeRational || lat->count != 3 || lon->type != kTypeRational || lon->count != 3)
        throw ParseError("EXIF GPS coordinates are not 3 rationals");
    GpsFields f;
    const auto lr = read_ascii(r, *lat_ref);
    const auto gr = read_ascii(r, *lon_ref);
    f.lat_ref = lr.empty() ? 0 : lr[0];
    f.lon_ref = gr.empty() ? 0 : gr[0];
    for (int i = 0; i < 6; ++i) {
        f.lat[i] = r.u32(lat->value_offset + 4 * i);
        f.lon[i] = r.u32(lon->value_offset + 4 * i);
    }
    if (const auto* alt = gps.find(6); alt && alt->type == kTypeRational && alt->count >= 1) {
        f.alt = std::array<uint32_t, 2>{r.u32(alt->value_offset), r.u32(alt->value_offset + 4)};
        const auto* ref = gps.find(5);
        f.alt_ref = ref ? r.u8(ref->value_offset) : uint8_t{0};
    }
    return f;
}

double dms_to_degrees(const std::array<uint32_t, 6>& v)
{
    double out = 0;
    const double scale[3] = {1.0, 60.0, 3600.0};
    for (int i = 0; i < 3; ++i) {
        if (v[2 * i + 1] == 0) {
            if (v[2 * i] == 0)
                continue;
            throw ParseError("EXIF GPS rational has zero denominator");
        }
        out += double(v[2 * i]) / double(v[2 * i + 1]) / scale[i];
    }
    return out;
}

GeoPoint fields_to_point(const GpsFields& f)
{
    GeoPoint p;
    p.lat = dms_to_degrees(f.lat) * (f.lat_ref == 'S' ? -1 : 1);
    p.lon = dms_to_degrees(f.lon) * (f.lon_ref == 'W' ? -1 : 1);
    if (f.alt && (*f.alt)[1] != 0)
        p.alt = double((*f.alt)[0]) / double((*f.alt)[1]) * (f.alt_ref.value_or(0) == 1 ? -1 : 1);
    if (p.lon == 180.0)
        p.lon = -180.0;
    p.validate();
    return p;
}

std::optional<Ifd> gps_ifd(const ByteReader& r, const Ifd& ifd0)
{
    const auto* e = ifd0.find(kTagGpsIfd);
    if (!e)
        return std::nullopt;
    return read_ifd(r, read_offset_tag(r, *e));
}

// GPS IFD serialized at absolute TIFF offset `at`.
void append_gps_ifd(ByteWriter& w, const GpsFields& f)
{
    const size_t at = w.size();
    const uint16_t n = f.alt ? 7 : 5;
    const size_t data = at + 2 + 12 * size_t(n) + 4;
    size_t cursor = data;

    auto entry = [&](uint16_t tag, uint16_t type, uint32_t count, std::array<uint8_t, 4> inline_bytes) {
        w.u16(tag);
        w.u16(type);
        w.u32(count);
        w.bytes(inline_bytes);
    };
    auto entry_offset = [&](uint16_t tag, uint32_t count, size_t bytes) {
        w.u16(tag);
        w.u16(kTypeRational);
        w.u32(count);
        w.u32(static_cast<uint32_t>(cursor));
        cursor += bytes;
    };

    w.u16(n);
    entry(0, kTypeByte, 4, {2, 3, 0, 0});
    entry(1, kTypeAscii, 2, {static_cast<uint8_t>(f.lat_ref), 0, 0, 0});
    entry_offset(2, 3, 24);
    entry(3, kTypeAscii, 2, {static_cast<uint8_t>(f.lon_ref), 0, 0, 0});
    entry_offset(4, 3, 24);
    if (f.alt) {
        entry(5, kTypeByte, 1, {*f.alt_ref, 0, 0, 0});
        entry_offset(6, 1, 8);
    }
    w.u32(0);
    for (uint32_t v : f.lat)
        w.u32(v);
    for (uint32_t v : f.lon)
        w.u32(v);
    if (f.alt) {
        w.u32((*f.alt)[0]);
        w.u32((*f.alt)[1]);
    }
}

// End offset of everything an IFD owns (entries plus out-of-line values),
// and the lowest out-of-line value offset.
std::pair<size_t, size_t> ifd_extent(const Ifd& ifd)
{
    size_t end = ifd.offset + 2 + 12 * ifd.entries.size() + 4;
    size_t low = end;
    for (const auto& e : ifd.entries) {
        if (e.inline_value)
            continue;
        end = std::max(end, e.value_offset + type_size(e.type) * e.count);
        low = std::min(low, e.value_offset);
    }
    return {end, low};
}

std::vector<uint8_t> fresh_tiff(const GpsFields& f)
{
    ByteWriter w(ByteOrder::Little);
    w.bytes(std::array<uint8_t, 4>{'I', 'I', 42, 0});
    w.u32(8);
    // IFD0 with a single GPS pointer entry.
    w.u16(1);
    w.u16(kTagGpsIfd);
    w.u16(kTypeLong);
    w.u32(1);
    w.u32(8 + 2 + 12 + 4);
    w.u32(0);
    append_gps_ifd(w, f);
    return std::move(w.buffer());
}

std::vector<uint8_t> splice_app1(std::span<const uint8_t> jpeg, size_t start, size_t old_len,
                                 const std::vector<uint8_t>& tiff)
{
    const size_t payload = 2 + kExifHeader.size() + tiff.size();
    if (payload > 0xFFFF)
        throw Error("EXIF block exceeds the 64 KiB APP1 limit");
    std::vector<uint8_t> out;
    out.reserve(jpeg.size() + payload + 2);
    out.insert(out.end(), jpeg.begin(), jpeg.begin() + static_cast<std::ptrdiff_t>(start));
    out.push_back(0xFF);
    out.push_back(0xE1);
    out.push_back(static_cast<uint8_t>(payload >> 8));
    out.push_back(static_cast<uint8_t>(payload & 0xFF));
    out.insert(out.end(), kExifHeader.begin(), kExifHeader.end());
    out.insert(out.end(), tiff.begin(), tiff.end());
    out.insert(out.end(), jpeg.begin() + static_cast<std::ptrdiff_t>(start + old_len), jpeg.end());
    return out;
}

}  // namespace

double parse_exif_datetime(const std::string& text)
{
    static const std::regex re(R"(^\s*(\d{4}):(\d{2}):(\d{2})[ T](\d{2}):(\d{2}):(\d{2})\s*$)");
    std::smatch m;
    if (!std::regex_match(text, m, re))
        throw ParseError("malformed EXIF date/time '" + text + "'");
    using namespace std::chrono;
    const year_month_day ymd{year{std::stoi(m[1])}, month{static_cast<unsigned>(std::stoi(m[2]))},
                             day{static_cast<unsigned>(std::stoi(m[3]))}};
    const int hh = std::stoi(m[4]), mm = std::stoi(m[5]), ss = std::stoi(m[6]);
    if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60)
        throw ParseError("invalid EXIF date/time '" + text + "'");
    const auto days = sys_days{ymd}.time_since_epoch().count();
    return double(days) * 86400.0 + hh * 3600.0 + mm * 60.0 + ss;
}

ExifGpsRecord parse_exif(std::span<const uint8_t> jpeg, const std::string& image_path)
{
    const auto segs = scan_segments(jpeg);
    const auto app1 = find_exif_segment(jpeg, segs);
    if (!app1)
        throw ParseError("no APP1 EXIF block in " + (image_path.empty() ? std::string("image") : image_path));
    const auto tiff = tiff_payload(jpeg, *app1);
    ByteReader r(tiff, tiff_order(tiff));
    if (r.u16(2) != 42)
        throw ParseError("EXIF TIFF header has a bad magic number");

    ExifGpsRecord rec;
    rec.image_path = image_path;
    try {
        const Ifd ifd0 = read_ifd(r, r.u32(4));
        std::optional<std::string> dto, subsec, tz;
        if (const auto* ep = ifd0.find(kTagExifIfd)) {
            const Ifd exif = read_ifd(r, read_offset_tag(r, *ep));
            if (const auto* e = exif.find(kTagDateTimeOriginal))
                dto = read_ascii(r, *e);
            if (const auto* e = exif.find(kTagSubSecTimeOriginal))
                subsec = read_ascii(r, *e);
            if (const auto* e = exif.find(kTagOffsetTimeOriginal))
                tz = read_ascii(r, *e);
        }
        if (!dto || dto->empty())
            throw ParseError("EXIF block has no DateTimeOriginal");
        rec.timestamp = parse_exif_datetime(*dto);
        if (subsec && !subsec->empty() && subsec->find_first_not_of("0123456789") == std::string::npos)
            rec.timestamp += std::stod("0." + *subsec);
        if (tz) {
            static const std::regex tz_re(R"(^([+-])(\d{2}):(\d{2})$)");
            std::smatch m;
            if (std::regex_match(*tz, m, tz_re)) {
                const double off = std::stoi(m[2]) * 3600.0 + std::stoi(m[3]) * 60.0;
                rec.timestamp -= (m[1] == "-" ? -off : off);
            }
        }
        if (auto gps = gps_ifd(r, ifd0))
            if (auto f = decode_gps_fields(r, *gps))
                rec.gps = fields_to_point(*f);
    } catch (const ParseError& e) {
        throw ParseError((image_path.empty() ? std::string("EXIF: ") : image_path + ": ") + e.what());
    }
    return rec;
}

ExifGpsRecord read_exif(const std::string& path)
{
    const auto bytes = detail::read_file_bytes(path);
    return parse_exif(bytes, path);
}

std::optional<GeoPoint> parse_exif_gps(std::span<const uint8_t> jpeg)
{
    const auto segs = scan_segments(jpeg);
    const auto app1 = find_exif_segment(jpeg, segs);
    if (!app1)
        return std::nullopt;
    const auto tiff = tiff_payload(jpeg, *app1);
    ByteReader r(tiff, tiff_order(tiff));
    const Ifd ifd0 = read_ifd(r, r.u32(4));
    auto gps = gps_ifd(r, ifd0);
    if (!gps)
        return std::nullopt;
    auto f = decode_gps_fields(r, *gps);
    if (!f)
        return std::nullopt;
    return fields_to_point(*f);
}

std::optional<GeoPoint> read_exif_gps(const std::string& path)
{
    const auto bytes = detail::read_file_bytes(path);
    try {
        return parse_exif_gps(bytes);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

std::vector<uint8_t> embed_exif_gps(std::span<const uint8_t> jpeg, const GeoPoint& p)
{
    const GpsFields target = encode_gps(p);
    const auto segs = scan_segments(jpeg);
    const auto app1 = find_exif_segment(jpeg, segs);

    if (!app1) {
        // Keep a leading JFIF APP0 in front of the new APP1.
        size_t insert_at = 2;
        for (const auto& s : segs) {
            if (s.marker != 0xE0)
                break;
            insert_at = s.start + s.length;
        }
        return splice_app1(jpeg, insert_at, 0, fresh_tiff(target));
    }

    const auto payload = tiff_payload(jpeg, *app1);
    const ByteOrder order = tiff_order(payload);
    std::vector<uint8_t> tiff(payload.begin(), payload.end());
    const Ifd ifd0 = [&] {
        ByteReader r(tiff, order);
        if (r.u16(2) != 42)
            throw ParseError("EXIF TIFF header has a bad magic number");
        return read_ifd(r, r.u32(4));
    }();
    const IfdEntry* gps_ptr = ifd0.find(kTagGpsIfd);

    if (gps_ptr) {
        ByteReader r(tiff, order);
        const Ifd old = read_ifd(r, read_offset_tag(r, *gps_ptr));
        if (decode_gps_fields(r, old) == target)
            return {jpeg.begin(), jpeg.end()};
        // Reclaim a previous GPS IFD that sits at the tail of the block so
        // repeated rewrites do not grow the file.
        const auto [end, low] = ifd_extent(old);
        const size_t aligned_end = end + (end & 1);
        if ((end == tiff.size() || aligned_end == tiff.size()) && low >= old.offset && old.offset > ifd0.offset)
            tiff.resize(old.offset);
    }

    ByteWriter w(order);
    w.buffer() = std::move(tiff);
    if (w.size() & 1)
        w.u8(0);

    if (gps_ptr) {
        const size_t gps_at = w.size();
        append_gps_ifd(w, target);
        ByteWriter patch(order);
        patch.u16(kTagGpsIfd);
        patch.u16(kTypeLong);
        patch.u32(1);
        patch.u32(static_cast<uint32_t>(gps_at));
        std::memcpy(w.buffer().data() + gps_ptr->entry_offset, patch.buffer().data(), 12);
    } else {
        // IFD0 cannot grow in place; write an extended copy at the end and
        // repoint the header. Out-of-line values keep their offsets. The GPS
        // IFD goes last so later rewrites can reclaim it.
        const size_t new_ifd0 = w.size();
        const size_t gps_at = new_ifd0 + 2 + 12 * (ifd0.entries.size() + 1) + 4;
        const std::vector<uint8_t> src = w.buffer();
        w.u16(static_cast<uint16_t>(ifd0.entries.size() + 1));
        bool inserted = false;
        auto put_gps = [&] {
            w.u16(kTagGpsIfd);
            w.u16(kTypeLong);
            w.u32(1);
            w.u32(static_cast<uint32_t>(gps_at));
            inserted = true;
        };
        for (const auto& e : ifd0.entries) {
            if (!inserted && e.tag > kTagGpsIfd)
                put_gps();
            w.bytes(std::span<const uint8_t>(src.data() + e.entry_offset, 12));
        }
        if (!inserted)
            put_gps();
        w.u32(ifd0.next);
        w.patch_u32(4, static_cast<uint32_t>(new_ifd0));
        append_gps_ifd(w, target);
    }
    return splice_app1(jpeg, app1->start, app1->length, w.buffer());
}

bool write_exif_gps(const std::string& path, const GeoPoint& p)
{
    const auto bytes = detail::read_file_bytes(path);
    std::vector<uint8_t> out;
    try {
        out = embed_exif_gps(bytes, p);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
    if (out == bytes)
        return false;
    detail::write_file_bytes(path, out);
    return true;
}

std::pair<int, int> jpeg_dimensions(std::span<const uint8_t> jpeg)
{
    for (const auto& s : scan_segments(jpeg)) {
        const uint8_t m = s.marker;
        if (m >= 0xC0 && m <= 0xCF && m != 0xC4 && m != 0xC8 && m != 0xCC) {
            if (s.length < 9)
                throw ParseError("truncated JPEG frame header");
            const uint8_t* p = jpeg.data() + s.start + 4;
            const int h = (p[1] << 8) | p[2];
            const int w = (p[3] << 8) | p[4];
            return {w, h};
        }
    }
    throw ParseError("JPEG has no frame header");
}

std::pair<int, int> jpeg_dimensions(const std::string& path)
{
    const auto bytes = detail::read_file_bytes(path);
    try {
        return jpeg_dimensions(bytes);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

}  // namespace orthotrace::formats
