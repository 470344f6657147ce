#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "orthotrace/error.hpp"

namespace orthotrace::detail {

enum class ByteOrder { Little, Big };

/// Bounds-checked reads from a byte buffer in a fixed byte order.
class ByteReader {
public:
    ByteReader(std::span<const uint8_t> data, ByteOrder order) : data_(data), order_(order) {}

    size_t size() const { return data_.size(); }
    ByteOrder order() const { return order_; }
    std::span<const uint8_t> bytes() const { return data_; }

    void require(size_t off, size_t n) const
    {
        if (off > data_.size() || n > data_.size() - off)
            throw ParseError("offset out of range (" + std::to_string(off) + "+" + std::to_string(n) + " > "
                             + std::to_string(data_.size()) + ")");
    }

    uint8_t u8(size_t off) const
    {
        require(off, 1);
        return data_[off];
    }

    uint16_t u16(size_t off) const
    {
        require(off, 2);
        const uint8_t* p = data_.data() + off;
        return order_ == ByteOrder::Little ? static_cast<uint16_t>(p[0] | (p[1] << 8))
                                           : static_cast<uint16_t>((p[0] << 8) | p[1]);
    }

    uint32_t u32(size_t off) const
    {
        require(off, 4);
        const uint8_t* p = data_.data() + off;
        if (order_ == ByteOrder::Little)
            return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
        return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
    }

    uint64_t u64(size_t off) const
    {
        const uint64_t a = u32(off), b = u32(off + 4);
        return order_ == ByteOrder::Little ? (a | (b << 32)) : ((a << 32) | b);
    }

    double f64(size_t off) const
    {
        const uint64_t bits = u64(off);
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }

    float f32(size_t off) const
    {
        const uint32_t bits = u32(off);
        float v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }

private:
    std::span<const uint8_t> data_;
    ByteOrder order_;
};

/// Appends integers to a growing buffer in a fixed byte order.
class ByteWriter {
public:
    explicit ByteWriter(ByteOrder order) : order_(order) {}

    std::vector<uint8_t>& buffer() { return buf_; }
    const std::vector<uint8_t>& buffer() const { return buf_; }
    size_t size() const { return buf_.size(); }

    void u8(uint8_t v) { buf_.push_back(v); }

    void u16(uint16_t v)
    {
        if (order_ == ByteOrder::Little) {
            u8(v & 0xff);
            u8(v >> 8);
        } else {
            u8(v >> 8);
            u8(v & 0xff);
        }
    }

    void u32(uint32_t v)
    {
        if (order_ == ByteOrder::Little)
            for (int i = 0; i < 4; ++i)
                u8(static_cast<uint8_t>(v >> (8 * i)));
        else
            for (int i = 3; i >= 0; --i)
                u8(static_cast<uint8_t>(v >> (8 * i)));
    }

    void f64(double v)
    {
        uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        if (order_ == ByteOrder::Little)
            for (int i = 0; i < 8; ++i)
                u8(static_cast<uint8_t>(bits >> (8 * i)));
        else
            for (int i = 7; i >= 0; --i)
                u8(static_cast<uint8_t>(bits >> (8 * i)));
    }

    void bytes(std::span<const uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void zeros(size_t n) { buf_.insert(buf_.end(), n, 0); }

    void patch_u32(size_t off, uint32_t v)
    {
        ByteWriter tmp(order_);
        tmp.u32(v);
        std::memcpy(buf_.data() + off, tmp.buf_.data(), 4);
    }

private:
    ByteOrder order_;
    std::vector<uint8_t> buf_;
};

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const uint8_t> bytes);

}  // namespace orthotrace::detail
