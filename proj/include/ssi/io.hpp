#pragma once

// Little-endian binary primitives shared by the checkpoint and dataset
// container readers/writers. Readers track the absolute byte offset so
// parse failures can name the exact position.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ssi/errors.hpp"

namespace ssi::io {

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void write_u16(std::ostream& out, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    write_bytes(out, b, 2);
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    write_bytes(out, b, 4);
}

inline void write_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

inline void write_f32_array(std::ostream& out, const float* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) write_f32(out, p[i]);
}

/// Reads exactly n bytes or throws ParseError naming `what` and the offset
/// where the data ran out. Advances pos.
inline void read_bytes(std::istream& in, void* p, std::size_t n, std::uint64_t& pos,
                       const std::string& what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw ParseError("unexpected end of file reading " + what,
                         pos + static_cast<std::uint64_t>(in.gcount()));
    pos += n;
}

inline std::uint16_t read_u16(std::istream& in, std::uint64_t& pos, const std::string& what) {
    unsigned char b[2];
    read_bytes(in, b, 2, pos, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32(std::istream& in, std::uint64_t& pos, const std::string& what) {
    unsigned char b[4];
    read_bytes(in, b, 4, pos, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline float read_f32(std::istream& in, std::uint64_t& pos, const std::string& what) {
    const std::uint32_t bits = read_u32(in, pos, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void read_f32_array(std::istream& in, float* p, std::size_t n, std::uint64_t& pos,
                           const std::string& what) {
    const std::uint64_t start = pos;
    std::vector<unsigned char> raw(n * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw ParseError("unexpected end of file reading " + what,
                         start + static_cast<std::uint64_t>(in.gcount()));
    pos += raw.size();
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) |
                                   (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                                   (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                                   (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
        std::memcpy(&p[i], &bits, 4);
    }
}

/// Shortest round-trippable decimal for a double: 17 significant digits
/// reproduce the exact bit pattern when parsed back.
inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Requires the next bytes to equal `magic`; offset 0 convention for headers.
inline void expect_magic(std::istream& in, const char* magic, std::uint64_t& pos,
                         const std::string& what) {
    const std::size_t n = std::strlen(magic);
    std::vector<char> got(n);
    const std::uint64_t start = pos;
    read_bytes(in, got.data(), n, pos, what + " magic");
    if (std::memcmp(got.data(), magic, n) != 0)
        throw ParseError("bad " + what + " magic, expected \"" + magic + "\"", start);
}

} // namespace ssi::io
