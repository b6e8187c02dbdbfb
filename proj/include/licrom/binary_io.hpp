#pragma once

// Little-endian helpers shared by the LCRM / LCRS / LCRW containers.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "licrom/errors.hpp"

namespace licrom::io {

template <class T>
inline void write_le(std::ostream &os, T value) {
    static_assert(std::is_arithmetic_v<T>);
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    U bits = std::bit_cast<U>(value);
    std::array<char, sizeof(T)> bytes{};
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
    os.write(bytes.data(), bytes.size());
}

// Reads a little-endian value; throws FormatError on truncation with the
// byte offset at which the read started.
template <class T>
inline T read_le(std::istream &is) {
    static_assert(std::is_arithmetic_v<T>);
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    const auto where = static_cast<std::size_t>(is.tellg());
    std::array<unsigned char, sizeof(T)> bytes{};
    if (!is.read(reinterpret_cast<char *>(bytes.data()), bytes.size()))
        throw FormatError("truncated file", 0, where);
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
    return std::bit_cast<T>(bits);
}

inline void write_magic(std::ostream &os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream &is, const char (&magic)[5]) {
    char got[4] = {};
    if (!is.read(got, 4)) throw FormatError("truncated file: missing magic", 0, 0);
    if (std::memcmp(got, magic, 4) != 0)
        throw FormatError(std::string("bad magic, expected ") + magic, 0, 0);
}

inline void write_blob(std::ostream &os, const std::string &blob) {
    write_le<std::uint64_t>(os, blob.size());
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

inline std::string read_blob(std::istream &is, std::uint64_t max_bytes) {
    const auto n = read_le<std::uint64_t>(is);
    if (n > max_bytes) throw FormatError("length field exceeds remaining file size", 0, static_cast<std::size_t>(is.tellg()));
    std::string s(static_cast<std::size_t>(n), '\0');
    if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n)))
        throw FormatError("truncated blob", 0, static_cast<std::size_t>(is.tellg()));
    return s;
}

// Bytes left between the current read position and end of stream.
inline std::uint64_t remaining(std::istream &is) {
    const auto here = is.tellg();
    is.seekg(0, std::ios::end);
    const auto end = is.tellg();
    is.seekg(here);
    return static_cast<std::uint64_t>(end - here);
}

} // namespace licrom::io
