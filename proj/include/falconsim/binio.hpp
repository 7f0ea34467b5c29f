#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

namespace falconsim::binio {

inline void write_u16(std::ostream& os, std::uint16_t v) {
    char b[2] = {char(v & 0xff), char(v >> 8)};
    os.write(b, 2);
}
inline void write_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}
inline void write_f64(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    write_u64(os, v);
}

inline std::uint16_t read_u16(std::istream& is) {
    unsigned char b[2] = {};
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4] = {};
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
}
inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8] = {};
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}
inline double read_f64(std::istream& is) {
    const std::uint64_t v = read_u64(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

} // namespace falconsim::binio
