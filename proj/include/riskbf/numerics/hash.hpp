#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace riskbf {

/// 64-bit FNV-1a, used for config, checkpoint and file fingerprints.
class Fnv1a {
public:
    void update(std::span<const std::byte> bytes) {
        for (std::byte b : bytes) {
            state_ ^= static_cast<std::uint64_t>(b);
            state_ *= 0x100000001B3ull;
        }
    }
    void update(std::string_view s) { update(std::as_bytes(std::span(s.data(), s.size()))); }
    void update(double x) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof bits);
        update(bits);
    }
    void update(std::uint64_t x) {
        std::byte b[8];
        for (int k = 0; k < 8; ++k) b[k] = static_cast<std::byte>((x >> (8 * k)) & 0xFF);
        update(std::span<const std::byte>(b, 8));
    }
    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xCBF29CE484222325ull;
};

inline std::string hex64(std::uint64_t h) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int k = 15; k >= 0; --k, h >>= 4) out[static_cast<std::size_t>(k)] = digits[h & 0xF];
    return out;
}

inline std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    Fnv1a h;
    char buf[1 << 14];
    while (in) {
        in.read(buf, sizeof buf);
        const auto got = in.gcount();
        if (got > 0) h.update(std::as_bytes(std::span(buf, static_cast<std::size_t>(got))));
    }
    return h.digest();
}

}  // namespace riskbf
