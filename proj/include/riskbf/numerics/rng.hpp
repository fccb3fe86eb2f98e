#pragma once

// Counter-based random streams. A (seed, stream) pair fully determines the
// sequence, so work can be sharded by sample index without changing results.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace riskbf {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Stream purposes; combined with an index into a 64-bit stream id.
enum class StreamPurpose : std::uint64_t {
    scsi = 1,
    fading = 2,
    param_init = 3,
    shuffle = 4,
    test = 5,
};

inline constexpr std::uint64_t stream_id(StreamPurpose purpose, std::uint64_t index) {
    return (static_cast<std::uint64_t>(purpose) << 56) ^ (index & 0x00FFFFFFFFFFFFFFull);
}

class SeededRng {
public:
    using result_type = std::uint64_t;

    SeededRng(std::uint64_t seed, std::uint64_t stream)
        : seed_(seed), stream_(stream), key_(splitmix64(seed ^ splitmix64(stream ^ 0xD1B54A32D192ED03ull))) {}
    SeededRng(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index)
        : SeededRng(seed, stream_id(purpose, index)) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return splitmix64(key_ + 0x9E3779B97F4A7C15ull * ++counter_); }

    /// Uniform in (0, 1); never returns 0.
    double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; both outputs of a pair are used.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace riskbf
