#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace massformer {

using rng_t = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream for (seed, index); identical regardless of which worker
// consumes it.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline rng_t make_stream(std::uint64_t seed, std::uint64_t index) {
    return rng_t{derive_seed(seed, index)};
}

// FNV-1a 64, used for content hashes of configs, datasets and checkpoints.
class fnv1a {
public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
    }
    void update(std::string_view s) { update(s.data(), s.size()); }
    template <typename T>
    void update_value(const T& v) {
        update(&v, sizeof(T));
    }
    void update(std::span<const double> v) { update(v.data(), v.size_bytes()); }
    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t hash_bytes(std::string_view s) {
    fnv1a h;
    h.update(s);
    return h.digest();
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

namespace detail {

// Shortest text that parses back to the same double.
inline std::string fmt_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace detail

}  // namespace massformer
