#include "gradclust/rng.hpp"

#include "gradclust/errors.hpp"

namespace gradclust {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed),
      stream_(stream),
      engine_(splitmix64(splitmix64(seed) ^ splitmix64(stream ^ 0x5bf0a8b1c9e4f2d3ull))),
      normal_(0.0, 1.0) {}

RngStream RngStream::named(std::uint64_t seed, std::string_view name) {
    return RngStream(seed, fnv1a64(name));
}

RngStream RngStream::child(std::uint64_t index) const {
    return RngStream(seed_, splitmix64(stream_) ^ splitmix64(index ^ 0x94d049bb133111ebull));
}

RngStream RngStream::child(std::string_view name) const {
    return RngStream(seed_, splitmix64(stream_) ^ fnv1a64(name));
}

double RngStream::normal() { return normal_(engine_); }

double RngStream::uniform() {
    // 53 random bits into [0, 1); avoids the library's unspecified mapping.
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::next_u64() { return engine_(); }

std::size_t RngStream::uniform_index(std::size_t n) {
    require(n > 0, "uniform_index: empty range");
    // Rejection sampling keeps the draw exactly uniform.
    const std::uint64_t limit = ~0ull - (~0ull % n);
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
}

std::vector<double> normal_sample(RngStream& rng, std::size_t n) {
    std::vector<double> out(n);
    for (double& x : out) x = rng.normal();
    return out;
}

}  // namespace gradclust
