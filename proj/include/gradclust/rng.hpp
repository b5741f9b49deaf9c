#ifndef GRADCLUST_RNG_HPP
#define GRADCLUST_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace gradclust {

// Splittable random stream keyed by (seed, stream id). Every consumer of
// randomness derives its own stream from the experiment seed and a path of
// names/indices, so trials can run on any thread schedule without coupling
// their sequences. Identical (seed, stream) always replays the same draws.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream);

    static RngStream named(std::uint64_t seed, std::string_view name);

    // Derived streams; derivation depends only on (seed, stream id), never on
    // how many draws the parent has consumed.
    RngStream child(std::uint64_t index) const;
    RngStream child(std::string_view name) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    double normal();                      // N(0, 1)
    double uniform();                     // [0, 1)
    std::uint64_t next_u64();
    std::size_t uniform_index(std::size_t n);  // uniform on {0, ..., n-1}

    // Fisher-Yates; self-contained so shuffles do not depend on the standard
    // library's unspecified std::shuffle algorithm.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t seed_, stream_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

std::vector<double> normal_sample(RngStream& rng, std::size_t n);

std::uint64_t fnv1a64(std::string_view s);
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace gradclust

#endif
