#pragma once

#include <cstdint>

namespace pwashield {

// splitmix64 finalizer; used as the mixing core of the counter-based streams.
inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Counter-based uniform draw in the open interval (0, 1), keyed by
// (seed, step, draw). Identical keys give identical values regardless of
// evaluation order or thread placement, which keeps rollouts reproducible
// and lets compared methods see common random numbers.
inline double uniform_draw(std::uint64_t seed, std::uint64_t step, std::uint64_t draw) {
    std::uint64_t h = splitmix64(seed ^ splitmix64(step));
    h = splitmix64(h ^ splitmix64(draw ^ 0xD1B54A32D192ED03ULL));
    return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

/// One run's noise stream: a view over the counter-based generator with the
/// run seed baked in.
class NoiseStream {
public:
    explicit NoiseStream(std::uint64_t seed) : seed_(seed) {}
    double uniform(std::uint64_t step, std::uint64_t draw) const {
        return uniform_draw(seed_, step, draw);
    }
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
};

}  // namespace pwashield
