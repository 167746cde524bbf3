#ifndef BABYSEG_RNG_HPP
#define BABYSEG_RNG_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace babyseg {

// Deterministic splittable random stream built on the splitmix64 mixer.
// The integer stream depends only on (seed, call sequence), never on the
// platform or standard library, so datasets regenerate identically.
// split() derives an independent child stream from the current state and a
// caller-chosen key without consuming draws from the parent.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) {
        if (hi < lo) throw std::invalid_argument("Rng::uniform: hi < lo");
        return lo + (hi - lo) * uniform();
    }

    // Uniform integer in [lo, hi], both inclusive.
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw std::invalid_argument("Rng::uniform_int: hi < lo");
        const std::uint64_t span = std::uint64_t(hi) - std::uint64_t(lo) + 1;
        return int(lo + std::int64_t(next_u64() % span));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; one value per call, no cached spare,
    // so the draw count stays predictable for stream accounting.
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Child stream keyed by (state, key). Does not advance the parent.
    Rng split(std::uint64_t key) const {
        return Rng(mix(state_ ^ mix(key + 0x632be59bd9b4e019ull)));
    }

    std::uint64_t state() const { return state_; }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

} // namespace babyseg

#endif // BABYSEG_RNG_HPP
