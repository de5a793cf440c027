#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace transit {

// Deterministic splitmix64 stream. All randomness in the library flows
// through this type so that runs are reproducible bit-for-bit across
// platforms; the C++ standard distributions are implementation-defined
// and are deliberately not used.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes two uniforms per call.
    double gaussian() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream; distinct salts give decorrelated streams.
    Rng fork(std::uint64_t salt) const {
        Rng mixer(state_ ^ (0xA5A5A5A55A5A5A5AULL + salt * 0x9E3779B97F4A7C15ULL));
        return Rng(mixer.next_u64());
    }

    Rng fork(const std::string& tag) const {
        std::uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : tag) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        return fork(h);
    }

private:
    std::uint64_t state_;
};

}  // namespace transit
