#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace kakeya {

// std::mt19937_64 with a fixed uniform mapping, so streams agree across
// standard libraries (the <random> distributions are implementation defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next() { return eng_(); }
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform(); }
    std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }

    double normal()
    {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300)
            u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::mt19937_64 eng_;
};

} // namespace kakeya
