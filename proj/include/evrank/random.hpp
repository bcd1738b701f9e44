#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace evrank {

/// All stochastic code takes an explicit generator; helpers below avoid the
/// implementation-defined std distributions so draws are identical across
/// standard libraries.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double low, double high) {
    return low + (high - low) * uniform01(rng);
}

/// Exponential draw with the given rate.
inline double exponential(Rng& rng, double rate) {
    return -std::log1p(-uniform01(rng)) / rate;
}

inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

/// Standard normal via Box-Muller (one of the pair is discarded).
inline double standard_normal(Rng& rng) {
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Gamma(shape, 1) by Marsaglia-Tsang; shape >= 1.
inline double gamma_unit(Rng& rng, double shape) {
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = standard_normal(rng);
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform01(rng);
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
}

inline std::uint64_t poisson(Rng& rng, double mean) {
    // Counting exponential arrivals on [0, 1); fine for the moderate means used here.
    std::uint64_t k = 0;
    double t = exponential(rng, mean);
    while (t < 1.0) {
        ++k;
        t += exponential(rng, mean);
    }
    return k;
}

}  // namespace evrank
