#pragma once

// Seeded randomness for the stochastic checks. std::mt19937_64 is fully
// specified by the standard, and the double conversion below is done by hand
// (top 53 bits), so streams agree across platforms and standard libraries.

#include <cstdint>
#include <random>

#include "venttsel/grid.hpp"

namespace venttsel {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

/// Random Sigma field with entries in [-1, 1] and unit max-norm.
inline BoundaryTrajectory random_direction(const Grid& g, Rng& rng)
{
    BoundaryTrajectory v(g);
    for (double& x : v.values()) x = rng.uniform(-1.0, 1.0);
    const double m = max_abs(v);
    if (m > 0.0)
        for (double& x : v.values()) x /= m;
    return v;
}

inline BoundaryTrajectory random_field(const Grid& g, Rng& rng, double lo, double hi)
{
    BoundaryTrajectory v(g);
    for (double& x : v.values()) x = rng.uniform(lo, hi);
    return v;
}

}  // namespace venttsel
