// SPDX-License-Identifier: Apache-2.0
//
// Basic shared types for the pfas library: angular directions, complex
// scalar aliases, and the deterministic seed-splitting rule used by every
// component that consumes randomness.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace pfas {

using cplx = std::complex<double>;

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline double deg2rad(double deg) { return deg * (pi / 180.0); }
inline double rad2deg(double rad) { return rad * (180.0 / pi); }

// A propagation direction in the array's spherical coordinates.
// Azimuth phi lies in [0, 2*pi), elevation theta in [0, pi] measured from
// the array boresight (theta = 0).
struct Direction {
    double phi = 0.0;
    double theta = 0.0;

    Direction() = default;
    Direction(double phi_rad, double theta_rad) : phi(phi_rad), theta(theta_rad) {
        if (!(phi >= 0.0 && phi < two_pi))
            throw std::invalid_argument("Direction: azimuth must lie in [0, 2*pi), got " +
                                        std::to_string(phi_rad));
        if (!(theta >= 0.0 && theta <= pi))
            throw std::invalid_argument("Direction: elevation must lie in [0, pi], got " +
                                        std::to_string(theta_rad));
    }
};

// Invalid or inconsistent configuration supplied by a caller, as opposed to
// a numerical breakdown inside an otherwise valid computation. The process
// entry points map these onto distinct exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Linear algebra gave up: singular system after regularization, diverging
// iteration, an ill-conditioned matrix past its documented threshold.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Central angle between two directions on the unit sphere.
inline double great_circle_angle(const Direction& a, const Direction& b) {
    const double c = std::cos(a.theta) * std::cos(b.theta) +
                     std::sin(a.theta) * std::sin(b.theta) * std::cos(a.phi - b.phi);
    return std::acos(std::clamp(c, -1.0, 1.0));
}

// ---------------------------------------------------------------------------
// Deterministic seed splitting.
//
// All randomness in the library flows from a single master seed.  Sub-streams
// (per trial, per purpose) are derived with a counter-based generator: the
// (stream, purpose) pair indexes a SplitMix64 chain keyed by the master seed.
// The rule is part of the reproducibility contract: identical (master,
// stream, purpose) triples always yield identical engine seeds.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Purposes keep independent draws independent even within one trial.
enum class SeedPurpose : std::uint64_t {
    Patterns = 1,
    Scene = 2,
    Plan = 3,
    Noise = 4,
    TestStates = 5,
    Optimizer = 6,
    Generic = 7,
};

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, SeedPurpose purpose) {
    std::uint64_t x = splitmix64(master);
    x = splitmix64(x ^ (0x100000001b3ULL * stream));
    x = splitmix64(x ^ static_cast<std::uint64_t>(purpose));
    return x;
}

inline std::mt19937_64 make_engine(std::uint64_t master, std::uint64_t stream, SeedPurpose purpose) {
    return std::mt19937_64(derive_seed(master, stream, purpose));
}

// Circularly symmetric complex Gaussian draw with the given total variance.
inline cplx draw_cn(std::mt19937_64& rng, double variance) {
    std::normal_distribution<double> n(0.0, std::sqrt(variance / 2.0));
    return {n(rng), n(rng)};
}

} // namespace pfas
