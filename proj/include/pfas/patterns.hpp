// SPDX-License-Identifier: Apache-2.0
//
// Complex radiation pattern families for reconfigurable-pixel antennas.
// Each antenna element can switch between n_states discrete patterns; a
// pattern maps (state, polarization, direction) to a complex field value.
// Three families are provided: a seeded synthetic family built from a
// truncated spherical-harmonic expansion, the upper-hemisphere isotropic
// reference used by fixed-antenna baselines, and tabulated patterns imported
// from a text grid file.

#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "pfas/common.hpp"

namespace pfas {

enum class Pol { V, H };

namespace detail {

struct PatternSynth {
    int n_states = 0;
    int order = 0;
    // Coefficient layout per (state, pol): for l = 0..order the m = 0 term,
    // then (e^{+im phi}, e^{-im phi}) pairs for m = 1..l.
    std::vector<std::vector<cplx>> coeff_v, coeff_h;
};

struct PatternIso {};

struct PatternTable {
    int n_states = 0;
    int n_theta = 0; // theta samples, uniform over [0, pi], >= 2
    int n_phi = 0;   // phi samples, uniform over [0, 2*pi), periodic
    // Row-major theta-outer grids, one per (state, pol).
    std::vector<std::vector<cplx>> grid_v, grid_h;
};

} // namespace detail

class PatternSet {
  public:
    // Seeded synthetic family: per (state, polarization) an order-limited
    // spherical-harmonic expansion with complex Gaussian coefficients,
    // jointly normalized so every state radiates unit average power over the
    // sphere. States are redrawn if they correlate above 0.99 with an
    // earlier state, so the set is guaranteed to be diverse.
    static PatternSet synthesize(std::uint64_t seed, int n_states, int order);

    // Single-state reference: constant magnitude over the upper hemisphere
    // (theta <= pi/2), zero below, unit average power over the full sphere.
    static PatternSet isotropic();

    int n_states() const;
    std::uint64_t seed() const { return seed_; }

    // state is 1-based in [1, n_states].
    cplx eval(int state, Pol pol, const Direction& dir) const;

    friend PatternSet load_pattern_table(const std::string& path);

  private:
    PatternSet() = default;
    std::variant<detail::PatternSynth, detail::PatternIso, detail::PatternTable> data_;
    std::uint64_t seed_ = 0;
};

// Weighted combination over states: sum_i weights[i] * eval(i+1, pol, dir).
// Linear in the weights; a one-hot weight vector reproduces eval exactly.
cplx mixed_pattern(const PatternSet& set, const std::vector<double>& weights, Pol pol,
                   const Direction& dir);

// Text grid import/export. One row per sample:
//   state pol theta_idx phi_idx re im
// with 1-based state, pol in {V, H}, theta_idx in [0, n_theta), phi_idx in
// [0, n_phi). theta_idx maps to theta = pi * theta_idx / (n_theta - 1) and
// phi_idx to phi = 2*pi * phi_idx / n_phi (periodic). '#' starts a comment.
// Every (state, pol) grid must be complete; evaluation between samples is
// bilinear with azimuth wraparound.
PatternSet load_pattern_table(const std::string& path);
void save_pattern_table(const PatternSet& set, int n_theta, int n_phi, const std::string& path);

} // namespace pfas
