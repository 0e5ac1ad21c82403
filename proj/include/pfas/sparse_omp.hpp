// SPDX-License-Identifier: Apache-2.0
//
// Greedy shared-support estimator. Each angular-delay cell i = l * |B| + b
// owns a pair of measurement columns (one per polarization); selection ranks
// cells by the residual energy their exact two-column least-squares fit
// captures, then the whole support is refit jointly.
// The Kronecker structure keeps the sweep at two matrix products per
// iteration and the refit at an incrementally updated Cholesky factor.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "pfas/sounding.hpp"

namespace pfas {

struct OmpResult {
    SparseCoeffs coeffs;
    std::vector<int> support_order;       // vectorized cell indices, selection order
    std::vector<double> residual_history; // squared residual norm after each refit
    double initial_residual = 0.0;        // squared norm of the observation
    int iterations = 0;
    bool saturated = false; // cap hit, rank trouble, or non-decreasing residual
};

// Cells whose column pair is numerically zero are never selected.
inline constexpr double omp_degenerate_col = 1e-12;

// Relative floor that stops noiseless runs once the residual is at the
// round-off level of the observation energy.
inline constexpr double omp_rel_floor = 1e-24;

// Best remaining cell for the residual (given as the m_tilde x N_c matrix
// form of r). Ties break to the smallest vectorized index; excluded must
// have one flag per cell. Returns -1 when candidates remain but all are
// degenerate; throws when every cell is excluded.
int select_index(const Eigen::MatrixXcd& residual, const ReducedObservation& reduced,
                 const std::vector<std::uint8_t>& excluded);

struct SupportFit {
    Eigen::VectorXcd psi_v, psi_h;  // one entry per support cell
    Eigen::MatrixXcd residual;      // m_tilde x N_c
};

// Joint least squares on the given cells (vectorized indices). Throws
// NumericalError when the selected columns are rank deficient.
SupportFit fit_support(const std::vector<int>& support, const ReducedObservation& reduced);

// Full greedy loop. Stops when the squared residual drops to
// m_tilde * N_c * noise_var (or to round-off, whichever is larger), or at
// max_iter (0 picks the default cap min(m_tilde * N_c / 2, 256)).
OmpResult run_momp(const ReducedObservation& reduced, double noise_var, int max_iter = 0);

// Convenience overload using the plan's own noise variance.
OmpResult run_momp(const ReducedObservation& reduced);

} // namespace pfas
