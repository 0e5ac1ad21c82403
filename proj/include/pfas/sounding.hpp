// SPDX-License-Identifier: Apache-2.0
//
// Uplink sounding: pilot design, multi-block observation synthesis, and the
// SVD reduction that turns T stacked antenna blocks into a compact
// measurement the estimators consume. Also hosts the least-squares baseline.
//
// Measurement model, per user:
//   Y = [Y_1; ...; Y_T],  Y_t = H(s_t) diag(x_p) + Z_t
// In the grid model H(s_t) = (G_V(s_t) Psi_V + G_H(s_t) Psi_H) F^T, so the
// stack factors as Y = G_stack Psi F_bar^T + Z with F_bar = diag(x_p) F.
// The reduction projects everything onto the left singular basis of
// G_stack = [G_V; G_H stacks], keeping the noise white.

#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "pfas/channel.hpp"
#include "pfas/common.hpp"

namespace pfas {

enum class PilotKind { ZadoffChu, RandomQpsk };

// Polyphase sequence with |x[n]| = 1; root must be coprime with n_subc.
Eigen::VectorXcd zadoff_chu(int n_subc, int root = 1);

struct SoundingPlan {
    int n_blocks = 0;
    std::vector<std::vector<int>> block_states; // T vectors of length M
    Eigen::VectorXcd pilots;                    // length N_c, unit modulus
    double noise_var = 0.0;
    int delay_span = 1; // taps the estimator searches over
};

// Random per-block antenna states plus pilots, fully determined by the seed.
SoundingPlan make_plan(std::uint64_t seed, int n_blocks, int n_states, int m_antennas,
                       int n_subc, int delay_span, double noise_var,
                       PilotKind kind = PilotKind::ZadoffChu);

void validate_plan(const SoundingPlan& plan, int n_states, int m_antennas);

// OFDM symbols consumed by comb-4 multiplexing: four users share a symbol,
// so K users over T blocks cost T * floor(K / 4) symbols.
int comb4_overhead(int n_users, int n_blocks);

struct SoundingObservation {
    Eigen::MatrixXcd y; // (T*M) x N_c, row blocks ordered by t
    SoundingPlan plan;
};

// Grid-model observation: Y_t = (G_V(s_t) psi_v + G_H(s_t) psi_h) F_bar^T + Z_t.
SoundingObservation sound_grid(const SparseCoeffs& coeffs, const AngleGrid& grid,
                               const GridPatternTable& table, const ArrayGeometry& geom,
                               const SoundingPlan& plan, std::mt19937_64& rng);

// Exact-model observation: the channel is evaluated per path at the true
// angles, so grid mismatch shows up in the measurements.
SoundingObservation sound_exact(const ScatterScene& scene, const PatternSet& patterns,
                                const ArrayGeometry& geom, const SoundingPlan& plan, int user,
                                std::mt19937_64& rng);

// Everything the estimators need that depends only on the plan (not on the
// received data): shared across users within a trial.
struct SoundingBasis {
    Eigen::MatrixXcd u_tilde;           // (T*M) x m_tilde, orthonormal columns
    int m_tilde = 0;                    // effective rank
    Eigen::MatrixXcd g_v_proj, g_h_proj; // m_tilde x |B|
    Eigen::MatrixXcd f_bar;             // N_c x L, diag(pilots) * DFT columns
    double noise_var = 0.0;
    int n_grid = 0, delay_span = 0, n_subc = 0, n_blocks = 0, m_antennas = 0;

    // The stacked measurement operator and its adjoint in matrix form:
    // apply maps Psi (|B| x L) to A Psi F_bar^T, adjoint maps an m_tilde x N_c
    // residual back to the coefficient grid. Never materialized densely.
    Eigen::MatrixXcd apply_v(const Eigen::MatrixXcd& psi) const;
    Eigen::MatrixXcd apply_h(const Eigen::MatrixXcd& psi) const;
    Eigen::MatrixXcd adjoint_v(const Eigen::MatrixXcd& r) const;
    Eigen::MatrixXcd adjoint_h(const Eigen::MatrixXcd& r) const;
};

// Relative singular-value cutoff for the rank selection.
inline constexpr double svd_rel_threshold = 1e-6;

std::shared_ptr<const SoundingBasis> make_basis(const AngleGrid& grid,
                                                const GridPatternTable& table,
                                                const ArrayGeometry& geom,
                                                const SoundingPlan& plan);

struct ReducedObservation {
    std::shared_ptr<const SoundingBasis> basis;
    Eigen::MatrixXcd y_tilde; // m_tilde x N_c
};

ReducedObservation reduce(std::shared_ptr<const SoundingBasis> basis,
                          const SoundingObservation& obs);

// Convenience wrapper: build the basis from the observation's own plan, then
// project. Prefer make_basis + reduce when several users share one plan.
ReducedObservation preprocess(const SoundingObservation& obs, const AngleGrid& grid,
                              const GridPatternTable& table, const ArrayGeometry& geom);

// Minimum-norm least-squares fit of the full coefficient grid. The stacked
// operator is a Kronecker product, so its pseudo-inverse factors into the
// pseudo-inverses of the angular and delay factors; each factor is
// regularized with lambda = 1e-10 * trace / dim when its condition number
// exceeds 1e12. Support and mask come back all-ones.
SparseCoeffs ls_estimate(const ReducedObservation& reduced);

} // namespace pfas
