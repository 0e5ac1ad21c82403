// SPDX-License-Identifier: Apache-2.0
//
// Mask-assisted turbo variational Bayesian estimator. Refines a greedy
// initial estimate by alternating two low-dimensional LMMSE stages that are
// coupled through extrinsic messages:
//
//   stage A (delay side)   treats X = A Psi as an iid-Gaussian unknown in
//                          Y_tilde = X F_bar^T + Z and solves one shared
//                          L x L system for all projected antenna rows;
//   stage B (angular side) runs, per delay bin, a reduced LMMSE over the
//                          mask-active grid columns with a Bernoulli-Gaussian
//                          prior whose per-cell precisions alpha carry a
//                          Gamma hyperprior shared by both polarizations.
//
// The mask dilates the initial support by one cell in theta, phi (modular in
// the azimuth index) and delay; cells outside it are pinned to exactly zero
// and never enter any solve.

#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pfas/channel.hpp"
#include "pfas/sounding.hpp"

namespace pfas {

// Binary activity pattern over the (grid cell, delay bin) plane plus the
// per-delay lists of active cells the reduced solves iterate over.
struct Mask {
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> d;  // |B| x L
    std::vector<std::vector<int>> active_sets;  // per delay bin, ascending b

    int n_grid() const { return static_cast<int>(d.rows()); }
    int delay_span() const { return static_cast<int>(d.cols()); }
};

// One-cell dilation of the support in all three index directions: the 8
// neighbours in the (theta_idx, phi_idx) plane, with the azimuth index taken
// modulo the enumerated column count, crossed with delay +-1 (clipped).
// Support cells themselves are always included. Throws on empty support or
// out-of-range cells.
Mask build_mask(const std::vector<std::pair<int, int>>& support,
                const AngleGrid& grid, int delay_span);

struct VbiConfig {
    double a0 = 1e-6;             // Gamma hyperprior shape offset
    double c0 = 1e-6;             // Gamma hyperprior rate offset
    int max_iter = 20;
    double damping = 1.0;         // weight of the fresh kappa in the mix
    double var_floor = 1e-12;
    double prune_rel = 1e-4;      // final support keeps kappa >= rel * max
    double dilation_seed = 1e-3;  // kappa seed on dilation-only cells
    double divergence_factor = 1e6;
    double extrinsic_guard = 1e-2;
};

// Everything the schedule threads from one stage to the next.
struct VbiState {
    double prior_var = 0.0;       // scalar prior variance fed to stage A
    Eigen::MatrixXcd omega_apos;  // stage-A posterior mean, L x M_tilde
    double post_var = 0.0;        // Tr(C)/L of the shared stage-A covariance
    Eigen::MatrixXcd omega_blik;  // extrinsic mean passed to stage B, M_tilde x L
    double blik_var = 0.0;
    double a_tilde = 0.0;         // shared Gamma shape, a0 + 2
    Eigen::MatrixXd c_tilde;      // per-cell Gamma rate, |B| x L
    Eigen::MatrixXd kappa;        // per-cell prior variance E[1/alpha], zero off-mask
    Eigen::MatrixXcd mu_v, mu_h;  // stage-B posterior means, |B| x L
    Eigen::MatrixXd s2_v, s2_h;   // stage-B posterior variances, |B| x L
};

struct VbiIterStats {
    int iter = 0;
    double prior_var = 0.0;
    double post_var = 0.0;
    double blik_var = 0.0;
    double data_fit = 0.0;  // ||Y_tilde - A Psi_hat F_bar^T||_F
    double nmse_db = 0.0;   // vs supplied truth, NaN when absent
};

struct VbiResult {
    SparseCoeffs coeffs;
    int iterations = 0;   // completed outer iterations
    bool diverged = false;
    std::vector<VbiIterStats> trace;
};

// Scalar prior variance for stage A: the average per-row signal power
// (1/(M_tilde L)) sum_l Tr(A diag([kappa_l; kappa_l]) A^H), which collapses
// to a kappa-weighted sum of projected column powers. Clamped to var_floor.
double prior_variance(const Eigen::MatrixXd& kappa, const SoundingBasis& basis,
                      double var_floor);

struct FreqDelayPosterior {
    Eigen::MatrixXcd omega;   // L x M_tilde posterior mean of X^T
    Eigen::MatrixXcd c_post;  // shared L x L posterior covariance
    double post_var = 0.0;    // Tr(c_post)/L
};

// Stage A: C = (I/prior_var + F_bar^H F_bar / noise_var)^-1,
// Omega = C F_bar^H Y_tilde^T / noise_var. One solve, reused by every row.
FreqDelayPosterior lmmse_freq_delay(const Eigen::MatrixXcd& y_tilde,
                                    const Eigen::MatrixXcd& f_bar,
                                    double noise_var, double prior_var,
                                    double var_floor);

struct ExtrinsicMessage {
    Eigen::MatrixXcd omega;  // M_tilde x L, columns feed the per-delay solves
    double var = 0.0;
};

// Divides the prior back out of the stage-A posterior. The variance gap
// prior - post is clamped below at guard * prior so the message stays finite
// when the measurement carries almost no information.
ExtrinsicMessage extrinsic_likelihood(const FreqDelayPosterior& post,
                                      double prior_var, double guard);

// Active columns of one delay bin, gathered once per mask: a = [A_V | A_H]
// restricted to the bin's cells, and its Gram a^H a.
struct DelayBinOperator {
    Eigen::MatrixXcd a;     // M_tilde x 2n
    Eigen::MatrixXcd gram;  // 2n x 2n
};

DelayBinOperator gather_delay_operator(const SoundingBasis& basis,
                                       const std::vector<int>& active);

struct ReducedPosterior {
    Eigen::VectorXcd mu;  // [V block; H block], length 2n
    Eigen::VectorXd var;  // matching posterior variances
};

// Stage B for one delay bin: C = (diag([kappa; kappa])^-1 + gram/blik_var)^-1,
// mu = C a^H mu_blik / blik_var. kappa_active holds the bin's per-cell prior
// variances (length n, shared by both polarization blocks).
ReducedPosterior reduced_lmmse(const DelayBinOperator& op,
                               const Eigen::VectorXd& kappa_active,
                               const Eigen::VectorXcd& mu_blik, double blik_var,
                               double var_floor);

// Gamma hyperparameter refresh for one cell: shape a0 + 2 (one unit per
// polarization), rate c0 + |mu_v|^2 + |mu_h|^2 + s2_v + s2_h.
std::pair<double, double> gamma_update(double a0, double c0,
                                       std::complex<double> mu_v,
                                       std::complex<double> mu_h, double s2_v,
                                       double s2_h);

// Prior variance fed back from a Gamma(a, c) precision posterior: the
// reciprocal of the mean precision, c/a. The exact inverse moment c/(a-1)
// must not be used here: with shape a0 + 2 it doubles the per-cell variance
// relative to the per-polarization energy, and that inflation is enough to
// keep noise-only cells alive indefinitely instead of shrinking them out.
double gamma_prior_variance(double a_tilde, double c_tilde);

// Full schedule: seed kappa from the initial coefficients (dilation-only
// cells get a small constant), then iterate stage A -> extrinsic -> per-bin
// stage B -> Gamma refresh for max_iter rounds. Aborts with the partial
// result when the stage-A posterior variance exceeds divergence_factor times
// its first-iteration value. The returned support keeps mask cells whose
// kappa is within prune_rel of the largest; pruned cells are zeroed. When
// truth is supplied each trace row carries the coefficient NMSE against it.
VbiResult run_turbo_vbi(const ReducedObservation& reduced, const Mask& mask,
                        const VbiConfig& config, const SparseCoeffs& init,
                        const SparseCoeffs* truth = nullptr);

// Writes the per-iteration trace as CSV (header + one row per iteration).
void write_vbi_trace(const std::string& path,
                     const std::vector<VbiIterStats>& trace);

}  // namespace pfas
