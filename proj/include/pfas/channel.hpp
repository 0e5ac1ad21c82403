// SPDX-License-Identifier: Apache-2.0
//
// Array geometry, angular grid, scattering scenes and the two channel
// models: exact per-path synthesis at true (off-grid) angles, and the
// grid-based separable approximation used by the estimators.
//
// Grid convention: the angular grid enumerates theta in {0, step, ..., 180}
// degrees crossed with phi in {0, step, ..., 360} degrees, theta-outer
// row-major. Both azimuth endpoints are kept, so the phi = 0 and phi = 360
// columns are distinct dictionary entries that describe the same physical
// direction (a 5 degree step yields 37 * 73 = 2701 points). Nearest-point
// ties always resolve to the lower index.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pfas/common.hpp"
#include "pfas/patterns.hpp"

namespace pfas {

struct ArrayGeometry {
    int m1 = 1; // rows
    int m2 = 1; // columns

    ArrayGeometry() = default;
    ArrayGeometry(int rows, int cols) : m1(rows), m2(cols) {
        if (m1 < 1 || m2 < 1) throw std::invalid_argument("ArrayGeometry: dimensions must be >= 1");
    }
    int m() const { return m1 * m2; }
};

struct AngleGrid {
    double step_deg = 0.0;
    int n_theta = 0;
    int n_phi = 0;
    std::vector<Direction> points; // index b = theta_idx * n_phi + phi_idx

    int size() const { return n_theta * n_phi; }
    int theta_index(int b) const { return b / n_phi; }
    int phi_index(int b) const { return b % n_phi; }
    int index(int theta_idx, int phi_idx) const { return theta_idx * n_phi + phi_idx; }
};

// step_deg must divide 180 evenly.
AngleGrid make_grid(double step_deg);

// Exhaustive nearest grid point under the great-circle metric; ties go to
// the lower index.
int nearest_grid_index(const AngleGrid& grid, const Direction& dir);

// Planar array response: kron(f_{m2}(cos theta), f_{m1}(sin theta cos phi))
// with f_n(x) = (1/sqrt(n)) [1, e^{-j pi x}, ..., e^{-j pi (n-1) x}].
Eigen::VectorXcd steering_vector(const ArrayGeometry& geom, const Direction& dir);

struct PathComponent {
    Direction dir;
    int delay = 0; // integer tap in [0, delay_span)
    cplx psi_v{0.0, 0.0};
    cplx psi_h{0.0, 0.0};
};

struct ScatterScene {
    int n_users = 0;
    int delay_span = 1; // L taps
    std::vector<std::vector<PathComponent>> user_paths;
};

// Clustered random scene: per user one cluster center drawn uniformly on the
// upper hemisphere, Gaussian angular offsets per path, uniform integer
// delays, and complex Gaussian gains with a 3 dB per tap power decay.
ScatterScene synth_scene(std::uint64_t seed, int n_users, int n_paths, int delay_span,
                         double angle_spread_deg);

// Replace every path direction by its nearest grid point (delays are already
// integer). Useful for building scenes the grid model represents exactly.
ScatterScene snap_scene_to_grid(const ScatterScene& scene, const AngleGrid& grid);

// Text round-trip, one path per row: user theta phi delay vr vi hr hi.
void save_scene(const ScatterScene& scene, const std::string& path);
ScatterScene load_scene(const std::string& path);

// Angular-delay coefficients of the grid model. psi_v/psi_h are |B| x L with
// a shared support; entries outside the support are exactly zero and the
// support is contained in the mask.
struct SparseCoeffs {
    Eigen::MatrixXcd psi_v, psi_h;
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask;
    std::vector<std::pair<int, int>> support; // (b, l), sorted by l * |B| + b

    static SparseCoeffs zeros(int n_grid, int delay_span);
    int n_grid() const { return static_cast<int>(psi_v.rows()); }
    int delay_span() const { return static_cast<int>(psi_v.cols()); }
};

// Throws std::logic_error when a SparseCoeffs invariant is violated.
void validate_coeffs(const SparseCoeffs& coeffs);

// Pattern values sampled over the grid, one row per state: the channel-side
// cache every grid-based operation works from.
struct GridPatternTable {
    Eigen::MatrixXcd v, h; // n_states x |B|
    int n_states() const { return static_cast<int>(v.rows()); }
};

GridPatternTable tabulate_patterns(const PatternSet& patterns, const AngleGrid& grid);

// Per-state angular bases: column b is the steering vector at grid point b
// scaled elementwise by the per-antenna pattern values under states.
std::pair<Eigen::MatrixXcd, Eigen::MatrixXcd> angular_basis(const AngleGrid& grid,
                                                            const GridPatternTable& table,
                                                            const ArrayGeometry& geom,
                                                            const std::vector<int>& states);

// Ground-truth channel at one subcarrier (1-based n_c), exact per-path
// pattern evaluation at the true angles.
Eigen::VectorXcd exact_channel(const ScatterScene& scene, const PatternSet& patterns,
                               const ArrayGeometry& geom, const std::vector<int>& states,
                               int n_c, int n_subc, int user);

// All subcarriers at once, M x N_c.
Eigen::MatrixXcd exact_channel_all(const ScatterScene& scene, const PatternSet& patterns,
                                   const ArrayGeometry& geom, const std::vector<int>& states,
                                   int n_subc, int user);

// Grid-model channel M x N_c; the sum runs over the support only.
Eigen::MatrixXcd approx_channel(const SparseCoeffs& coeffs, const AngleGrid& grid,
                                const GridPatternTable& table, const ArrayGeometry& geom,
                                const std::vector<int>& states, int n_subc);

// Snap every path of one user onto the grid, accumulating coincident paths.
SparseCoeffs project_scene_to_grid(const ScatterScene& scene, const AngleGrid& grid, int user);

} // namespace pfas
