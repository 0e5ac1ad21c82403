// SPDX-License-Identifier: Apache-2.0

#include "pfas/channel.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace pfas {

namespace {

void check_states(const std::vector<int>& states, int m, int n_states) {
    if (static_cast<int>(states.size()) != m)
        throw std::invalid_argument("states: need one entry per antenna");
    for (int s : states)
        if (s < 1 || s > n_states) throw std::invalid_argument("states: value out of range");
}

void check_scene(const ScatterScene& scene) {
    if (scene.n_users < 1 || scene.delay_span < 1)
        throw std::invalid_argument("scene: n_users and delay_span must be >= 1");
    if (static_cast<int>(scene.user_paths.size()) != scene.n_users)
        throw std::invalid_argument("scene: path list count does not match n_users");
    for (const auto& paths : scene.user_paths) {
        if (paths.empty()) throw std::invalid_argument("scene: every user needs at least one path");
        for (const auto& p : paths) {
            if (p.delay < 0 || p.delay >= scene.delay_span)
                throw std::invalid_argument("scene: path delay outside delay span");
            if (!std::isfinite(p.psi_v.real()) || !std::isfinite(p.psi_v.imag()) ||
                !std::isfinite(p.psi_h.real()) || !std::isfinite(p.psi_h.imag()))
                throw std::invalid_argument("scene: non-finite path gain");
        }
    }
}

// Delay phase e^{-j 2 pi l n / N} for 1-based subcarrier n. The exponent is
// reduced mod N before the trig call so large l*n products keep full accuracy.
cplx delay_phase(int tap, int n_c, int n_subc) {
    const long long k = (static_cast<long long>(tap) * (n_c - 1)) % n_subc;
    const double ang = -two_pi * (static_cast<double>(k) / n_subc);
    return {std::cos(ang), std::sin(ang)};
}

} // namespace

AngleGrid make_grid(double step_deg) {
    if (!(step_deg > 0.0)) throw std::invalid_argument("make_grid: step must be positive");
    const double ratio = 180.0 / step_deg;
    const int n = static_cast<int>(std::llround(ratio));
    if (n < 1 || std::abs(ratio - n) > 1e-9 * ratio)
        throw std::invalid_argument("make_grid: step must divide 180 evenly");

    AngleGrid grid;
    grid.step_deg = step_deg;
    grid.n_theta = n + 1;
    grid.n_phi = 2 * n + 1;
    grid.points.reserve(static_cast<std::size_t>(grid.size()));
    for (int ti = 0; ti < grid.n_theta; ++ti) {
        // Ratio-first so the endpoints land exactly on pi / 2 pi and the
        // Direction range check cannot trip on a 1 ulp overshoot.
        const double theta = pi * (static_cast<double>(ti) / n);
        for (int pj = 0; pj < grid.n_phi; ++pj) {
            // The duplicated phi = 360 column is stored wrapped to 0: same
            // physical direction, distinct dictionary index.
            const double phi = (pj == 2 * n) ? 0.0 : two_pi * (static_cast<double>(pj) / (2 * n));
            grid.points.emplace_back(phi, theta);
        }
    }
    return grid;
}

int nearest_grid_index(const AngleGrid& grid, const Direction& dir) {
    if (grid.points.empty()) throw std::invalid_argument("nearest_grid_index: empty grid");
    int best = 0;
    double best_ang = great_circle_angle(grid.points[0], dir);
    for (int b = 1; b < grid.size(); ++b) {
        const double ang = great_circle_angle(grid.points[static_cast<std::size_t>(b)], dir);
        if (ang < best_ang) {
            best_ang = ang;
            best = b;
        }
    }
    return best;
}

Eigen::VectorXcd steering_vector(const ArrayGeometry& geom, const Direction& dir) {
    const double x1 = std::sin(dir.theta) * std::cos(dir.phi);
    const double x2 = std::cos(dir.theta);
    Eigen::VectorXcd f1(geom.m1), f2(geom.m2);
    for (int i = 0; i < geom.m1; ++i) {
        const double ang = -pi * x1 * i;
        f1[i] = cplx{std::cos(ang), std::sin(ang)};
    }
    for (int i = 0; i < geom.m2; ++i) {
        const double ang = -pi * x2 * i;
        f2[i] = cplx{std::cos(ang), std::sin(ang)};
    }
    Eigen::VectorXcd beta(geom.m());
    const double scale = 1.0 / std::sqrt(static_cast<double>(geom.m()));
    for (int i2 = 0; i2 < geom.m2; ++i2)
        for (int i1 = 0; i1 < geom.m1; ++i1) beta[i2 * geom.m1 + i1] = scale * f2[i2] * f1[i1];
    return beta;
}

ScatterScene synth_scene(std::uint64_t seed, int n_users, int n_paths, int delay_span,
                         double angle_spread_deg) {
    if (n_users < 1 || n_paths < 1 || delay_span < 1)
        throw std::invalid_argument("synth_scene: counts must be >= 1");
    if (angle_spread_deg < 0.0) throw std::invalid_argument("synth_scene: negative angle spread");

    ScatterScene scene;
    scene.n_users = n_users;
    scene.delay_span = delay_span;
    scene.user_paths.resize(static_cast<std::size_t>(n_users));
    const double spread = deg2rad(angle_spread_deg);

    for (int u = 0; u < n_users; ++u) {
        auto rng = make_engine(seed, static_cast<std::uint64_t>(u), SeedPurpose::Scene);
        std::uniform_real_distribution<double> unif(0.0, 1.0);

        // Area-uniform cluster center on the upper hemisphere.
        const double phi_c = std::min(two_pi * unif(rng), std::nextafter(two_pi, 0.0));
        const double theta_c = std::acos(1.0 - unif(rng)); // cos(theta) ~ U(0, 1]

        std::normal_distribution<double> offset(0.0, spread);
        std::uniform_int_distribution<int> tap(0, delay_span - 1);
        auto& paths = scene.user_paths[static_cast<std::size_t>(u)];
        paths.reserve(static_cast<std::size_t>(n_paths));
        for (int i = 0; i < n_paths; ++i) {
            double theta = theta_c;
            double phi = phi_c;
            if (spread > 0.0) {
                theta = std::clamp(theta_c + offset(rng), 0.0, pi);
                phi = std::fmod(phi_c + offset(rng), two_pi);
                if (phi < 0.0) phi += two_pi;
                if (phi >= two_pi) phi = 0.0;
            }
            const int delay = tap(rng);
            const double gain_var = std::pow(10.0, -0.3 * delay);
            PathComponent p{Direction(phi, theta), delay, draw_cn(rng, gain_var),
                            draw_cn(rng, gain_var)};
            paths.push_back(p);
        }
    }
    return scene;
}

ScatterScene snap_scene_to_grid(const ScatterScene& scene, const AngleGrid& grid) {
    check_scene(scene);
    ScatterScene out = scene;
    for (auto& paths : out.user_paths)
        for (auto& p : paths)
            p.dir = grid.points[static_cast<std::size_t>(nearest_grid_index(grid, p.dir))];
    return out;
}

void save_scene(const ScatterScene& scene, const std::string& path) {
    check_scene(scene);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_scene: cannot open " + path);
    out << "# pfas scene v1: user theta phi delay vr vi hr hi\n";
    out << scene.n_users << ' ' << scene.delay_span << '\n';
    out.precision(17);
    for (int u = 0; u < scene.n_users; ++u)
        for (const auto& p : scene.user_paths[static_cast<std::size_t>(u)])
            out << u << ' ' << p.dir.theta << ' ' << p.dir.phi << ' ' << p.delay << ' '
                << p.psi_v.real() << ' ' << p.psi_v.imag() << ' ' << p.psi_h.real() << ' '
                << p.psi_h.imag() << '\n';
    if (!out) throw std::runtime_error("save_scene: write failed for " + path);
}

ScatterScene load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_scene: cannot open " + path);

    std::string line;
    auto next_data_line = [&](std::string& dst) {
        while (std::getline(in, dst)) {
            const auto pos = dst.find_first_not_of(" \t\r");
            if (pos == std::string::npos || dst[pos] == '#') continue;
            return true;
        }
        return false;
    };

    if (!next_data_line(line)) throw std::runtime_error("load_scene: missing header line");
    ScatterScene scene;
    {
        std::istringstream head(line);
        if (!(head >> scene.n_users >> scene.delay_span) || scene.n_users < 1 ||
            scene.delay_span < 1)
            throw std::runtime_error("load_scene: bad header line");
    }
    scene.user_paths.resize(static_cast<std::size_t>(scene.n_users));

    while (next_data_line(line)) {
        std::istringstream row(line);
        int user = 0, delay = 0;
        double theta = 0.0, phi = 0.0, vr = 0.0, vi = 0.0, hr = 0.0, hi = 0.0;
        if (!(row >> user >> theta >> phi >> delay >> vr >> vi >> hr >> hi))
            throw std::runtime_error("load_scene: malformed path row: " + line);
        if (user < 0 || user >= scene.n_users)
            throw std::runtime_error("load_scene: user index out of range");
        if (delay < 0 || delay >= scene.delay_span)
            throw std::runtime_error("load_scene: delay out of range");
        try {
            PathComponent p{Direction(phi, theta), delay, cplx{vr, vi}, cplx{hr, hi}};
            scene.user_paths[static_cast<std::size_t>(user)].push_back(p);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(std::string("load_scene: ") + e.what());
        }
    }
    try {
        check_scene(scene);
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("load_scene: ") + e.what());
    }
    return scene;
}

SparseCoeffs SparseCoeffs::zeros(int n_grid, int delay_span) {
    if (n_grid < 1 || delay_span < 1)
        throw std::invalid_argument("SparseCoeffs: dimensions must be >= 1");
    SparseCoeffs c;
    c.psi_v = Eigen::MatrixXcd::Zero(n_grid, delay_span);
    c.psi_h = Eigen::MatrixXcd::Zero(n_grid, delay_span);
    c.mask.setZero(n_grid, delay_span);
    return c;
}

void validate_coeffs(const SparseCoeffs& coeffs) {
    const int nb = coeffs.n_grid();
    const int nl = coeffs.delay_span();
    if (coeffs.psi_h.rows() != nb || coeffs.psi_h.cols() != nl || coeffs.mask.rows() != nb ||
        coeffs.mask.cols() != nl)
        throw std::logic_error("SparseCoeffs: inconsistent shapes");

    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> on_support =
        Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(nb, nl);
    long long prev = -1;
    for (const auto& [b, l] : coeffs.support) {
        if (b < 0 || b >= nb || l < 0 || l >= nl)
            throw std::logic_error("SparseCoeffs: support entry out of range");
        const long long lin = static_cast<long long>(l) * nb + b;
        if (lin <= prev) throw std::logic_error("SparseCoeffs: support not sorted or duplicated");
        prev = lin;
        if (!coeffs.mask(b, l)) throw std::logic_error("SparseCoeffs: support outside mask");
        on_support(b, l) = 1;
    }
    for (int l = 0; l < nl; ++l)
        for (int b = 0; b < nb; ++b)
            if (!on_support(b, l) && (coeffs.psi_v(b, l) != cplx{0.0, 0.0} ||
                                      coeffs.psi_h(b, l) != cplx{0.0, 0.0}))
                throw std::logic_error("SparseCoeffs: nonzero coefficient outside support");
}

GridPatternTable tabulate_patterns(const PatternSet& patterns, const AngleGrid& grid) {
    GridPatternTable table;
    table.v.resize(patterns.n_states(), grid.size());
    table.h.resize(patterns.n_states(), grid.size());
    for (int s = 1; s <= patterns.n_states(); ++s)
        for (int b = 0; b < grid.size(); ++b) {
            table.v(s - 1, b) = patterns.eval(s, Pol::V, grid.points[static_cast<std::size_t>(b)]);
            table.h(s - 1, b) = patterns.eval(s, Pol::H, grid.points[static_cast<std::size_t>(b)]);
        }
    return table;
}

std::pair<Eigen::MatrixXcd, Eigen::MatrixXcd> angular_basis(const AngleGrid& grid,
                                                            const GridPatternTable& table,
                                                            const ArrayGeometry& geom,
                                                            const std::vector<int>& states) {
    if (table.v.cols() != grid.size())
        throw std::invalid_argument("angular_basis: table does not match grid");
    check_states(states, geom.m(), table.n_states());

    const int m = geom.m();
    Eigen::MatrixXcd g_v(m, grid.size()), g_h(m, grid.size());
    for (int b = 0; b < grid.size(); ++b) {
        const Eigen::VectorXcd beta =
            steering_vector(geom, grid.points[static_cast<std::size_t>(b)]);
        for (int i = 0; i < m; ++i) {
            const int s = states[static_cast<std::size_t>(i)] - 1;
            g_v(i, b) = table.v(s, b) * beta[i];
            g_h(i, b) = table.h(s, b) * beta[i];
        }
    }
    return {std::move(g_v), std::move(g_h)};
}

Eigen::VectorXcd exact_channel(const ScatterScene& scene, const PatternSet& patterns,
                               const ArrayGeometry& geom, const std::vector<int>& states,
                               int n_c, int n_subc, int user) {
    check_scene(scene);
    check_states(states, geom.m(), patterns.n_states());
    if (user < 0 || user >= scene.n_users)
        throw std::invalid_argument("exact_channel: user index out of range");
    if (n_subc < 1 || n_c < 1 || n_c > n_subc)
        throw std::invalid_argument("exact_channel: subcarrier index out of range");

    const int m = geom.m();
    Eigen::VectorXcd h = Eigen::VectorXcd::Zero(m);
    for (const auto& p : scene.user_paths[static_cast<std::size_t>(user)]) {
        const Eigen::VectorXcd beta = steering_vector(geom, p.dir);
        const cplx phase = delay_phase(p.delay, n_c, n_subc);
        for (int i = 0; i < m; ++i) {
            const int s = states[static_cast<std::size_t>(i)];
            const cplx nu = p.psi_v * patterns.eval(s, Pol::V, p.dir) +
                            p.psi_h * patterns.eval(s, Pol::H, p.dir);
            h[i] += nu * beta[i] * phase;
        }
    }
    return h;
}

Eigen::MatrixXcd exact_channel_all(const ScatterScene& scene, const PatternSet& patterns,
                                   const ArrayGeometry& geom, const std::vector<int>& states,
                                   int n_subc, int user) {
    check_scene(scene);
    check_states(states, geom.m(), patterns.n_states());
    if (user < 0 || user >= scene.n_users)
        throw std::invalid_argument("exact_channel_all: user index out of range");
    if (n_subc < 1) throw std::invalid_argument("exact_channel_all: n_subc must be >= 1");

    const int m = geom.m();
    Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(m, n_subc);
    for (const auto& p : scene.user_paths[static_cast<std::size_t>(user)]) {
        const Eigen::VectorXcd beta = steering_vector(geom, p.dir);
        Eigen::VectorXcd amp(m);
        for (int i = 0; i < m; ++i) {
            const int s = states[static_cast<std::size_t>(i)];
            const cplx nu = p.psi_v * patterns.eval(s, Pol::V, p.dir) +
                            p.psi_h * patterns.eval(s, Pol::H, p.dir);
            amp[i] = nu * beta[i];
        }
        Eigen::RowVectorXcd phases(n_subc);
        for (int n = 1; n <= n_subc; ++n) phases[n - 1] = delay_phase(p.delay, n, n_subc);
        h.noalias() += amp * phases;
    }
    return h;
}

Eigen::MatrixXcd approx_channel(const SparseCoeffs& coeffs, const AngleGrid& grid,
                                const GridPatternTable& table, const ArrayGeometry& geom,
                                const std::vector<int>& states, int n_subc) {
    validate_coeffs(coeffs);
    if (coeffs.n_grid() != grid.size())
        throw std::invalid_argument("approx_channel: coeffs do not match grid");
    if (table.v.cols() != grid.size())
        throw std::invalid_argument("approx_channel: table does not match grid");
    check_states(states, geom.m(), table.n_states());
    if (n_subc < coeffs.delay_span())
        throw std::invalid_argument("approx_channel: delay span exceeds subcarrier count");

    const int m = geom.m();
    Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(m, n_subc);
    if (coeffs.support.empty()) return h;

    // Columns of the angular bases are needed only where the support lives.
    std::vector<int> active;
    active.reserve(coeffs.support.size());
    for (const auto& [b, l] : coeffs.support)
        if (active.empty() || active.back() != b) active.push_back(b);
    std::sort(active.begin(), active.end());
    active.erase(std::unique(active.begin(), active.end()), active.end());

    const int na = static_cast<int>(active.size());
    Eigen::MatrixXcd g_v(m, na), g_h(m, na);
    std::vector<int> col_of(static_cast<std::size_t>(grid.size()), -1);
    for (int a = 0; a < na; ++a) {
        const int b = active[static_cast<std::size_t>(a)];
        col_of[static_cast<std::size_t>(b)] = a;
        const Eigen::VectorXcd beta =
            steering_vector(geom, grid.points[static_cast<std::size_t>(b)]);
        for (int i = 0; i < m; ++i) {
            const int s = states[static_cast<std::size_t>(i)] - 1;
            g_v(i, a) = table.v(s, b) * beta[i];
            g_h(i, a) = table.h(s, b) * beta[i];
        }
    }

    // h_{n} = sum_{(b,l)} (g_v[:,b] psi_v[b,l] + g_h[:,b] psi_h[b,l]) e^{-j 2 pi l (n-1) / N}
    // accumulated as per-tap antenna profiles, then spread across subcarriers.
    Eigen::MatrixXcd per_tap = Eigen::MatrixXcd::Zero(m, coeffs.delay_span());
    for (const auto& [b, l] : coeffs.support) {
        const int a = col_of[static_cast<std::size_t>(b)];
        per_tap.col(l) += g_v.col(a) * coeffs.psi_v(b, l) + g_h.col(a) * coeffs.psi_h(b, l);
    }
    for (int l = 0; l < coeffs.delay_span(); ++l) {
        if (per_tap.col(l).isZero(0.0)) continue;
        Eigen::RowVectorXcd phases(n_subc);
        for (int n = 1; n <= n_subc; ++n) phases[n - 1] = delay_phase(l, n, n_subc);
        h.noalias() += per_tap.col(l) * phases;
    }
    return h;
}

SparseCoeffs project_scene_to_grid(const ScatterScene& scene, const AngleGrid& grid, int user) {
    check_scene(scene);
    if (user < 0 || user >= scene.n_users)
        throw std::invalid_argument("project_scene_to_grid: user index out of range");

    SparseCoeffs coeffs = SparseCoeffs::zeros(grid.size(), scene.delay_span);
    std::map<long long, std::pair<int, int>> cells; // lin index -> (b, l)
    for (const auto& p : scene.user_paths[static_cast<std::size_t>(user)]) {
        const int b = nearest_grid_index(grid, p.dir);
        coeffs.psi_v(b, p.delay) += p.psi_v;
        coeffs.psi_h(b, p.delay) += p.psi_h;
        coeffs.mask(b, p.delay) = 1;
        cells[static_cast<long long>(p.delay) * grid.size() + b] = {b, p.delay};
    }
    coeffs.support.reserve(cells.size());
    for (const auto& [lin, cell] : cells) coeffs.support.push_back(cell);
    return coeffs;
}

} // namespace pfas
