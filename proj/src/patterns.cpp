// SPDX-License-Identifier: Apache-2.0

#include "pfas/patterns.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace pfas {

namespace {

int coeff_count(int order) { return (order + 1) * (order + 1); }

// Spherical-harmonic expansion evaluated at one direction. std::sph_legendre
// carries the full orthonormalization factor, so the basis functions
// N_lm(theta) * e^{+-im phi} are orthonormal over the sphere and the mean
// radiated power is sum |c|^2 / (4*pi) by Parseval.
cplx eval_expansion(const std::vector<cplx>& c, int order, const Direction& dir) {
    cplx acc(0.0, 0.0);
    std::size_t idx = 0;
    for (int l = 0; l <= order; ++l) {
        acc += c[idx++] * std::sph_legendre(static_cast<unsigned>(l), 0u, dir.theta);
        for (int m = 1; m <= l; ++m) {
            const double nm = std::sph_legendre(static_cast<unsigned>(l),
                                                static_cast<unsigned>(m), dir.theta);
            const cplx plus = std::polar(1.0, m * dir.phi);
            acc += nm * (c[idx] * plus + c[idx + 1] * std::conj(plus));
            idx += 2;
        }
    }
    return acc;
}

double norm2(const std::vector<cplx>& a) {
    double s = 0.0;
    for (const cplx& x : a) s += std::norm(x);
    return s;
}

// Correlation between two states in coefficient space; by orthonormality of
// the basis this equals the normalized pattern correlation over the sphere.
double state_correlation(const std::vector<cplx>& v1, const std::vector<cplx>& h1,
                         const std::vector<cplx>& v2, const std::vector<cplx>& h2) {
    cplx s(0.0, 0.0);
    for (std::size_t i = 0; i < v1.size(); ++i) s += v1[i] * std::conj(v2[i]);
    for (std::size_t i = 0; i < h1.size(); ++i) s += h1[i] * std::conj(h2[i]);
    const double den = std::sqrt((norm2(v1) + norm2(h1)) * (norm2(v2) + norm2(h2)));
    return den > 0.0 ? std::abs(s) / den : 0.0;
}

std::vector<cplx> draw_coeffs(std::mt19937_64& rng, int order) {
    std::vector<cplx> c(coeff_count(order));
    for (cplx& x : c) x = draw_cn(rng, 1.0);
    return c;
}

const double iso_mag = std::sqrt(2.0); // unit average power over the full sphere

} // namespace

PatternSet PatternSet::synthesize(std::uint64_t seed, int n_states, int order) {
    if (n_states < 1) throw std::invalid_argument("synthesize: n_states must be >= 1");
    if (order < 1) throw std::invalid_argument("synthesize: order must be >= 1");

    detail::PatternSynth s;
    s.n_states = n_states;
    s.order = order;
    s.coeff_v.resize(n_states);
    s.coeff_h.resize(n_states);

    constexpr double kMaxCorrelation = 0.99;
    for (int st = 0; st < n_states; ++st) {
        bool accepted = false;
        for (int attempt = 0; attempt < 64 && !accepted; ++attempt) {
            auto rng = make_engine(seed, static_cast<std::uint64_t>(st) * 64 + attempt,
                                   SeedPurpose::Patterns);
            s.coeff_v[st] = draw_coeffs(rng, order);
            s.coeff_h[st] = draw_coeffs(rng, order);
            accepted = true;
            for (int prev = 0; prev < st && accepted; ++prev) {
                if (state_correlation(s.coeff_v[st], s.coeff_h[st], s.coeff_v[prev],
                                      s.coeff_h[prev]) >= kMaxCorrelation)
                    accepted = false;
            }
        }
        if (!accepted)
            throw std::runtime_error("synthesize: could not draw a decorrelated state");

        // Normalize the joint V/H power: mean over the sphere of
        // (|v_V|^2 + |v_H|^2)/2 becomes exactly 1.
        const double total = norm2(s.coeff_v[st]) + norm2(s.coeff_h[st]);
        const double scale = std::sqrt(8.0 * pi / total);
        for (cplx& x : s.coeff_v[st]) x *= scale;
        for (cplx& x : s.coeff_h[st]) x *= scale;
    }

    PatternSet set;
    set.data_ = std::move(s);
    set.seed_ = seed;
    return set;
}

PatternSet PatternSet::isotropic() {
    PatternSet set;
    set.data_ = detail::PatternIso{};
    return set;
}

int PatternSet::n_states() const {
    if (std::holds_alternative<detail::PatternSynth>(data_)) return std::get<detail::PatternSynth>(data_).n_states;
    if (std::holds_alternative<detail::PatternTable>(data_)) return std::get<detail::PatternTable>(data_).n_states;
    return 1;
}

cplx PatternSet::eval(int state, Pol pol, const Direction& dir) const {
    if (state < 1 || state > n_states())
        throw std::invalid_argument("PatternSet::eval: state out of range");

    if (const auto* s = std::get_if<detail::PatternSynth>(&data_)) {
        const auto& c = (pol == Pol::V) ? s->coeff_v[state - 1] : s->coeff_h[state - 1];
        return eval_expansion(c, s->order, dir);
    }
    if (std::holds_alternative<detail::PatternIso>(data_)) {
        return dir.theta <= pi / 2.0 ? cplx(iso_mag, 0.0) : cplx(0.0, 0.0);
    }

    const detail::PatternTable& t = std::get<detail::PatternTable>(data_);
    const auto& g = (pol == Pol::V) ? t.grid_v[state - 1] : t.grid_h[state - 1];
    // Bilinear interpolation; theta is clamped to the sample range, phi wraps.
    double u = dir.theta / pi * (t.n_theta - 1);
    int i0 = std::min(static_cast<int>(std::floor(u)), t.n_theta - 2);
    i0 = std::max(i0, 0);
    const double du = std::clamp(u - i0, 0.0, 1.0);
    const double v = dir.phi / two_pi * t.n_phi;
    int j0 = static_cast<int>(std::floor(v));
    j0 = std::min(std::max(j0, 0), t.n_phi - 1);
    const int j1 = (j0 + 1) % t.n_phi;
    const double dv = std::clamp(v - j0, 0.0, 1.0);

    const cplx g00 = g[static_cast<std::size_t>(i0) * t.n_phi + j0];
    const cplx g01 = g[static_cast<std::size_t>(i0) * t.n_phi + j1];
    const cplx g10 = g[static_cast<std::size_t>(i0 + 1) * t.n_phi + j0];
    const cplx g11 = g[static_cast<std::size_t>(i0 + 1) * t.n_phi + j1];
    return (1.0 - du) * ((1.0 - dv) * g00 + dv * g01) + du * ((1.0 - dv) * g10 + dv * g11);
}

cplx mixed_pattern(const PatternSet& set, const std::vector<double>& weights, Pol pol,
                   const Direction& dir) {
    if (static_cast<int>(weights.size()) != set.n_states())
        throw std::invalid_argument("mixed_pattern: weights length must equal n_states");
    cplx acc(0.0, 0.0);
    for (int i = 0; i < set.n_states(); ++i) {
        if (weights[i] == 0.0) continue; // keeps one-hot selection bit-exact
        acc += weights[i] * set.eval(i + 1, pol, dir);
    }
    return acc;
}

PatternSet load_pattern_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_pattern_table: cannot open " + path);

    struct Sample {
        int state, ti, pi_;
        Pol pol;
        cplx value;
    };
    std::vector<Sample> samples;
    int max_state = 0, max_ti = -1, max_pi = -1;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        int state, ti, pj;
        std::string pol;
        double re, im;
        if (!(ls >> state)) continue; // blank line
        if (!(ls >> pol >> ti >> pj >> re >> im))
            throw std::runtime_error("load_pattern_table: malformed row at line " +
                                     std::to_string(line_no));
        if (state < 1 || ti < 0 || pj < 0)
            throw std::runtime_error("load_pattern_table: bad indices at line " +
                                     std::to_string(line_no));
        Pol p;
        if (pol == "V" || pol == "v")
            p = Pol::V;
        else if (pol == "H" || pol == "h")
            p = Pol::H;
        else
            throw std::runtime_error("load_pattern_table: polarization must be V or H at line " +
                                     std::to_string(line_no));
        samples.push_back({state, ti, pj, p, cplx(re, im)});
        max_state = std::max(max_state, state);
        max_ti = std::max(max_ti, ti);
        max_pi = std::max(max_pi, pj);
    }
    if (samples.empty()) throw std::runtime_error("load_pattern_table: no samples in " + path);
    if (max_ti < 1) throw std::runtime_error("load_pattern_table: need at least 2 theta samples");

    detail::PatternTable t;
    t.n_states = max_state;
    t.n_theta = max_ti + 1;
    t.n_phi = max_pi + 1;
    const std::size_t cells = static_cast<std::size_t>(t.n_theta) * t.n_phi;
    t.grid_v.assign(t.n_states, std::vector<cplx>(cells));
    t.grid_h.assign(t.n_states, std::vector<cplx>(cells));
    std::vector<std::vector<char>> seen_v(t.n_states, std::vector<char>(cells, 0));
    std::vector<std::vector<char>> seen_h(t.n_states, std::vector<char>(cells, 0));

    for (const Sample& s : samples) {
        if (s.ti >= t.n_theta || s.pi_ >= t.n_phi)
            throw std::runtime_error("load_pattern_table: index outside inferred grid");
        const std::size_t cell = static_cast<std::size_t>(s.ti) * t.n_phi + s.pi_;
        auto& grid = (s.pol == Pol::V) ? t.grid_v : t.grid_h;
        auto& seen = (s.pol == Pol::V) ? seen_v : seen_h;
        if (seen[s.state - 1][cell])
            throw std::runtime_error("load_pattern_table: duplicate sample for state " +
                                     std::to_string(s.state));
        grid[s.state - 1][cell] = s.value;
        seen[s.state - 1][cell] = 1;
    }
    for (int st = 0; st < t.n_states; ++st) {
        for (std::size_t cell = 0; cell < cells; ++cell) {
            if (!seen_v[st][cell] || !seen_h[st][cell])
                throw std::runtime_error("load_pattern_table: incomplete grid for state " +
                                         std::to_string(st + 1));
        }
    }

    PatternSet set;
    set.data_ = std::move(t);
    return set;
}

void save_pattern_table(const PatternSet& set, int n_theta, int n_phi, const std::string& path) {
    if (n_theta < 2 || n_phi < 2)
        throw std::invalid_argument("save_pattern_table: grid must be at least 2x2");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_pattern_table: cannot open " + path);
    out << "# pattern table: state pol theta_idx phi_idx re im\n";
    out.precision(17);
    for (int st = 1; st <= set.n_states(); ++st) {
        for (Pol pol : {Pol::V, Pol::H}) {
            for (int ti = 0; ti < n_theta; ++ti) {
                // Ratio first so the endpoints land exactly on pi and stay
                // below 2*pi, keeping Direction's range checks happy.
                const double theta = pi * (static_cast<double>(ti) / (n_theta - 1));
                for (int pj = 0; pj < n_phi; ++pj) {
                    const double phi = two_pi * (static_cast<double>(pj) / n_phi);
                    const cplx v = set.eval(st, pol, Direction(phi, theta));
                    out << st << ' ' << (pol == Pol::V ? 'V' : 'H') << ' ' << ti << ' ' << pj
                        << ' ' << v.real() << ' ' << v.imag() << '\n';
                }
            }
        }
    }
    if (!out) throw std::runtime_error("save_pattern_table: write failed for " + path);
}

} // namespace pfas
