// SPDX-License-Identifier: Apache-2.0

#include "pfas/sounding.hpp"

#include <numeric>

namespace pfas {

namespace {

// Hermitian solve helper with the shared conditioning policy: spectrum from
// a self-adjoint eigendecomposition, ridge term when the condition number
// crosses 1e12, failure when the matrix stays singular afterwards.
Eigen::LLT<Eigen::MatrixXcd> conditioned_llt(Eigen::MatrixXcd s, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(s);
    if (eig.info() != Eigen::Success) throw NumericalError(std::string(what) + ": eigensolver failed");
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(hi > 0.0)) throw NumericalError(std::string(what) + ": singular normal matrix");
    if (lo <= 0.0 || hi / lo > 1e12) {
        const double lambda = 1e-10 * s.real().trace() / static_cast<double>(s.rows());
        s.diagonal().array() += lambda;
        if (lo + lambda <= 0.0)
            throw NumericalError(std::string(what) + ": singular even after regularization");
    }
    Eigen::LLT<Eigen::MatrixXcd> llt(s);
    if (llt.info() != Eigen::Success)
        throw NumericalError(std::string(what) + ": Cholesky factorization failed");
    return llt;
}

} // namespace

Eigen::VectorXcd zadoff_chu(int n_subc, int root) {
    if (n_subc < 1) throw std::invalid_argument("zadoff_chu: length must be >= 1");
    if (root < 1 || std::gcd(root, n_subc) != 1)
        throw std::invalid_argument("zadoff_chu: root must be coprime with the length");
    Eigen::VectorXcd x(n_subc);
    const bool even = (n_subc % 2 == 0);
    for (int n = 0; n < n_subc; ++n) {
        // Quadratic phase mod 2N keeps the argument small before the trig call.
        const long long q = even ? static_cast<long long>(n) * n
                                 : static_cast<long long>(n) * (n + 1);
        const long long r = (static_cast<long long>(root) * q) % (2LL * n_subc);
        const double ang = -pi * (static_cast<double>(r) / n_subc);
        x[n] = cplx{std::cos(ang), std::sin(ang)};
    }
    return x;
}

SoundingPlan make_plan(std::uint64_t seed, int n_blocks, int n_states, int m_antennas,
                       int n_subc, int delay_span, double noise_var, PilotKind kind) {
    if (n_blocks < 1 || n_states < 1 || m_antennas < 1 || n_subc < 1 || delay_span < 1)
        throw std::invalid_argument("make_plan: counts must be >= 1");
    if (delay_span > n_subc)
        throw std::invalid_argument("make_plan: delay span exceeds subcarrier count");
    if (noise_var < 0.0) throw std::invalid_argument("make_plan: negative noise variance");

    SoundingPlan plan;
    plan.n_blocks = n_blocks;
    plan.noise_var = noise_var;
    plan.delay_span = delay_span;

    auto rng = make_engine(seed, 0, SeedPurpose::Plan);
    std::uniform_int_distribution<int> pick(1, n_states);
    plan.block_states.resize(static_cast<std::size_t>(n_blocks));
    for (auto& states : plan.block_states) {
        states.resize(static_cast<std::size_t>(m_antennas));
        for (auto& s : states) s = pick(rng);
    }

    if (kind == PilotKind::ZadoffChu) {
        plan.pilots = zadoff_chu(n_subc);
    } else {
        std::uniform_int_distribution<int> quadrant(0, 3);
        plan.pilots.resize(n_subc);
        for (int n = 0; n < n_subc; ++n) {
            const double ang = (pi / 2.0) * quadrant(rng);
            plan.pilots[n] = cplx{std::cos(ang), std::sin(ang)};
        }
    }
    return plan;
}

void validate_plan(const SoundingPlan& plan, int n_states, int m_antennas) {
    if (plan.n_blocks < 1 || static_cast<int>(plan.block_states.size()) != plan.n_blocks)
        throw std::invalid_argument("plan: block count mismatch");
    for (const auto& states : plan.block_states) {
        if (static_cast<int>(states.size()) != m_antennas)
            throw std::invalid_argument("plan: state vector length mismatch");
        for (int s : states)
            if (s < 1 || s > n_states) throw std::invalid_argument("plan: state out of range");
    }
    if (plan.pilots.size() < 1) throw std::invalid_argument("plan: empty pilot sequence");
    for (int n = 0; n < plan.pilots.size(); ++n)
        if (std::abs(std::abs(plan.pilots[n]) - 1.0) > 1e-9)
            throw std::invalid_argument("plan: pilots must be unit modulus");
    if (plan.noise_var < 0.0) throw std::invalid_argument("plan: negative noise variance");
    if (plan.delay_span < 1 || plan.delay_span > plan.pilots.size())
        throw std::invalid_argument("plan: delay span out of range");
}

int comb4_overhead(int n_users, int n_blocks) {
    if (n_users < 1 || n_blocks < 1)
        throw std::invalid_argument("comb4_overhead: counts must be >= 1");
    return n_blocks * (n_users / 4);
}

namespace {

Eigen::MatrixXcd pilot_weighted_dft(const Eigen::VectorXcd& pilots, int delay_span) {
    const int n_subc = static_cast<int>(pilots.size());
    Eigen::MatrixXcd f_bar(n_subc, delay_span);
    for (int l = 0; l < delay_span; ++l)
        for (int n = 0; n < n_subc; ++n) {
            const long long r = (static_cast<long long>(l) * n) % n_subc;
            const double ang = -two_pi * (static_cast<double>(r) / n_subc);
            f_bar(n, l) = pilots[n] * cplx{std::cos(ang), std::sin(ang)};
        }
    return f_bar;
}

void add_noise(Eigen::MatrixXcd& y, double noise_var, std::mt19937_64& rng) {
    if (noise_var <= 0.0) return;
    for (Eigen::Index t = 0; t < y.rows(); ++t)
        for (Eigen::Index n = 0; n < y.cols(); ++n) y(t, n) += draw_cn(rng, noise_var);
}

} // namespace

SoundingObservation sound_grid(const SparseCoeffs& coeffs, const AngleGrid& grid,
                               const GridPatternTable& table, const ArrayGeometry& geom,
                               const SoundingPlan& plan, std::mt19937_64& rng) {
    validate_plan(plan, table.n_states(), geom.m());
    validate_coeffs(coeffs);
    if (coeffs.n_grid() != grid.size())
        throw std::invalid_argument("sound_grid: coeffs do not match grid");
    if (coeffs.delay_span() > plan.delay_span)
        throw std::invalid_argument("sound_grid: coefficients exceed the plan's delay span");

    const int m = geom.m();
    const int n_subc = static_cast<int>(plan.pilots.size());
    SoundingObservation obs;
    obs.plan = plan;
    obs.y.resize(static_cast<Eigen::Index>(plan.n_blocks) * m, n_subc);
    for (int t = 0; t < plan.n_blocks; ++t) {
        const Eigen::MatrixXcd h = approx_channel(
            coeffs, grid, table, geom, plan.block_states[static_cast<std::size_t>(t)], n_subc);
        obs.y.middleRows(static_cast<Eigen::Index>(t) * m, m) =
            h * plan.pilots.asDiagonal();
    }
    add_noise(obs.y, plan.noise_var, rng);
    return obs;
}

SoundingObservation sound_exact(const ScatterScene& scene, const PatternSet& patterns,
                                const ArrayGeometry& geom, const SoundingPlan& plan, int user,
                                std::mt19937_64& rng) {
    validate_plan(plan, patterns.n_states(), geom.m());
    const int m = geom.m();
    const int n_subc = static_cast<int>(plan.pilots.size());
    SoundingObservation obs;
    obs.plan = plan;
    obs.y.resize(static_cast<Eigen::Index>(plan.n_blocks) * m, n_subc);
    for (int t = 0; t < plan.n_blocks; ++t) {
        const Eigen::MatrixXcd h = exact_channel_all(
            scene, patterns, geom, plan.block_states[static_cast<std::size_t>(t)], n_subc, user);
        obs.y.middleRows(static_cast<Eigen::Index>(t) * m, m) =
            h * plan.pilots.asDiagonal();
    }
    add_noise(obs.y, plan.noise_var, rng);
    return obs;
}

Eigen::MatrixXcd SoundingBasis::apply_v(const Eigen::MatrixXcd& psi) const {
    return g_v_proj * psi * f_bar.transpose();
}
Eigen::MatrixXcd SoundingBasis::apply_h(const Eigen::MatrixXcd& psi) const {
    return g_h_proj * psi * f_bar.transpose();
}
Eigen::MatrixXcd SoundingBasis::adjoint_v(const Eigen::MatrixXcd& r) const {
    return g_v_proj.adjoint() * r * f_bar.conjugate();
}
Eigen::MatrixXcd SoundingBasis::adjoint_h(const Eigen::MatrixXcd& r) const {
    return g_h_proj.adjoint() * r * f_bar.conjugate();
}

std::shared_ptr<const SoundingBasis> make_basis(const AngleGrid& grid,
                                                const GridPatternTable& table,
                                                const ArrayGeometry& geom,
                                                const SoundingPlan& plan) {
    validate_plan(plan, table.n_states(), geom.m());
    const int m = geom.m();
    const int tm = plan.n_blocks * m;
    const int nb = grid.size();

    Eigen::MatrixXcd g_stack_v(tm, nb), g_stack_h(tm, nb);
    for (int t = 0; t < plan.n_blocks; ++t) {
        auto [g_v, g_h] =
            angular_basis(grid, table, geom, plan.block_states[static_cast<std::size_t>(t)]);
        g_stack_v.middleRows(static_cast<Eigen::Index>(t) * m, m) = g_v;
        g_stack_h.middleRows(static_cast<Eigen::Index>(t) * m, m) = g_h;
    }

    // Left singular basis of [g_stack_v, g_stack_h] via the small (TM x TM)
    // Gram matrix: eigenvalues are squared singular values.
    Eigen::MatrixXcd gram = g_stack_v * g_stack_v.adjoint() + g_stack_h * g_stack_h.adjoint();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(gram);
    if (eig.info() != Eigen::Success) throw NumericalError("make_basis: eigensolver failed");
    const double top = eig.eigenvalues().maxCoeff();
    if (!(top > 0.0)) throw NumericalError("make_basis: all-zero basis matrix");

    const double cutoff = svd_rel_threshold * svd_rel_threshold * top;
    int m_tilde = 0;
    for (int i = 0; i < tm; ++i)
        if (eig.eigenvalues()[i] >= cutoff) ++m_tilde;

    auto basis = std::make_shared<SoundingBasis>();
    basis->m_tilde = m_tilde;
    basis->u_tilde.resize(tm, m_tilde);
    // Eigenvalues come back ascending; dominant directions sit at the end.
    for (int i = 0; i < m_tilde; ++i)
        basis->u_tilde.col(i) = eig.eigenvectors().col(tm - 1 - i);
    basis->g_v_proj = basis->u_tilde.adjoint() * g_stack_v;
    basis->g_h_proj = basis->u_tilde.adjoint() * g_stack_h;
    basis->f_bar = pilot_weighted_dft(plan.pilots, plan.delay_span);
    basis->noise_var = plan.noise_var;
    basis->n_grid = nb;
    basis->delay_span = plan.delay_span;
    basis->n_subc = static_cast<int>(plan.pilots.size());
    basis->n_blocks = plan.n_blocks;
    basis->m_antennas = m;
    return basis;
}

ReducedObservation reduce(std::shared_ptr<const SoundingBasis> basis,
                          const SoundingObservation& obs) {
    if (!basis) throw std::invalid_argument("reduce: null basis");
    if (obs.y.rows() != basis->u_tilde.rows() || obs.y.cols() != basis->n_subc)
        throw std::invalid_argument("reduce: observation shape does not match basis");
    ReducedObservation red;
    red.y_tilde = basis->u_tilde.adjoint() * obs.y;
    red.basis = std::move(basis);
    return red;
}

ReducedObservation preprocess(const SoundingObservation& obs, const AngleGrid& grid,
                              const GridPatternTable& table, const ArrayGeometry& geom) {
    return reduce(make_basis(grid, table, geom, obs.plan), obs);
}

SparseCoeffs ls_estimate(const ReducedObservation& reduced) {
    const SoundingBasis& basis = *reduced.basis;
    const int nb = basis.n_grid;
    const int nl = basis.delay_span;

    // Stacked operator = kron(F_bar, [Av, Ah]); its minimum-norm inverse
    // factors: angular side Ah^H (A A^H)^{-1}, delay side F* (F^T F*)^{-1}.
    Eigen::MatrixXcd a(basis.m_tilde, 2 * nb);
    a.leftCols(nb) = basis.g_v_proj;
    a.rightCols(nb) = basis.g_h_proj;

    const Eigen::MatrixXcd s_a = a * a.adjoint();
    const auto llt_a = conditioned_llt(s_a, "ls_estimate[angular]");
    // Transposed-side Gram: the solution right-multiplies by conj(F_bar), so
    // the normal matrix is F_bar^T conj(F_bar), the conjugate of the usual one.
    const Eigen::MatrixXcd s_f = basis.f_bar.transpose() * basis.f_bar.conjugate();
    const auto llt_f = conditioned_llt(s_f, "ls_estimate[delay]");

    const Eigen::MatrixXcd t1 = llt_a.solve(reduced.y_tilde);              // m_tilde x N_c
    const Eigen::MatrixXcd t2 = t1 * basis.f_bar.conjugate();              // m_tilde x L
    const Eigen::MatrixXcd t3 = llt_f.solve(t2.adjoint()).adjoint();       // m_tilde x L
    const Eigen::MatrixXcd psi = a.adjoint() * t3;                         // 2|B| x L

    SparseCoeffs out = SparseCoeffs::zeros(nb, nl);
    out.psi_v = psi.topRows(nb);
    out.psi_h = psi.bottomRows(nb);
    out.mask.setOnes(nb, nl);
    out.support.reserve(static_cast<std::size_t>(nb) * static_cast<std::size_t>(nl));
    for (int l = 0; l < nl; ++l)
        for (int b = 0; b < nb; ++b) out.support.emplace_back(b, l);
    return out;
}

} // namespace pfas
