// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <memory>

#include "pfas/sparse_omp.hpp"

using namespace pfas;

namespace {

Eigen::VectorXcd vec(const Eigen::MatrixXcd& m) {
    return Eigen::Map<const Eigen::VectorXcd>(m.data(), m.size());
}

Eigen::VectorXcd kron_col(const Eigen::VectorXcd& f, const Eigen::VectorXcd& a) {
    Eigen::VectorXcd out(f.size() * a.size());
    for (Eigen::Index i = 0; i < f.size(); ++i) out.segment(i * a.size(), a.size()) = f[i] * a;
    return out;
}

Eigen::MatrixXcd dense_f_bar(const Eigen::VectorXcd& pilots, int delay_span) {
    const int n_subc = static_cast<int>(pilots.size());
    Eigen::MatrixXcd f(n_subc, delay_span);
    for (int l = 0; l < delay_span; ++l)
        for (int n = 0; n < n_subc; ++n) {
            const double ang = -two_pi * l * n / static_cast<double>(n_subc);
            f(n, l) = pilots[n] * cplx{std::cos(ang), std::sin(ang)};
        }
    return f;
}

// Minimal hand-rolled basis for operator-level tests, bypassing the grid.
std::shared_ptr<SoundingBasis> toy_basis(const Eigen::MatrixXcd& a_v, const Eigen::MatrixXcd& a_h,
                                         const Eigen::MatrixXcd& f_bar) {
    auto basis = std::make_shared<SoundingBasis>();
    basis->m_tilde = static_cast<int>(a_v.rows());
    basis->u_tilde = Eigen::MatrixXcd::Identity(a_v.rows(), a_v.rows());
    basis->g_v_proj = a_v;
    basis->g_h_proj = a_h;
    basis->f_bar = f_bar;
    basis->n_grid = static_cast<int>(a_v.cols());
    basis->delay_span = static_cast<int>(f_bar.cols());
    basis->n_subc = static_cast<int>(f_bar.rows());
    basis->n_blocks = 1;
    basis->m_antennas = static_cast<int>(a_v.rows());
    return basis;
}

// Observation with the given sparse cells, through the real grid pipeline.
struct PipelineFixture {
    AngleGrid grid;
    PatternSet patterns;
    GridPatternTable table;
    ArrayGeometry geom;
    SoundingPlan plan;
    SparseCoeffs truth;
    ReducedObservation reduced;

    PipelineFixture(double step_deg, int m1, int m2, int n_blocks, int n_subc, int delay_span,
                    double noise_var, const std::vector<std::pair<int, int>>& cells,
                    std::uint64_t seed)
        : grid(make_grid(step_deg)),
          patterns(PatternSet::synthesize(seed, 12, 3)),
          table(tabulate_patterns(patterns, grid)),
          geom(m1, m2),
          plan(make_plan(seed + 1, n_blocks, 12, geom.m(), n_subc, delay_span, noise_var)),
          truth(SparseCoeffs::zeros(grid.size(), delay_span)) {
        auto rng = make_engine(seed, 2, SeedPurpose::Generic);
        std::vector<std::pair<int, int>> sorted = cells;
        std::sort(sorted.begin(), sorted.end(), [&](const auto& a, const auto& b) {
            return static_cast<long long>(a.second) * grid.size() + a.first <
                   static_cast<long long>(b.second) * grid.size() + b.first;
        });
        for (const auto& [b, l] : sorted) {
            truth.psi_v(b, l) = draw_cn(rng, 1.0);
            truth.psi_h(b, l) = draw_cn(rng, 1.0);
            truth.mask(b, l) = 1;
        }
        truth.support = sorted;
        const SoundingObservation obs = sound_grid(truth, grid, table, geom, plan, rng);
        reduced = preprocess(obs, grid, table, geom);
    }
};

double coeff_nmse(const SparseCoeffs& est, const SparseCoeffs& truth) {
    const double num = (est.psi_v - truth.psi_v).squaredNorm() +
                       (est.psi_h - truth.psi_h).squaredNorm();
    const double den = truth.psi_v.squaredNorm() + truth.psi_h.squaredNorm();
    return num / den;
}

} // namespace

TEST_CASE("cell selection") {
    SUBCASE("residual in the span of one orthonormal pair") {
        Eigen::MatrixXcd a_v = Eigen::MatrixXcd::Zero(6, 3);
        Eigen::MatrixXcd a_h = Eigen::MatrixXcd::Zero(6, 3);
        for (int j = 0; j < 3; ++j) {
            a_v(j, j) = 1.0;
            a_h(3 + j, j) = 1.0;
        }
        Eigen::MatrixXcd f_bar = Eigen::MatrixXcd::Zero(4, 2);
        f_bar(0, 0) = 1.0;
        f_bar(1, 1) = 1.0;
        ReducedObservation red;
        red.basis = toy_basis(a_v, a_h, f_bar);
        red.y_tilde = Eigen::MatrixXcd::Zero(6, 4);

        // Cell (b=1, l=1) has vectorized index 1*3+1 = 4.
        const Eigen::MatrixXcd r = 2.0 * a_v.col(1) * f_bar.col(1).transpose() +
                                   cplx{0.0, -1.0} * a_h.col(1) * f_bar.col(1).transpose();
        std::vector<std::uint8_t> excluded(6, 0);
        CHECK(select_index(r, red, excluded) == 4);

        // With the true cell excluded the residual is orthogonal to every
        // remaining candidate; ties at score zero go to the smallest index.
        excluded[4] = 1;
        CHECK(select_index(r, red, excluded) == 0);

        std::fill(excluded.begin(), excluded.end(), std::uint8_t{1});
        CHECK_THROWS_AS(select_index(r, red, excluded), std::invalid_argument);
    }

    SUBCASE("matches an exhaustive two-column least-squares oracle") {
        auto rng = make_engine(3, 0, SeedPurpose::Generic);
        const int m_tilde = 8, nb = 10, nl = 5, n_subc = 12;
        Eigen::MatrixXcd a_v(m_tilde, nb), a_h(m_tilde, nb);
        for (int i = 0; i < m_tilde; ++i)
            for (int j = 0; j < nb; ++j) {
                a_v(i, j) = draw_cn(rng, 1.0);
                a_h(i, j) = draw_cn(rng, 1.0);
            }
        const Eigen::MatrixXcd f_bar = dense_f_bar(zadoff_chu(n_subc), nl);
        ReducedObservation red;
        red.basis = toy_basis(a_v, a_h, f_bar);

        for (int trial = 0; trial < 5; ++trial) {
            Eigen::MatrixXcd r(m_tilde, n_subc);
            for (int i = 0; i < m_tilde; ++i)
                for (int j = 0; j < n_subc; ++j) r(i, j) = draw_cn(rng, 1.0);

            int oracle = -1;
            double oracle_score = -1.0;
            for (int i = 0; i < nb * nl; ++i) {
                const int b = i % nb, l = i / nb;
                Eigen::MatrixXcd q(m_tilde * n_subc, 2);
                q.col(0) = kron_col(f_bar.col(l), a_v.col(b));
                q.col(1) = kron_col(f_bar.col(l), a_h.col(b));
                const Eigen::Vector2cd coef =
                    (q.adjoint() * q).ldlt().solve(q.adjoint() * vec(r));
                const double score = (q * coef).squaredNorm();
                if (score > oracle_score) {
                    oracle_score = score;
                    oracle = i;
                }
            }
            CHECK(select_index(r, red, std::vector<std::uint8_t>(50, 0)) == oracle);
        }
    }

    SUBCASE("identical columns tie to the smaller index") {
        // Orthonormal layout with b=0 and b=1 duplicated: those two cells
        // score identically and every other cell scores zero.
        Eigen::MatrixXcd a_v = Eigen::MatrixXcd::Zero(6, 3);
        Eigen::MatrixXcd a_h = Eigen::MatrixXcd::Zero(6, 3);
        a_v(0, 0) = 1.0;
        a_v(0, 1) = 1.0;
        a_v(1, 2) = 1.0;
        a_h(3, 0) = 1.0;
        a_h(3, 1) = 1.0;
        a_h(4, 2) = 1.0;
        Eigen::MatrixXcd f_bar = Eigen::MatrixXcd::Zero(4, 2);
        f_bar(0, 0) = 1.0;
        f_bar(1, 1) = 1.0;
        ReducedObservation red;
        red.basis = toy_basis(a_v, a_h, f_bar);
        const Eigen::MatrixXcd r =
            a_v.col(0) * f_bar.col(0).transpose() + a_h.col(0) * f_bar.col(0).transpose();
        CHECK(select_index(r, red, std::vector<std::uint8_t>(6, 0)) == 0);
    }
}

TEST_CASE("support fitting") {
    PipelineFixture fx(30.0, 2, 2, 2, 16, 3, 0.0,
                       {{make_grid(30.0).index(2, 3), 0},
                        {make_grid(30.0).index(3, 7), 1},
                        {make_grid(30.0).index(4, 11), 2}},
                       501);
    const int nb = fx.grid.size();

    SUBCASE("empty support returns the observation as residual") {
        const SupportFit fit = fit_support({}, fx.reduced);
        CHECK(fit.psi_v.size() == 0);
        CHECK(fit.residual == fx.reduced.y_tilde);
    }

    SUBCASE("true support of a noiseless instance gives exact coefficients") {
        std::vector<int> cells;
        for (const auto& [b, l] : fx.truth.support) cells.push_back(l * nb + b);
        const SupportFit fit = fit_support(cells, fx.reduced);
        CHECK(fit.residual.norm() <= 1e-8 * fx.reduced.y_tilde.norm());
        for (std::size_t j = 0; j < cells.size(); ++j) {
            const auto [b, l] = fx.truth.support[j];
            CHECK(std::abs(fit.psi_v[static_cast<Eigen::Index>(j)] - fx.truth.psi_v(b, l)) <=
                  1e-8 * std::abs(fx.truth.psi_v(b, l)));
            CHECK(std::abs(fit.psi_h[static_cast<Eigen::Index>(j)] - fx.truth.psi_h(b, l)) <=
                  1e-8 * std::abs(fx.truth.psi_h(b, l)));
        }
    }

    SUBCASE("residual is orthogonal to every selected column pair") {
        // Deliberately wrong support: orthogonality must hold regardless.
        const std::vector<int> cells = {fx.grid.index(1, 2), nb + fx.grid.index(2, 9),
                                        2 * nb + fx.grid.index(5, 4)};
        const SupportFit fit = fit_support(cells, fx.reduced);
        const auto& basis = *fx.reduced.basis;
        const Eigen::MatrixXcd p_v = basis.adjoint_v(fit.residual);
        const Eigen::MatrixXcd p_h = basis.adjoint_h(fit.residual);
        const double r_norm = fit.residual.norm();
        for (int i : cells) {
            const int b = i % nb, l = i / nb;
            const double col_norm =
                std::sqrt(basis.f_bar.col(l).squaredNorm() *
                          (basis.g_v_proj.col(b).squaredNorm() +
                           basis.g_h_proj.col(b).squaredNorm()));
            CHECK(std::abs(p_v(b, l)) <= 1e-8 * r_norm * col_norm);
            CHECK(std::abs(p_h(b, l)) <= 1e-8 * r_norm * col_norm);
        }
    }

    SUBCASE("matches a dense normal-equation oracle") {
        const std::vector<int> cells = {fx.grid.index(2, 5), nb + fx.grid.index(3, 1),
                                        2 * nb + fx.grid.index(1, 8)};
        const SupportFit fit = fit_support(cells, fx.reduced);
        const auto& basis = *fx.reduced.basis;
        Eigen::MatrixXcd q(static_cast<Eigen::Index>(basis.m_tilde) * basis.n_subc, 6);
        for (std::size_t j = 0; j < cells.size(); ++j) {
            const int b = cells[j] % nb, l = cells[j] / nb;
            q.col(2 * static_cast<Eigen::Index>(j)) =
                kron_col(basis.f_bar.col(l), basis.g_v_proj.col(b));
            q.col(2 * static_cast<Eigen::Index>(j) + 1) =
                kron_col(basis.f_bar.col(l), basis.g_h_proj.col(b));
        }
        const Eigen::VectorXcd dense =
            (q.adjoint() * q).ldlt().solve(q.adjoint() * vec(fx.reduced.y_tilde));
        for (std::size_t j = 0; j < cells.size(); ++j) {
            CHECK(std::abs(fit.psi_v[static_cast<Eigen::Index>(j)] -
                           dense[2 * static_cast<Eigen::Index>(j)]) <= 1e-8 * dense.norm());
            CHECK(std::abs(fit.psi_h[static_cast<Eigen::Index>(j)] -
                           dense[2 * static_cast<Eigen::Index>(j) + 1]) <= 1e-8 * dense.norm());
        }
    }

    SUBCASE("duplicated physical directions are rank deficient") {
        // At the pole every azimuth column is the same direction, so two
        // pole cells at one delay produce identical column pairs.
        const std::vector<int> cells = {fx.grid.index(0, 0), fx.grid.index(0, 1)};
        CHECK_THROWS_AS(fit_support(cells, fx.reduced), NumericalError);
    }
}

TEST_CASE("greedy runner") {
    const AngleGrid grid15 = make_grid(15.0);

    SUBCASE("noiseless 1-sparse instance recovered in one iteration") {
        const int b = grid15.index(3, 5);
        PipelineFixture fx(15.0, 4, 4, 4, 32, 3, 0.0, {{b, 1}}, 601);
        const OmpResult result = run_momp(fx.reduced);
        CHECK(result.iterations == 1);
        REQUIRE(result.support_order.size() == 1);
        CHECK(result.support_order[0] == grid15.size() + b);
        CHECK_FALSE(result.saturated);
        CHECK(coeff_nmse(result.coeffs, fx.truth) < 1e-12);
        validate_coeffs(result.coeffs);
    }

    SUBCASE("noiseless 4-sparse instance reaches -60 dB") {
        const std::vector<std::pair<int, int>> cells = {{grid15.index(3, 4), 0},
                                                        {grid15.index(5, 12), 1},
                                                        {grid15.index(7, 20), 2},
                                                        {grid15.index(9, 8), 3}};
        PipelineFixture fx(15.0, 4, 4, 4, 64, 4, 0.0, cells, 602);
        const OmpResult result = run_momp(fx.reduced);
        CHECK_FALSE(result.saturated);
        for (const auto& [b, l] : cells) {
            const int i = l * grid15.size() + b;
            CHECK(std::find(result.support_order.begin(), result.support_order.end(), i) !=
                  result.support_order.end());
        }
        CHECK(10.0 * std::log10(coeff_nmse(result.coeffs, fx.truth)) <= -60.0);

        // Residual history decreases strictly.
        for (std::size_t j = 1; j < result.residual_history.size(); ++j)
            CHECK(result.residual_history[j] < result.residual_history[j - 1]);
        CHECK(result.residual_history.front() < result.initial_residual);

        // Shared support: identical zero patterns in both polarizations.
        for (int l = 0; l < 4; ++l)
            for (int b = 0; b < grid15.size(); ++b) {
                const bool on = result.coeffs.mask(b, l) != 0;
                if (!on) {
                    CHECK(result.coeffs.psi_v(b, l) == cplx{0.0, 0.0});
                    CHECK(result.coeffs.psi_h(b, l) == cplx{0.0, 0.0});
                }
            }
    }

    SUBCASE("iteration cap saturates with a partial result") {
        const std::vector<std::pair<int, int>> cells = {{grid15.index(3, 4), 0},
                                                        {grid15.index(5, 12), 1},
                                                        {grid15.index(7, 20), 2},
                                                        {grid15.index(9, 8), 3}};
        PipelineFixture fx(15.0, 2, 2, 2, 32, 4, 0.0, cells, 603);
        const OmpResult result = run_momp(fx.reduced, 0.0, 2);
        CHECK(result.iterations == 2);
        CHECK(result.saturated);
        CHECK(result.coeffs.support.size() == 2);
    }

    SUBCASE("pure noise stops almost immediately") {
        const AngleGrid grid = make_grid(30.0);
        const PatternSet patterns = PatternSet::synthesize(604, 8, 3);
        const GridPatternTable table = tabulate_patterns(patterns, grid);
        const ArrayGeometry geom(2, 2);
        const SoundingPlan plan = make_plan(605, 2, 8, 4, 16, 3, 1.0);
        const auto basis = make_basis(grid, table, geom, plan);
        const SparseCoeffs empty = SparseCoeffs::zeros(grid.size(), 3);
        for (int draw = 0; draw < 20; ++draw) {
            auto rng = make_engine(606, static_cast<std::uint64_t>(draw), SeedPurpose::Noise);
            const SoundingObservation obs = sound_grid(empty, grid, table, geom, plan, rng);
            const OmpResult result = run_momp(reduce(basis, obs));
            CHECK(result.iterations <= 5);
        }
    }

    SUBCASE("invalid arguments are rejected") {
        PipelineFixture fx(30.0, 2, 1, 1, 8, 2, 0.0, {{make_grid(30.0).index(2, 3), 0}}, 607);
        CHECK_THROWS_AS(run_momp(fx.reduced, -1.0, 0), std::invalid_argument);
        CHECK_THROWS_AS(run_momp(fx.reduced, 0.0, -3), std::invalid_argument);
    }
}
