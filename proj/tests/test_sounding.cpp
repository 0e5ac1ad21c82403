// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <memory>

#include "pfas/sounding.hpp"

using namespace pfas;

namespace {

Eigen::MatrixXcd kron(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
    Eigen::MatrixXcd out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

Eigen::VectorXcd vec(const Eigen::MatrixXcd& m) {
    return Eigen::Map<const Eigen::VectorXcd>(m.data(), m.size());
}

Eigen::MatrixXcd unvec(const Eigen::VectorXcd& v, Eigen::Index rows, Eigen::Index cols) {
    return Eigen::Map<const Eigen::MatrixXcd>(v.data(), rows, cols);
}

SparseCoeffs random_coeffs(std::mt19937_64& rng, int n_grid, int delay_span, int n_cells) {
    SparseCoeffs c = SparseCoeffs::zeros(n_grid, delay_span);
    std::uniform_int_distribution<int> pick_b(0, n_grid - 1);
    std::uniform_int_distribution<int> pick_l(0, delay_span - 1);
    std::vector<std::pair<int, int>> cells;
    while (static_cast<int>(cells.size()) < n_cells) {
        const int b = pick_b(rng);
        const int l = pick_l(rng);
        if (c.mask(b, l)) continue;
        c.mask(b, l) = 1;
        c.psi_v(b, l) = draw_cn(rng, 1.0);
        c.psi_h(b, l) = draw_cn(rng, 1.0);
        cells.emplace_back(b, l);
    }
    std::sort(cells.begin(), cells.end(), [&](const auto& x, const auto& y) {
        return static_cast<long long>(x.second) * n_grid + x.first <
               static_cast<long long>(y.second) * n_grid + y.first;
    });
    c.support = cells;
    return c;
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

// Stacked dense bases [G_V(s_1); ...; G_V(s_T)] for oracle computations.
std::pair<Eigen::MatrixXcd, Eigen::MatrixXcd> dense_stacks(const AngleGrid& grid,
                                                           const GridPatternTable& table,
                                                           const ArrayGeometry& geom,
                                                           const SoundingPlan& plan) {
    const int m = geom.m();
    Eigen::MatrixXcd sv(plan.n_blocks * m, grid.size()), sh(plan.n_blocks * m, grid.size());
    for (int t = 0; t < plan.n_blocks; ++t) {
        auto [g_v, g_h] =
            angular_basis(grid, table, geom, plan.block_states[static_cast<std::size_t>(t)]);
        sv.middleRows(t * m, m) = g_v;
        sh.middleRows(t * m, m) = g_h;
    }
    return {std::move(sv), std::move(sh)};
}

} // namespace

TEST_CASE("pilot sequences") {
    for (int n : {63, 64, 139}) {
        const Eigen::VectorXcd zc = zadoff_chu(n);
        for (int i = 0; i < n; ++i) CHECK(std::abs(std::abs(zc[i]) - 1.0) < 1e-12);
    }
    CHECK(zadoff_chu(64) == zadoff_chu(64));
    // Different coprime roots give different sequences.
    CHECK((zadoff_chu(63, 1) - zadoff_chu(63, 2)).norm() > 1.0);
    CHECK_THROWS_AS(zadoff_chu(64, 2), std::invalid_argument);
    CHECK_THROWS_AS(zadoff_chu(10, 0), std::invalid_argument);

    const SoundingPlan qpsk = make_plan(5, 2, 4, 4, 32, 4, 0.1, PilotKind::RandomQpsk);
    for (int i = 0; i < 32; ++i) CHECK(std::abs(std::abs(qpsk.pilots[i]) - 1.0) < 1e-12);
}

TEST_CASE("plan construction and validation") {
    const SoundingPlan plan = make_plan(42, 4, 12, 16, 64, 8, 0.01);
    CHECK(plan.n_blocks == 4);
    REQUIRE(plan.block_states.size() == 4);
    for (const auto& s : plan.block_states) {
        REQUIRE(s.size() == 16);
        for (int v : s) {
            CHECK(v >= 1);
            CHECK(v <= 12);
        }
    }
    validate_plan(plan, 12, 16);

    // Deterministic in the seed, sensitive to it.
    const SoundingPlan again = make_plan(42, 4, 12, 16, 64, 8, 0.01);
    CHECK(plan.block_states == again.block_states);
    CHECK(plan.pilots == again.pilots);
    CHECK(make_plan(43, 4, 12, 16, 64, 8, 0.01).block_states != plan.block_states);

    CHECK_THROWS_AS(make_plan(1, 0, 12, 16, 64, 8, 0.01), std::invalid_argument);
    CHECK_THROWS_AS(make_plan(1, 4, 12, 16, 64, 65, 0.01), std::invalid_argument);
    CHECK_THROWS_AS(make_plan(1, 4, 12, 16, 64, 8, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(validate_plan(plan, 11, 16), std::invalid_argument); // state 12 too big
    CHECK_THROWS_AS(validate_plan(plan, 12, 15), std::invalid_argument); // wrong antenna count

    SoundingPlan bad = plan;
    bad.pilots[3] *= 2.0;
    CHECK_THROWS_AS(validate_plan(bad, 12, 16), std::invalid_argument);
}

TEST_CASE("comb-4 overhead arithmetic") {
    CHECK(comb4_overhead(4, 4) == 4);
    CHECK(comb4_overhead(8, 4) == 8);
    CHECK(comb4_overhead(12, 4) == 12);
    CHECK(comb4_overhead(3, 4) == 0); // fewer users than one full comb
    CHECK(comb4_overhead(8, 2) == 4);
    CHECK_THROWS_AS(comb4_overhead(0, 4), std::invalid_argument);
    CHECK_THROWS_AS(comb4_overhead(4, 0), std::invalid_argument);
}

TEST_CASE("observation synthesis") {
    const AngleGrid grid = make_grid(30.0);
    const PatternSet patterns = PatternSet::synthesize(61, 6, 3);
    const GridPatternTable table = tabulate_patterns(patterns, grid);
    const ArrayGeometry geom(2, 2);

    SUBCASE("noise-only observation has the requested variance") {
        const SoundingPlan plan = make_plan(9, 4, 6, 4, 640, 4, 1.0);
        const SparseCoeffs empty = SparseCoeffs::zeros(grid.size(), 4);
        auto rng = make_engine(1, 0, SeedPurpose::Noise);
        const SoundingObservation obs = sound_grid(empty, grid, table, geom, plan, rng);
        REQUIRE(obs.y.rows() == 16);
        REQUIRE(obs.y.cols() == 640);
        const double var = obs.y.squaredNorm() / static_cast<double>(obs.y.size());
        CHECK(var == doctest::Approx(1.0).epsilon(0.05));

        auto rng2 = make_engine(1, 0, SeedPurpose::Noise);
        const SoundingObservation rerun = sound_grid(empty, grid, table, geom, plan, rng2);
        CHECK(obs.y == rerun.y);
    }

    SUBCASE("noiseless grid mode reproduces the dense factorization") {
        const SoundingPlan plan = make_plan(10, 3, 6, 4, 16, 4, 0.0);
        auto rng = make_engine(2, 0, SeedPurpose::Generic);
        const SparseCoeffs coeffs = random_coeffs(rng, grid.size(), 4, 6);
        const SoundingObservation obs = sound_grid(coeffs, grid, table, geom, plan, rng);

        auto [sv, sh] = dense_stacks(grid, table, geom, plan);
        const Eigen::MatrixXcd f_bar = dense_f_bar(plan.pilots, 4);
        const Eigen::MatrixXcd expect =
            (sv * coeffs.psi_v + sh * coeffs.psi_h) * f_bar.transpose();
        CHECK((obs.y - expect).norm() <= 1e-12 * expect.norm());
    }

    SUBCASE("single-antenna single-tap row has the closed form") {
        const AngleGrid g90 = make_grid(90.0);
        const GridPatternTable t90 = tabulate_patterns(patterns, g90);
        const ArrayGeometry solo(1, 1);
        const SoundingPlan plan = make_plan(11, 1, 6, 1, 12, 3, 0.0);
        SparseCoeffs c = SparseCoeffs::zeros(g90.size(), 3);
        const int b = g90.index(1, 2);
        const int tap = 2;
        const cplx gain{0.7, -0.3};
        c.psi_v(b, tap) = gain;
        c.mask(b, tap) = 1;
        c.support = {{b, tap}};

        auto rng = make_engine(3, 0, SeedPurpose::Generic);
        const SoundingObservation obs = sound_grid(c, g90, t90, solo, plan, rng);
        const int state = plan.block_states[0][0];
        const cplx pat = t90.v(state - 1, b); // beta = [1] for one antenna
        for (int n = 0; n < 12; ++n) {
            const double ang = -two_pi * tap * n / 12.0;
            const cplx expect = pat * gain * plan.pilots[n] * cplx{std::cos(ang), std::sin(ang)};
            CHECK(std::abs(obs.y(0, n) - expect) < 1e-13);
        }
    }

    SUBCASE("exact mode stacks per-block true channels times pilots") {
        const SoundingPlan plan = make_plan(12, 3, 6, 4, 16, 4, 0.0);
        const ScatterScene scene = synth_scene(77, 2, 3, 4, 10.0);
        auto rng = make_engine(4, 0, SeedPurpose::Generic);
        const SoundingObservation obs = sound_exact(scene, patterns, geom, plan, 1, rng);
        for (int t = 0; t < 3; ++t) {
            const Eigen::MatrixXcd h = exact_channel_all(
                scene, patterns, geom, plan.block_states[static_cast<std::size_t>(t)], 16, 1);
            const Eigen::MatrixXcd expect = h * plan.pilots.asDiagonal();
            CHECK((obs.y.middleRows(4 * t, 4) - expect).norm() <= 1e-13 * expect.norm());
        }
    }
}

TEST_CASE("svd reduction") {
    const AngleGrid grid = make_grid(30.0);
    const PatternSet patterns = PatternSet::synthesize(71, 8, 3);
    const GridPatternTable table = tabulate_patterns(patterns, grid);
    const ArrayGeometry geom(2, 2);

    SUBCASE("orthonormal basis, rank bound, truncation residual") {
        const SoundingPlan plan = make_plan(20, 4, 8, 4, 32, 6, 0.0);
        const auto basis = make_basis(grid, table, geom, plan);
        CHECK(basis->m_tilde <= 16);
        CHECK(basis->m_tilde <= 2 * grid.size());
        CHECK((basis->u_tilde.adjoint() * basis->u_tilde -
               Eigen::MatrixXcd::Identity(basis->m_tilde, basis->m_tilde))
                  .norm() <= 1e-10);

        auto [sv, sh] = dense_stacks(grid, table, geom, plan);
        Eigen::MatrixXcd g_full(sv.rows(), 2 * grid.size());
        g_full.leftCols(grid.size()) = sv;
        g_full.rightCols(grid.size()) = sh;
        const Eigen::MatrixXcd resid = g_full - basis->u_tilde * (basis->u_tilde.adjoint() * g_full);
        CHECK(resid.norm() <= 1e-6 * g_full.norm());

        // Projected bases are the retained rows of the stacked operator.
        CHECK((basis->g_v_proj - basis->u_tilde.adjoint() * sv).norm() <= 1e-12 * sv.norm());
    }

    SUBCASE("repeated blocks add no rank") {
        SoundingPlan one = make_plan(21, 1, 8, 4, 16, 4, 0.0);
        SoundingPlan two = one;
        two.n_blocks = 2;
        two.block_states.push_back(one.block_states[0]);
        const auto b1 = make_basis(grid, table, geom, one);
        const auto b2 = make_basis(grid, table, geom, two);
        CHECK(b2->m_tilde == b1->m_tilde);
        CHECK(b1->m_tilde <= 4);
    }

    SUBCASE("full-rank reduction preserves Frobenius norm of the data") {
        const SoundingPlan plan = make_plan(22, 2, 8, 4, 24, 4, 0.5);
        const auto basis = make_basis(grid, table, geom, plan);
        REQUIRE(basis->m_tilde == 8); // distinct random states keep all TM directions
        auto rng = make_engine(5, 0, SeedPurpose::Generic);
        const SparseCoeffs coeffs = random_coeffs(rng, grid.size(), 4, 5);
        const SoundingObservation obs = sound_grid(coeffs, grid, table, geom, plan, rng);
        const ReducedObservation red = reduce(basis, obs);
        CHECK(red.y_tilde.norm() == doctest::Approx(obs.y.norm()).epsilon(1e-10));
    }

    SUBCASE("reduced noise stays white") {
        const SoundingPlan plan = make_plan(23, 2, 8, 4, 1250, 4, 2.0);
        const SparseCoeffs empty = SparseCoeffs::zeros(grid.size(), 4);
        auto rng = make_engine(6, 0, SeedPurpose::Noise);
        const SoundingObservation obs = sound_grid(empty, grid, table, geom, plan, rng);
        const ReducedObservation red = preprocess(obs, grid, table, geom);
        const double var = red.y_tilde.squaredNorm() / static_cast<double>(red.y_tilde.size());
        CHECK(var == doctest::Approx(2.0).epsilon(0.05));
    }

    SUBCASE("degenerate all-zero basis is rejected") {
        GridPatternTable zero;
        zero.v = Eigen::MatrixXcd::Zero(2, grid.size());
        zero.h = Eigen::MatrixXcd::Zero(2, grid.size());
        const SoundingPlan plan = make_plan(24, 2, 2, 4, 16, 4, 0.0);
        CHECK_THROWS_AS(make_basis(grid, zero, geom, plan), NumericalError);
    }
}

TEST_CASE("implicit measurement operators match dense Kronecker products") {
    const AngleGrid grid = make_grid(90.0);
    const PatternSet patterns = PatternSet::synthesize(81, 5, 2);
    const GridPatternTable table = tabulate_patterns(patterns, grid);
    const ArrayGeometry geom(2, 1);
    const SoundingPlan plan = make_plan(30, 2, 5, 2, 8, 3, 0.0);
    const auto basis = make_basis(grid, table, geom, plan);

    const Eigen::MatrixXcd qv = kron(basis->f_bar, basis->g_v_proj);
    const Eigen::MatrixXcd qh = kron(basis->f_bar, basis->g_h_proj);

    auto rng = make_engine(7, 0, SeedPurpose::Generic);
    Eigen::MatrixXcd psi(grid.size(), 3);
    for (int i = 0; i < psi.rows(); ++i)
        for (int j = 0; j < psi.cols(); ++j) psi(i, j) = draw_cn(rng, 1.0);

    const Eigen::MatrixXcd applied = basis->apply_v(psi);
    const Eigen::VectorXcd applied_vec = qv * vec(psi);
    CHECK((vec(applied) - applied_vec).norm() <= 1e-12 * applied_vec.norm());

    Eigen::MatrixXcd r(basis->m_tilde, 8);
    for (int i = 0; i < r.rows(); ++i)
        for (int j = 0; j < r.cols(); ++j) r(i, j) = draw_cn(rng, 1.0);
    const Eigen::MatrixXcd adj = basis->adjoint_h(r);
    const Eigen::VectorXcd adj_vec = qh.adjoint() * vec(r);
    CHECK((vec(adj) - adj_vec).norm() <= 1e-12 * adj_vec.norm());
}

TEST_CASE("least-squares baseline") {
    SUBCASE("square invertible operator recovers exactly") {
        // Hand-built reduced observation: angular factor square and well
        // conditioned, delay factor the full DFT, so the minimum-norm
        // solution is the unique exact one.
        const int nb = 3, m_tilde = 6, n_subc = 4, nl = 4;
        auto rng = make_engine(8, 0, SeedPurpose::Generic);
        auto basis = std::make_shared<SoundingBasis>();
        basis->m_tilde = m_tilde;
        basis->u_tilde = Eigen::MatrixXcd::Identity(m_tilde, m_tilde);
        basis->g_v_proj.resize(m_tilde, nb);
        basis->g_h_proj.resize(m_tilde, nb);
        for (int i = 0; i < m_tilde; ++i)
            for (int j = 0; j < nb; ++j) {
                basis->g_v_proj(i, j) = draw_cn(rng, 1.0);
                basis->g_h_proj(i, j) = draw_cn(rng, 1.0);
            }
        basis->f_bar = dense_f_bar(zadoff_chu(n_subc), nl);
        basis->noise_var = 0.0;
        basis->n_grid = nb;
        basis->delay_span = nl;
        basis->n_subc = n_subc;
        basis->n_blocks = 1;
        basis->m_antennas = m_tilde;

        Eigen::MatrixXcd psi_v(nb, nl), psi_h(nb, nl);
        for (int i = 0; i < nb; ++i)
            for (int j = 0; j < nl; ++j) {
                psi_v(i, j) = draw_cn(rng, 1.0);
                psi_h(i, j) = draw_cn(rng, 1.0);
            }
        ReducedObservation red;
        red.basis = basis;
        red.y_tilde = basis->apply_v(psi_v) + basis->apply_h(psi_h);

        const SparseCoeffs est = ls_estimate(red);
        CHECK((est.psi_v - psi_v).norm() <= 1e-8 * psi_v.norm());
        CHECK((est.psi_h - psi_h).norm() <= 1e-8 * psi_h.norm());
        CHECK(static_cast<int>(est.support.size()) == nb * nl);
        CHECK(est.mask.minCoeff() == 1);
        validate_coeffs(est);
    }

    const AngleGrid grid = make_grid(90.0);
    const PatternSet patterns = PatternSet::synthesize(91, 6, 3);
    const GridPatternTable table = tabulate_patterns(patterns, grid);
    const ArrayGeometry geom(2, 2);
    const SoundingPlan plan = make_plan(31, 2, 6, 4, 8, 3, 0.0);

    SUBCASE("noiseless fit is a perfect projection") {
        auto rng = make_engine(9, 0, SeedPurpose::Generic);
        const SparseCoeffs truth = random_coeffs(rng, grid.size(), 3, 5);
        const SoundingObservation obs = sound_grid(truth, grid, table, geom, plan, rng);
        const ReducedObservation red = preprocess(obs, grid, table, geom);
        const SparseCoeffs est = ls_estimate(red);
        const Eigen::MatrixXcd fit = red.basis->apply_v(est.psi_v) + red.basis->apply_h(est.psi_h);
        CHECK((red.y_tilde - fit).norm() <= 1e-8 * red.y_tilde.norm());
    }

    SUBCASE("matches a dense pseudo-inverse oracle on an underdetermined instance") {
        auto rng = make_engine(10, 0, SeedPurpose::Generic);
        const SparseCoeffs truth = random_coeffs(rng, grid.size(), 3, 4);
        SoundingPlan noisy = plan;
        noisy.noise_var = 0.05;
        const SoundingObservation obs = sound_grid(truth, grid, table, geom, noisy, rng);
        const ReducedObservation red = preprocess(obs, grid, table, geom);
        const SparseCoeffs est = ls_estimate(red);

        const auto& b = *red.basis;
        Eigen::MatrixXcd a(b.m_tilde, 2 * b.n_grid);
        a.leftCols(b.n_grid) = b.g_v_proj;
        a.rightCols(b.n_grid) = b.g_h_proj;
        const Eigen::MatrixXcd q = kron(b.f_bar, a);
        const Eigen::BDCSVD<Eigen::MatrixXcd> svd(q, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::VectorXcd sol = svd.solve(vec(red.y_tilde));
        const Eigen::MatrixXcd stacked = unvec(sol, 2 * b.n_grid, b.delay_span);

        CHECK((est.psi_v - stacked.topRows(b.n_grid)).norm() <= 1e-8 * stacked.norm());
        CHECK((est.psi_h - stacked.bottomRows(b.n_grid)).norm() <= 1e-8 * stacked.norm());
    }

    SUBCASE("zero operator is reported as singular") {
        auto basis = std::make_shared<SoundingBasis>();
        basis->m_tilde = 2;
        basis->u_tilde = Eigen::MatrixXcd::Identity(2, 2);
        basis->g_v_proj = Eigen::MatrixXcd::Zero(2, 3);
        basis->g_h_proj = Eigen::MatrixXcd::Zero(2, 3);
        basis->f_bar = dense_f_bar(zadoff_chu(4), 2);
        basis->n_grid = 3;
        basis->delay_span = 2;
        basis->n_subc = 4;
        ReducedObservation red;
        red.basis = basis;
        red.y_tilde = Eigen::MatrixXcd::Ones(2, 4);
        CHECK_THROWS_AS(ls_estimate(red), NumericalError);
    }
}
