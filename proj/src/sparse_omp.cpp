// SPDX-License-Identifier: Apache-2.0

#include "pfas/sparse_omp.hpp"

namespace pfas {

namespace {

struct ColumnStats {
    Eigen::VectorXd f_norm2;    // per delay column of f_bar
    Eigen::VectorXd v_norm2;    // per angular column, V polarization
    Eigen::VectorXd h_norm2;
    Eigen::VectorXcd cross;     // a_v_b^H a_h_b
};

ColumnStats column_stats(const SoundingBasis& basis) {
    ColumnStats s;
    s.f_norm2 = basis.f_bar.colwise().squaredNorm();
    s.v_norm2 = basis.g_v_proj.colwise().squaredNorm();
    s.h_norm2 = basis.g_h_proj.colwise().squaredNorm();
    s.cross.resize(basis.n_grid);
    for (int b = 0; b < basis.n_grid; ++b)
        s.cross[b] = basis.g_v_proj.col(b).dot(basis.g_h_proj.col(b));
    return s;
}

// Residual energy captured by one cell's two-column least-squares fit,
// x^H (q^H q)^{-1} x with x = q^H r. Scoring captured energy instead of the
// coefficient norm keeps the sweep invariant to column scaling; ranking by
// coefficient norm would favor weak-pattern cells, whose fits trade a small
// correlation for a large coefficient. Falls back to the better single
// column when the 2x2 Gram is near singular.
double cell_score(double a, double bb, cplx c, cplx x1, cplx x2) {
    const double det = a * bb - std::norm(c);
    if (det > 1e-14 * a * bb) {
        const cplx u1 = (bb * x1 - c * x2) / det;
        const cplx u2 = (a * x2 - std::conj(c) * x1) / det;
        return (std::conj(u1) * x1 + std::conj(u2) * x2).real();
    }
    double best = 0.0;
    if (a > 1e-24) best = std::norm(x1) / a;
    if (bb > 1e-24) best = std::max(best, std::norm(x2) / bb);
    return best;
}

} // namespace

int select_index(const Eigen::MatrixXcd& residual, const ReducedObservation& reduced,
                 const std::vector<std::uint8_t>& excluded) {
    const SoundingBasis& basis = *reduced.basis;
    const int nb = basis.n_grid;
    const int nl = basis.delay_span;
    if (static_cast<int>(excluded.size()) != nb * nl)
        throw std::invalid_argument("select_index: excluded set has wrong size");
    if (residual.rows() != basis.m_tilde || residual.cols() != basis.n_subc)
        throw std::invalid_argument("select_index: residual shape mismatch");

    bool any_candidate = false;
    for (const auto flag : excluded)
        if (!flag) {
            any_candidate = true;
            break;
        }
    if (!any_candidate) throw std::invalid_argument("select_index: no candidates remain");

    // Correlations of every cell's column pair with the residual, in two
    // products thanks to q_{(b,l)} = f_bar_l (x) a_b.
    const Eigen::MatrixXcd p_v = basis.adjoint_v(residual);
    const Eigen::MatrixXcd p_h = basis.adjoint_h(residual);
    const ColumnStats stats = column_stats(basis);

    int best = -1;
    double best_score = -1.0;
    for (int l = 0; l < nl; ++l)
        for (int b = 0; b < nb; ++b) {
            const int i = l * nb + b;
            if (excluded[static_cast<std::size_t>(i)]) continue;
            const double a = stats.f_norm2[l] * stats.v_norm2[b];
            const double bb = stats.f_norm2[l] * stats.h_norm2[b];
            if (a + bb < omp_degenerate_col * omp_degenerate_col) continue;
            const cplx c = stats.f_norm2[l] * stats.cross[b];
            const double score = cell_score(a, bb, c, p_v(b, l), p_h(b, l));
            if (score > best_score) {
                best_score = score;
                best = i;
            }
        }
    return best;
}

namespace {

// Incrementally grown Cholesky factor of the support Gram matrix, two
// interleaved columns (V, H) per selected cell.
class SupportSolver {
  public:
    explicit SupportSolver(const SoundingBasis& basis)
        : basis_(basis), f_gram_(basis.f_bar.adjoint() * basis.f_bar) {}

    // Appends one cell; returns false (leaving the state untouched) when the
    // extended Gram stops being positive definite.
    bool push(int b, int l) {
        const int k = static_cast<int>(cells_.size());
        Eigen::MatrixXcd bcol(2 * k, 2); // cross terms against existing cells
        for (int j = 0; j < k; ++j) {
            const auto [bj, lj] = cells_[static_cast<std::size_t>(j)];
            const cplx f = f_gram_(lj, l);
            bcol(2 * j, 0) = f * basis_.g_v_proj.col(bj).dot(basis_.g_v_proj.col(b));
            bcol(2 * j, 1) = f * basis_.g_v_proj.col(bj).dot(basis_.g_h_proj.col(b));
            bcol(2 * j + 1, 0) = f * basis_.g_h_proj.col(bj).dot(basis_.g_v_proj.col(b));
            bcol(2 * j + 1, 1) = f * basis_.g_h_proj.col(bj).dot(basis_.g_h_proj.col(b));
        }
        Eigen::Matrix2cd cblk;
        const double fl = f_gram_(l, l).real();
        cblk(0, 0) = fl * basis_.g_v_proj.col(b).squaredNorm();
        cblk(0, 1) = fl * basis_.g_v_proj.col(b).dot(basis_.g_h_proj.col(b));
        cblk(1, 0) = std::conj(cblk(0, 1));
        cblk(1, 1) = fl * basis_.g_h_proj.col(b).squaredNorm();

        Eigen::MatrixXcd x(2 * k, 2);
        if (k > 0) x = chol_.topLeftCorner(2 * k, 2 * k).triangularView<Eigen::Lower>().solve(bcol);
        Eigen::Matrix2cd s = cblk;
        if (k > 0) s -= x.adjoint() * x;

        // 2x2 Cholesky with a relative pivot guard.
        const double piv0 = s(0, 0).real();
        if (!(piv0 > 1e-24 * std::max(cblk(0, 0).real(), 1e-300))) return false;
        const double l00 = std::sqrt(piv0);
        const cplx l10 = s(1, 0) / l00;
        const double piv1 = s(1, 1).real() - std::norm(l10);
        if (!(piv1 > 1e-24 * std::max(cblk(1, 1).real(), 1e-300))) return false;

        if (chol_.rows() < 2 * k + 2) {
            Eigen::MatrixXcd grown = Eigen::MatrixXcd::Zero(2 * k + 16, 2 * k + 16);
            grown.topLeftCorner(chol_.rows(), chol_.cols()) = chol_;
            chol_.swap(grown);
        }
        chol_.block(2 * k, 0, 2, 2 * k) = x.adjoint();
        chol_(2 * k, 2 * k) = l00;
        chol_(2 * k + 1, 2 * k) = l10;
        chol_(2 * k, 2 * k + 1) = cplx{0.0, 0.0};
        chol_(2 * k + 1, 2 * k + 1) = std::sqrt(piv1);
        cells_.emplace_back(b, l);
        return true;
    }

    void pop() { cells_.pop_back(); }

    // Coefficients for the current support against the given correlation
    // tables (rhs entries are q^H vec(Y)).
    Eigen::VectorXcd solve(const Eigen::MatrixXcd& b_v, const Eigen::MatrixXcd& b_h) const {
        const int k = static_cast<int>(cells_.size());
        Eigen::VectorXcd rhs(2 * k);
        for (int j = 0; j < k; ++j) {
            const auto [bj, lj] = cells_[static_cast<std::size_t>(j)];
            rhs[2 * j] = b_v(bj, lj);
            rhs[2 * j + 1] = b_h(bj, lj);
        }
        const auto lower = chol_.topLeftCorner(2 * k, 2 * k).triangularView<Eigen::Lower>();
        Eigen::VectorXcd y = lower.solve(rhs);
        return lower.adjoint().solve(y);
    }

    Eigen::MatrixXcd residual(const Eigen::MatrixXcd& y_tilde,
                              const Eigen::VectorXcd& coef) const {
        Eigen::MatrixXcd r = y_tilde;
        for (std::size_t j = 0; j < cells_.size(); ++j) {
            const auto [b, l] = cells_[j];
            r.noalias() -= (basis_.g_v_proj.col(b) * coef[static_cast<Eigen::Index>(2 * j)] +
                            basis_.g_h_proj.col(b) * coef[static_cast<Eigen::Index>(2 * j + 1)]) *
                           basis_.f_bar.col(l).transpose();
        }
        return r;
    }

    const std::vector<std::pair<int, int>>& cells() const { return cells_; }

  private:
    const SoundingBasis& basis_;
    Eigen::MatrixXcd f_gram_;
    Eigen::MatrixXcd chol_;
    std::vector<std::pair<int, int>> cells_;
};

SparseCoeffs coeffs_from_cells(const std::vector<std::pair<int, int>>& cells,
                               const Eigen::VectorXcd& coef, int n_grid, int delay_span) {
    SparseCoeffs out = SparseCoeffs::zeros(n_grid, delay_span);
    std::vector<std::pair<int, int>> sorted = cells;
    std::sort(sorted.begin(), sorted.end(), [&](const auto& a, const auto& b) {
        return static_cast<long long>(a.second) * n_grid + a.first <
               static_cast<long long>(b.second) * n_grid + b.first;
    });
    for (std::size_t j = 0; j < cells.size(); ++j) {
        const auto [b, l] = cells[j];
        out.psi_v(b, l) = coef[static_cast<Eigen::Index>(2 * j)];
        out.psi_h(b, l) = coef[static_cast<Eigen::Index>(2 * j + 1)];
        out.mask(b, l) = 1;
    }
    out.support = std::move(sorted);
    return out;
}

} // namespace

SupportFit fit_support(const std::vector<int>& support, const ReducedObservation& reduced) {
    const SoundingBasis& basis = *reduced.basis;
    SupportFit fit;
    fit.psi_v = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(support.size()));
    fit.psi_h = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(support.size()));
    if (support.empty()) {
        fit.residual = reduced.y_tilde;
        return fit;
    }

    SupportSolver solver(basis);
    for (int i : support) {
        if (i < 0 || i >= basis.n_grid * basis.delay_span)
            throw std::invalid_argument("fit_support: cell index out of range");
        if (!solver.push(i % basis.n_grid, i / basis.n_grid))
            throw NumericalError("fit_support: selected columns are rank deficient");
    }
    const Eigen::MatrixXcd b_v = basis.adjoint_v(reduced.y_tilde);
    const Eigen::MatrixXcd b_h = basis.adjoint_h(reduced.y_tilde);
    const Eigen::VectorXcd coef = solver.solve(b_v, b_h);
    for (std::size_t j = 0; j < support.size(); ++j) {
        fit.psi_v[static_cast<Eigen::Index>(j)] = coef[static_cast<Eigen::Index>(2 * j)];
        fit.psi_h[static_cast<Eigen::Index>(j)] = coef[static_cast<Eigen::Index>(2 * j + 1)];
    }
    fit.residual = solver.residual(reduced.y_tilde, coef);
    return fit;
}

OmpResult run_momp(const ReducedObservation& reduced, double noise_var, int max_iter) {
    const SoundingBasis& basis = *reduced.basis;
    if (noise_var < 0.0) throw std::invalid_argument("run_momp: negative noise variance");
    if (max_iter < 0) throw std::invalid_argument("run_momp: negative iteration cap");
    const long long mn = static_cast<long long>(basis.m_tilde) * basis.n_subc;
    const int cap = max_iter > 0
                        ? max_iter
                        : static_cast<int>(std::min<long long>(mn / 2, 256));

    OmpResult result;
    result.initial_residual = reduced.y_tilde.squaredNorm();
    const double threshold =
        std::max(static_cast<double>(mn) * noise_var, omp_rel_floor * result.initial_residual);

    const Eigen::MatrixXcd b_v = basis.adjoint_v(reduced.y_tilde);
    const Eigen::MatrixXcd b_h = basis.adjoint_h(reduced.y_tilde);

    SupportSolver solver(basis);
    std::vector<std::uint8_t> excluded(
        static_cast<std::size_t>(basis.n_grid) * static_cast<std::size_t>(basis.delay_span), 0);
    Eigen::MatrixXcd residual = reduced.y_tilde;
    Eigen::VectorXcd coef;
    double res_norm2 = result.initial_residual;

    while (res_norm2 > threshold && result.iterations < cap) {
        const int pick = select_index(residual, reduced, excluded);
        if (pick < 0) {
            result.saturated = true;
            break;
        }
        excluded[static_cast<std::size_t>(pick)] = 1;
        if (!solver.push(pick % basis.n_grid, pick / basis.n_grid)) {
            result.saturated = true;
            break;
        }
        const Eigen::VectorXcd new_coef = solver.solve(b_v, b_h);
        const Eigen::MatrixXcd new_residual = solver.residual(reduced.y_tilde, new_coef);
        const double new_norm2 = new_residual.squaredNorm();
        if (new_norm2 >= res_norm2) {
            // The refit no longer helps; keep the previous support.
            solver.pop();
            result.saturated = true;
            break;
        }
        coef = new_coef;
        residual = new_residual;
        res_norm2 = new_norm2;
        result.support_order.push_back(pick);
        result.residual_history.push_back(res_norm2);
        ++result.iterations;
    }
    if (result.iterations == cap && res_norm2 > threshold) result.saturated = true;

    result.coeffs = coeffs_from_cells(solver.cells(), coef, basis.n_grid, basis.delay_span);
    return result;
}

OmpResult run_momp(const ReducedObservation& reduced) {
    return run_momp(reduced, reduced.basis->noise_var, 0);
}

} // namespace pfas
