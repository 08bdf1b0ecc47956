#include "fedosaa/anderson.hpp"

#include "fedosaa/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace fedosaa {

namespace {

AAHistory select_columns(const AAHistory& h, const std::vector<Eigen::Index>& keep) {
    AAHistory out;
    out.S.resize(h.S.rows(), static_cast<Eigen::Index>(keep.size()));
    out.Y.resize(h.Y.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.S.col(static_cast<Eigen::Index>(i)) = h.S.col(keep[i]);
        out.Y.col(static_cast<Eigen::Index>(i)) = h.Y.col(keep[i]);
    }
    return out;
}

void check_shapes(const AAHistory& h) {
    if (h.S.rows() != h.Y.rows() || h.S.cols() != h.Y.cols()) {
        throw ConfigError("AA history: S is " + std::to_string(h.S.rows()) + "x" + std::to_string(h.S.cols()) +
                          " but Y is " + std::to_string(h.Y.rows()) + "x" + std::to_string(h.Y.cols()));
    }
}

// Usable history: optional filtering, then at most d columns so the LS stays tall.
AAHistory prepare(const AAHistory& history, const AAOptions& options) {
    check_shapes(history);
    AAHistory h = options.filter ? filter_history(history, options.drop_tol) : history;
    if (h.columns() > h.Y.rows()) {
        h = filter_history(h, std::max(options.drop_tol, 1e-10));
        if (h.columns() > h.Y.rows()) {
            std::vector<Eigen::Index> keep(static_cast<std::size_t>(h.Y.rows()));
            for (Eigen::Index i = 0; i < h.Y.rows(); ++i) keep[static_cast<std::size_t>(i)] = i;
            h = select_columns(h, keep);
        }
    }
    return h;
}

LeastSquaresResult solve_coefficients(const AAHistory& h, const Vector& g, const AAOptions& options) {
    if (options.regularization <= 0.0) return least_squares(h.Y, g, options.rcond);
    const Eigen::Index d = h.Y.rows();
    const Eigen::Index m = h.Y.cols();
    const double lambda = options.regularization * h.Y.squaredNorm();
    Matrix augmented(d + m, m);
    augmented.topRows(d) = h.Y;
    augmented.bottomRows(m) = std::sqrt(lambda) * Matrix::Identity(m, m);
    Vector rhs = Vector::Zero(d + m);
    rhs.head(d) = g;
    return least_squares(augmented, rhs, options.rcond);
}

}  // namespace

bool AAHistory::degenerate() const { return Y.size() == 0 || (Y.array() == 0.0).all(); }

AAHistory build_history(std::span<const Vector> iterates, std::span<const Vector> residuals) {
    if (iterates.size() != residuals.size()) {
        throw ConfigError("build_history: " + std::to_string(iterates.size()) + " iterates but " +
                          std::to_string(residuals.size()) + " residuals");
    }
    if (iterates.size() < 2) throw ConfigError("build_history: need at least two iterates (L >= 1)");
    const Eigen::Index d = iterates.front().size();
    const auto m = static_cast<Eigen::Index>(iterates.size() - 1);
    AAHistory h;
    h.S.resize(d, m);
    h.Y.resize(d, m);
    for (Eigen::Index l = 0; l < m; ++l) {
        const auto i = static_cast<std::size_t>(l);
        if (iterates[i + 1].size() != d || residuals[i].size() != d || residuals[i + 1].size() != d) {
            throw DimensionMismatch("build_history", static_cast<std::size_t>(d),
                                    static_cast<std::size_t>(iterates[i + 1].size()));
        }
        h.S.col(l) = iterates[i + 1] - iterates[i];
        h.Y.col(l) = residuals[i + 1] - residuals[i];
    }
    return h;
}

AAHistory filter_history(const AAHistory& history, double drop_tol) {
    check_shapes(history);
    const Eigen::Index d = history.Y.rows();
    std::vector<Eigen::Index> keep;
    Matrix basis(d, std::min(d, history.columns()));
    Eigen::Index basis_size = 0;
    for (Eigen::Index l = 0; l < history.columns(); ++l) {
        const double norm = history.Y.col(l).norm();
        if (norm == 0.0 || basis_size == d) continue;
        Vector v = history.Y.col(l);
        // Two MGS passes keep the orthogonal component accurate for nearly dependent columns.
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index j = 0; j < basis_size; ++j) v -= basis.col(j).dot(v) * basis.col(j);
        }
        const double orth = v.norm();
        if (orth <= drop_tol * norm) continue;
        basis.col(basis_size++) = v / orth;
        keep.push_back(l);
    }
    return select_columns(history, keep);
}

AAHistory newest_columns(const AAHistory& history, Eigen::Index max_columns) {
    check_shapes(history);
    const Eigen::Index m = std::min(history.columns(), std::max<Eigen::Index>(max_columns, 0));
    AAHistory out;
    out.S = history.S.rightCols(m);
    out.Y = history.Y.rightCols(m);
    return out;
}

AAHistory concat_history(const AAHistory& older, const AAHistory& newer) {
    check_shapes(older);
    check_shapes(newer);
    if (older.empty()) return newer;
    if (newer.empty()) return older;
    if (older.S.rows() != newer.S.rows()) {
        throw DimensionMismatch("concat_history", static_cast<std::size_t>(newer.S.rows()),
                                static_cast<std::size_t>(older.S.rows()));
    }
    AAHistory out;
    out.S.resize(newer.S.rows(), older.columns() + newer.columns());
    out.Y.resize(newer.S.rows(), older.columns() + newer.columns());
    out.S << older.S, newer.S;
    out.Y << older.Y, newer.Y;
    return out;
}

AAStepResult aa_step(const Vector& w_t, const Vector& g_t, const AAHistory& history, double eta,
                     const AAOptions& options) {
    if (!(eta > 0.0)) throw ConfigError("aa_step: eta must be positive");
    if (w_t.size() != history.S.rows() || g_t.size() != history.S.rows()) {
        throw DimensionMismatch("aa_step", static_cast<std::size_t>(history.S.rows()),
                                static_cast<std::size_t>(g_t.size()));
    }
    const AAHistory h = prepare(history, options);
    if (h.empty()) throw DegenerateHistory("aa_step: no usable residual differences");

    const LeastSquaresResult ls = solve_coefficients(h, g_t, options);
    if (ls.rank == 0) throw DegenerateHistory("aa_step: residual differences have rank zero");

    const double mix = options.damping * eta;
    AAStepResult out;
    out.coefficients = ls.x;
    out.w = w_t - mix * g_t - (h.S - mix * h.Y) * ls.x;
    if (!out.w.allFinite()) throw NumericalError("aa_step: non-finite update");

    const double g_norm = g_t.norm();
    out.diagnostics.theta = g_norm == 0.0 ? 0.0 : (h.Y * ls.x - g_t).norm() / g_norm;
    out.diagnostics.rank = ls.rank;
    out.diagnostics.s_condition = condition_number(h.S);
    return out;
}

Vector apply_inverse_hessian(const AAHistory& history, double eta, const Vector& v, const AAOptions& options) {
    const AAHistory h = prepare(history, options);
    const double mix = options.damping * eta;
    if (h.empty()) return mix * v;
    const LeastSquaresResult ls = solve_coefficients(h, v, options);
    return mix * v + (h.S - mix * h.Y) * ls.x;
}

double optimization_gain(const AAHistory& history, const Vector& g, double rcond) {
    const double g_norm = g.norm();
    if (g_norm == 0.0) return 0.0;
    AAOptions options;
    options.rcond = rcond;
    const AAHistory h = prepare(history, options);
    if (h.empty()) return 1.0;
    const LeastSquaresResult ls = least_squares(h.Y, g, rcond);
    if (ls.rank == 0) return 1.0;
    return (h.Y * ls.x - g).norm() / g_norm;
}

}  // namespace fedosaa
