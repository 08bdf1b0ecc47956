#include "fedosaa/linalg.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <string>

namespace fedosaa {

namespace {

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

LeastSquaresResult least_squares(const Matrix& a, const Vector& b, double rcond) {
    if (a.rows() != b.size()) {
        throw DimensionMismatch("least_squares rhs", static_cast<std::size_t>(a.rows()),
                                static_cast<std::size_t>(b.size()));
    }
    if (a.cols() > a.rows()) {
        throw ConfigError("least_squares: " + std::to_string(a.cols()) + " columns exceed " +
                          std::to_string(a.rows()) + " rows");
    }
    if (!all_finite(a) || !b.allFinite()) throw NumericalError("least_squares: non-finite input");

    LeastSquaresResult result;
    result.x = Vector::Zero(a.cols());
    if (a.cols() == 0) return result;

    Eigen::ColPivHouseholderQR<Matrix> qr(a);
    qr.setThreshold(rcond);
    const Eigen::Index rank = qr.rank();
    result.rank = rank;
    if (rank == 0) return result;

    Vector c = b;
    c.applyOnTheLeft(qr.householderQ().adjoint());
    Vector y = qr.matrixQR().topLeftCorner(rank, rank).triangularView<Eigen::Upper>().solve(c.head(rank));
    Vector permuted = Vector::Zero(a.cols());
    permuted.head(rank) = y;
    result.x = qr.colsPermutation() * permuted;
    return result;
}

Vector aa_coefficients(const Matrix& residuals, double rcond) {
    const Eigen::Index count = residuals.cols();
    if (count == 0) throw ConfigError("aa_coefficients needs at least one residual");
    if (!all_finite(residuals)) throw NumericalError("aa_coefficients: non-finite residual");
    Vector alpha(count);
    if (count == 1) {
        alpha[0] = 1.0;
        return alpha;
    }
    const Eigen::Index m = count - 1;
    Matrix differences(residuals.rows(), m);
    for (Eigen::Index i = 0; i < m; ++i) differences.col(i) = residuals.col(i) - residuals.col(i + 1);

    // r_0 - sum_i gamma_i (r_i - r_{i+1}) == sum_i alpha_i r_i
    const Vector gamma = least_squares(differences, residuals.col(0), rcond).x;
    double tail = 0.0;
    for (Eigen::Index i = 1; i <= m; ++i) {
        alpha[i] = gamma[i - 1] - (i < m ? gamma[i] : 0.0);
        tail += alpha[i];
    }
    alpha[0] = 1.0 - tail;
    return alpha;
}

KrylovResult cg_solve(const LinearOperator& hvp, const Vector& g, int max_iter, double tol) {
    if (max_iter < 1) throw ConfigError("cg_solve: iteration cap must be >= 1");
    if (!g.allFinite()) throw NumericalError("cg_solve: non-finite right-hand side");

    KrylovResult out;
    out.x = Vector::Zero(g.size());
    const double g_norm = g.norm();
    if (g_norm == 0.0) {
        out.relative_residual = 0.0;
        return out;
    }

    Vector r = g;
    Vector p = r;
    double rr = r.squaredNorm();
    for (int it = 1; it <= max_iter; ++it) {
        const Vector hp = hvp(p);
        const double curvature = p.dot(hp);
        if (!std::isfinite(curvature) || !hp.allFinite()) {
            throw SolverBreakdown("cg_solve: non-finite operator output", out.x, it);
        }
        if (curvature <= 0.0) {
            throw SolverBreakdown("cg_solve: non-positive curvature (operator not SPD)", out.x, it);
        }
        const double step = rr / curvature;
        Vector next = out.x + step * p;
        if (!next.allFinite()) throw SolverBreakdown("cg_solve: non-finite iterate", out.x, it);
        out.x = std::move(next);
        r -= step * hp;
        const double rr_next = r.squaredNorm();
        out.iterations = it;
        out.relative_residual = std::sqrt(rr_next) / g_norm;
        out.residual_history.push_back(out.relative_residual);
        if (out.relative_residual <= tol || rr_next == 0.0) break;
        p = r + (rr_next / rr) * p;
        rr = rr_next;
    }
    return out;
}

KrylovResult gmres_solve(const LinearOperator& op, const Vector& g, int max_iter, double tol) {
    if (max_iter < 1) throw ConfigError("gmres_solve: iteration cap must be >= 1");
    if (!g.allFinite()) throw NumericalError("gmres_solve: non-finite right-hand side");

    KrylovResult out;
    const Eigen::Index n = g.size();
    out.x = Vector::Zero(n);
    const double beta = g.norm();
    if (beta == 0.0) {
        out.relative_residual = 0.0;
        return out;
    }

    const Eigen::Index q = max_iter;
    Matrix basis(n, q + 1);
    Matrix hess = Matrix::Zero(q + 1, q);
    Vector cs = Vector::Zero(q);
    Vector sn = Vector::Zero(q);
    Vector rhs = Vector::Zero(q + 1);
    rhs[0] = beta;
    basis.col(0) = g / beta;

    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < q; ++j) {
        Vector w = op(basis.col(j));
        if (!w.allFinite()) throw SolverBreakdown("gmres_solve: non-finite operator output", out.x, static_cast<int>(j + 1));
        const double w_norm = w.norm();
        for (Eigen::Index i = 0; i <= j; ++i) {
            hess(i, j) = w.dot(basis.col(i));
            w -= hess(i, j) * basis.col(i);
        }
        const double h_next = w.norm();
        hess(j + 1, j) = h_next;

        for (Eigen::Index i = 0; i < j; ++i) {
            const double tmp = cs[i] * hess(i, j) + sn[i] * hess(i + 1, j);
            hess(i + 1, j) = -sn[i] * hess(i, j) + cs[i] * hess(i + 1, j);
            hess(i, j) = tmp;
        }
        const double a = hess(j, j);
        const double b = hess(j + 1, j);
        if (b == 0.0) {
            cs[j] = 1.0;
            sn[j] = 0.0;
        } else if (std::abs(b) > std::abs(a)) {
            const double t = a / b;
            sn[j] = 1.0 / std::sqrt(1.0 + t * t);
            cs[j] = sn[j] * t;
        } else {
            const double t = b / a;
            cs[j] = 1.0 / std::sqrt(1.0 + t * t);
            sn[j] = cs[j] * t;
        }
        hess(j, j) = cs[j] * a + sn[j] * b;
        hess(j + 1, j) = 0.0;
        rhs[j + 1] = -sn[j] * rhs[j];
        rhs[j] = cs[j] * rhs[j];

        k = j + 1;
        out.relative_residual = std::abs(rhs[j + 1]) / beta;
        out.residual_history.push_back(out.relative_residual);

        // Happy breakdown: the Krylov space is invariant, the current solution is exact.
        const bool exhausted = h_next <= 1e-14 * w_norm || h_next == 0.0;
        if (exhausted || out.relative_residual <= tol) break;
        basis.col(j + 1) = w / h_next;
    }

    if (hess.topLeftCorner(k, k).diagonal().cwiseAbs().minCoeff() == 0.0) {
        throw SolverBreakdown("gmres_solve: singular projected system", out.x, static_cast<int>(k));
    }
    const Vector y = hess.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(rhs.head(k));
    out.x = basis.leftCols(k) * y;
    out.iterations = static_cast<int>(k);
    if (!out.x.allFinite()) throw SolverBreakdown("gmres_solve: non-finite solution", Vector::Zero(n), out.iterations);
    return out;
}

double condition_number(const Matrix& m) {
    if (m.cols() == 0 || m.rows() == 0) return 1.0;
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    const double smallest = s[s.size() - 1];
    if (smallest == 0.0) return std::numeric_limits<double>::infinity();
    return s[0] / smallest;
}

}  // namespace fedosaa
