#pragma once

#include "fedosaa/errors.hpp"

#include <functional>
#include <vector>

namespace fedosaa {

/// Matrix-free linear operator v -> Av.
using LinearOperator = std::function<Vector(const Vector&)>;

struct LeastSquaresResult {
    Vector x;
    Eigen::Index rank = 0;
};

/// min ||Ax - b|| by column-pivoted Householder QR.
///
/// Pivots whose |R_ii| falls below rcond * |R_00| are treated as dependent:
/// their columns are excluded and the matching entries of x are zero.
/// Requires cols(A) <= rows(A).
LeastSquaresResult least_squares(const Matrix& a, const Vector& b, double rcond = 1e-12);

/// Constrained mixing coefficients: argmin ||R alpha|| subject to sum(alpha) = 1.
///
/// Columns of `residuals` are r_0 (current) ... r_m (oldest). Solved through the
/// unconstrained difference form; alpha_0 is set last as 1 - sum(alpha_1..m).
Vector aa_coefficients(const Matrix& residuals, double rcond = 1e-12);

struct KrylovResult {
    Vector x;
    int iterations = 0;
    double relative_residual = 1.0;
    /// ||Bx_j - g|| / ||g|| after each iteration j = 1..iterations.
    std::vector<double> residual_history;
};

/// Conjugate gradients from x_0 = 0, at most `max_iter` steps, early exit at
/// ||Hx - g|| <= tol ||g||. Throws SolverBreakdown on non-positive curvature
/// or non-finite values.
KrylovResult cg_solve(const LinearOperator& hvp, const Vector& g, int max_iter, double tol = 0.0);

/// Unrestarted GMRES from x_0 = 0 (Arnoldi with modified Gram-Schmidt,
/// Givens rotations for the small least-squares problem).
KrylovResult gmres_solve(const LinearOperator& op, const Vector& g, int max_iter, double tol = 0.0);

/// 2-norm condition number of a tall matrix via its singular values (inf when rank deficient).
double condition_number(const Matrix& m);

}  // namespace fedosaa
