#pragma once

#include "fedosaa/errors.hpp"

#include <cstddef>
#include <limits>
#include <span>

namespace fedosaa {

/// Difference matrices of one local trajectory: S holds iterate steps
/// s_l = w_{l+1} - w_l, Y the residual changes y_l = r_{l+1} - r_l, oldest column first.
struct AAHistory {
    Matrix S;
    Matrix Y;

    Eigen::Index columns() const noexcept { return S.cols(); }
    bool empty() const noexcept { return S.cols() == 0; }
    /// True when every residual difference is exactly zero.
    bool degenerate() const;
};

/// Tuning knobs of the one-step AA update. Defaults give the plain update.
struct AAOptions {
    /// Scales eta in the mixing term: H^-1 = d*eta I + (S - d*eta Y)(Y'Y)^+ Y'.
    double damping = 1.0;
    /// Tikhonov weight on the coefficients, relative to ||Y||_F^2.
    double regularization = 0.0;
    /// Run filter_history with `drop_tol` before the solve.
    bool filter = false;
    double drop_tol = 1e-10;
    /// Column pairs kept from earlier rounds (0 = none).
    std::size_t carry_over = 0;
    /// Relative rank cut-off for the pivoted QR solve.
    double rcond = 1e-12;
};

struct AADiagnostics {
    double theta = std::numeric_limits<double>::quiet_NaN();
    double delta = std::numeric_limits<double>::quiet_NaN();
    Eigen::Index rank = 0;
    double s_condition = std::numeric_limits<double>::quiet_NaN();
};

struct AAStepResult {
    Vector w;
    /// z = argmin ||Y z - g|| (zero entries for truncated columns).
    Vector coefficients;
    AADiagnostics diagnostics;
};

/// Builds S and Y from L+1 iterates and the L+1 residuals evaluated at them.
AAHistory build_history(std::span<const Vector> iterates, std::span<const Vector> residuals);

/// Drops (s_l, y_l) pairs whose y_l is numerically dependent on the columns
/// already kept (modified Gram-Schmidt, oldest first).
AAHistory filter_history(const AAHistory& history, double drop_tol);

/// Keeps at most `max_columns` of the newest column pairs.
AAHistory newest_columns(const AAHistory& history, Eigen::Index max_columns);

/// Concatenates two histories; `older` columns come first.
AAHistory concat_history(const AAHistory& older, const AAHistory& newer);

/// w_t - H^-1 g_t with H^-1 = eta I + (S - eta Y)(Y'Y)^+ Y', evaluated as
/// w_t - eta g_t - (S - eta Y) z for the rank-truncated least-squares z.
/// Throws DegenerateHistory when Y has rank zero.
AAStepResult aa_step(const Vector& w_t, const Vector& g_t, const AAHistory& history, double eta,
                     const AAOptions& options = {});

/// H^-1 v for the same inverse as aa_step.
Vector apply_inverse_hessian(const AAHistory& history, double eta, const Vector& v, const AAOptions& options = {});

/// ||(I - Proj_Y) g|| / ||g||; 1 when Y has rank 0, 0 when g = 0.
double optimization_gain(const AAHistory& history, const Vector& g, double rcond = 1e-12);

}  // namespace fedosaa
