#pragma once

#include "fedosaa/anderson.hpp"
#include "fedosaa/errors.hpp"
#include "fedosaa/objective.hpp"
#include "fedosaa/random.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedosaa {

enum class Variant {
    FedAvg,
    FedSVRG,
    Scaffold,
    FedOsaaSvrg,
    FedOsaaScaffold,
    /// One AA step on plain (uncorrected) local GD, anchored at the local gradient.
    FedOsaaAvg,
    Giant,
    NewtonGmres,
    Lbfgs,
    Dane,
};

std::string_view to_string(Variant v);
/// Case-insensitive; accepts the names printed by to_string.
Variant parse_variant(std::string_view name);
std::span<const Variant> all_variants();

bool uses_global_gradient(Variant v);
bool is_scaffold_family(Variant v);
bool is_fedosaa(Variant v);

/// Anchor g of the FedOSAA-SCAFFOLD step w^t - H^-1 g.
enum class ScaffoldAnchor {
    /// The broadcast server variate c = grad f(w^{t-1}).
    ServerVariate,
    /// The client's corrected residual at w^t, grad f_k(w^t) - c_k + c.
    LocalResidual,
};

struct AlgoConfig {
    Variant variant = Variant::FedOsaaSvrg;
    double eta = 1.0;
    /// When positive, eta is taken as eta_over_beta / (smoothness bound of the model).
    double eta_over_beta = 0.0;
    /// L, the number of local corrected-gradient steps.
    int local_epochs = 10;
    /// Samples per local step and client; 0 or >= N_k means full batch.
    std::size_t batch_size = 0;
    /// q, the CG/GMRES iteration cap for GIANT and Newton-GMRES.
    int krylov_iters = 10;
    /// Relative residual for early Krylov exit; 0 runs all q iterations.
    double krylov_tol = 0.0;
    /// Backtracking Armijo on the global objective along the aggregated step.
    bool line_search = false;
    AAOptions aa;
    /// Refresh SCAFFOLD control variates from a mini-batch instead of the full local data.
    bool minibatch_control_variate = false;
    ScaffoldAnchor scaffold_anchor = ScaffoldAnchor::ServerVariate;
    /// Measure delta per client (one extra local gradient per FedOSAA update).
    bool diagnostics = true;
    /// Worker threads for the client updates of one round.
    std::size_t threads = 1;

    void validate() const;
    /// Copy with eta_over_beta folded into eta.
    AlgoConfig resolved(const LossModel& model) const;
};

struct CommCost {
    std::uint64_t rounds = 0;
    std::uint64_t floats_down = 0;
    std::uint64_t floats_up = 0;
};

/// Per aggregation round. Floats count the payload per direction, in units of d.
CommCost comm_cost(Variant v, std::size_t dim);

struct CommLedger {
    std::uint64_t rounds = 0;
    std::uint64_t floats_up = 0;
    std::uint64_t floats_down = 0;

    void add(const CommCost& cost);
    friend bool operator==(const CommLedger&, const CommLedger&) = default;
};

struct RoundState {
    std::size_t t = 0;
    Vector w;
    Vector server_cv;
    std::vector<Vector> client_cv;
    std::vector<Rng> rngs;
    CommLedger comm;
    /// Column pairs carried to the next round when AAOptions::carry_over > 0.
    std::vector<AAHistory> carried;
};

/// c = c_k = 0, one independent RNG stream per client.
RoundState initial_state(const LossModel& model, const Vector& w0, std::uint64_t seed);

struct RoundReport {
    /// Per client; NaN where a variant has no AA step.
    std::vector<double> theta;
    std::vector<double> delta;
    std::vector<Eigen::Index> rank;
    std::vector<double> s_condition;
    /// Clients that fell back to their last local iterate.
    std::size_t fallbacks = 0;
    double step_length = 1.0;
};

struct LocalTrajectory {
    /// w_{k,0} = w^t ... w_{k,L}.
    std::vector<Vector> iterates;
    /// r_{k,0} ... r_{k,L-1}, plus r_{k,L} when requested.
    std::vector<Vector> residuals;
};

/// Positions of a mini-batch drawn without replacement (sorted); empty for full batch.
std::vector<std::size_t> sample_batch(Rng& rng, std::size_t client_size, std::size_t batch_size);

/// L steps of w <- w - eta * r with r the corrected (mini-batch) gradient.
/// Throws DivergenceError carrying the local step on a non-finite iterate.
LocalTrajectory local_update_first_order(const LossModel& model, std::size_t k, const Vector& w_t,
                                         const GradientCorrection& correction, const AlgoConfig& cfg, Rng& rng,
                                         bool final_residual = false);

struct LocalResult {
    Vector w;
    AADiagnostics diagnostics;
    bool fallback = false;
    /// Raw (unfiltered) history of this update, for carry-over.
    AAHistory history;
};

/// Local GD followed by one AA step w^t - H^-1 g. Falls back to w_{k,L} on a degenerate history.
LocalResult local_update_fedosaa(const LossModel& model, std::size_t k, const Vector& w_t, const Vector& anchor,
                                 const GradientCorrection& correction, const AlgoConfig& cfg, Rng& rng,
                                 const AAHistory& carried = {});

enum class KrylovSolver { CG, GMRES };

/// w^t - p with p the q-step Krylov solution of H_k(w^t) p = grad f(w^t).
Vector local_update_newton_krylov(const LossModel& model, std::size_t k, const Vector& w_t,
                                  const Vector& global_grad, const AlgoConfig& cfg, KrylovSolver solver);

/// Two-loop recursion on (s_l, y_l) pairs, H_0 = (s'y / y'y) of the newest pair.
Vector lbfgs_two_loop(const AAHistory& pairs, const Vector& g);

/// Pairs with s'y > 1e-12 ||s|| ||y||.
AAHistory lbfgs_curvature_pairs(const AAHistory& history);

/// FedOSAA-style trajectory, then w^t - two_loop(grad f(w^t)). Falls back to w_{k,L} without pairs.
LocalResult local_update_lbfgs(const LossModel& model, std::size_t k, const Vector& w_t, const Vector& global_grad,
                               const GradientCorrection& correction, const AlgoConfig& cfg, Rng& rng);

/// Exact minimizer of the corrected local objective by damped Newton.
Vector local_update_dane(const LossModel& model, std::size_t k, const Vector& w_t, const Vector& global_grad);

/// sum_k weights_k * updates_k in client order.
Vector aggregate(std::span<const Vector> updates, std::span<const double> weights);
Vector aggregate(std::span<const Vector> updates, const LossModel& model);

/// Backtracking Armijo (c1 = 1e-4, halving, 30 trials) on the global objective along `direction`.
double armijo_step(const LossModel& model, const Vector& w, const Vector& direction, const Vector& grad);

/// One aggregation round in place. Throws DivergenceError (round index) on blow-up.
RoundReport run_round(RoundState& state, const AlgoConfig& cfg, const LossModel& model);

/// min_k (1-d)^2/beta - (1+d)d/mu - beta(1+d)^2/(2 mu^2) over the client deltas.
double contraction_rho(std::span<const double> deltas, double mu, double beta);

struct NewtonProblem {
    std::function<double(const Vector&)> value;
    std::function<Vector(const Vector&)> gradient;
    std::function<Matrix(const Vector&)> hessian;
};

struct NewtonResult {
    Vector x;
    int iterations = 0;
    double grad_norm = 0.0;
};

/// Newton with Cholesky solves and backtracking, until ||grad|| <= tol.
/// Throws ConvergenceFailure after `max_iter` iterations.
NewtonResult damped_newton(const NewtonProblem& problem, Vector x0, double tol, int max_iter);

}  // namespace fedosaa
