#include "fedosaa/algorithms.hpp"

#include "fedosaa/linalg.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <string>
#include <thread>

namespace fedosaa {

namespace {

struct VariantName {
    Variant variant;
    std::string_view name;
};

constexpr std::array<VariantName, 10> kVariantNames{{
    {Variant::FedAvg, "FedAvg"},
    {Variant::FedSVRG, "FedSVRG"},
    {Variant::Scaffold, "SCAFFOLD"},
    {Variant::FedOsaaSvrg, "FedOSAA-SVRG"},
    {Variant::FedOsaaScaffold, "FedOSAA-SCAFFOLD"},
    {Variant::FedOsaaAvg, "FedOSAA-AVG"},
    {Variant::Giant, "GIANT"},
    {Variant::NewtonGmres, "Newton-GMRES"},
    {Variant::Lbfgs, "L-BFGS"},
    {Variant::Dane, "DANE"},
}};

constexpr std::array<Variant, 10> kAllVariants{
    Variant::FedAvg,     Variant::FedSVRG,     Variant::Scaffold, Variant::FedOsaaSvrg, Variant::FedOsaaScaffold,
    Variant::FedOsaaAvg, Variant::Giant,       Variant::NewtonGmres, Variant::Lbfgs,    Variant::Dane,
};

bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(a[i])) != std::tolower(static_cast<unsigned char>(b[i]))) {
            return false;
        }
    }
    return true;
}

constexpr double kDivergenceNorm = 1e12;
constexpr double kArmijoC1 = 1e-4;
constexpr int kArmijoTrials = 30;

bool full_batch(const LossModel& model, std::size_t k, const AlgoConfig& cfg) {
    return cfg.batch_size == 0 || cfg.batch_size >= model.client_size(k);
}

// Full batch: fold grad f(w^t) - grad f_k(w^t) into a constant offset so the anchor
// gradient is evaluated once instead of at every local step.
GradientCorrection svrg_correction(const LossModel& model, std::size_t k, const Vector& w_t, const Vector& g,
                                   const AlgoConfig& cfg) {
    if (full_batch(model, k, cfg)) return OffsetCorrection{g - model.gradient(k, w_t)};
    return SvrgCorrection{w_t, g};
}

template <typename Fn>
void for_each_client(std::size_t count, std::size_t threads, Fn&& fn) {
    std::vector<std::exception_ptr> errors(count);
    auto guarded = [&](std::size_t k) {
        try {
            fn(k);
        } catch (...) {
            errors[k] = std::current_exception();
        }
    };
    const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), count);
    if (workers <= 1) {
        for (std::size_t k = 0; k < count; ++k) guarded(k);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t id = 0; id < workers; ++id) {
            pool.emplace_back([&, id] {
                for (std::size_t k = id; k < count; k += workers) guarded(k);
            });
        }
        for (auto& th : pool) th.join();
    }
    // Report the lowest-index failure so the outcome does not depend on scheduling.
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

std::string_view to_string(Variant v) {
    for (const auto& entry : kVariantNames) {
        if (entry.variant == v) return entry.name;
    }
    return "unknown";
}

Variant parse_variant(std::string_view name) {
    for (const auto& entry : kVariantNames) {
        if (iequals(entry.name, name)) return entry.variant;
    }
    // Common spellings without punctuation.
    std::string compact;
    for (char c : name) {
        if (c != '-' && c != '_') compact.push_back(c);
    }
    for (const auto& entry : kVariantNames) {
        std::string candidate;
        for (char c : entry.name) {
            if (c != '-') candidate.push_back(c);
        }
        if (iequals(candidate, compact)) return entry.variant;
    }
    if (iequals(compact, "LBFGS1")) return Variant::Lbfgs;
    throw ConfigError("unknown algorithm '" + std::string(name) + "'");
}

std::span<const Variant> all_variants() { return kAllVariants; }

bool uses_global_gradient(Variant v) {
    switch (v) {
        case Variant::FedSVRG:
        case Variant::FedOsaaSvrg:
        case Variant::Giant:
        case Variant::NewtonGmres:
        case Variant::Lbfgs:
        case Variant::Dane:
            return true;
        default:
            return false;
    }
}

bool is_scaffold_family(Variant v) { return v == Variant::Scaffold || v == Variant::FedOsaaScaffold; }

bool is_fedosaa(Variant v) {
    return v == Variant::FedOsaaSvrg || v == Variant::FedOsaaScaffold || v == Variant::FedOsaaAvg;
}

void AlgoConfig::validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be a positive finite number");
    if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
    if (krylov_iters < 1) throw ConfigError("krylov_iters must be >= 1");
    if (!(krylov_tol >= 0.0)) throw ConfigError("krylov_tol must be >= 0");
    if (!(aa.damping > 0.0)) throw ConfigError("AA damping must be positive");
    if (!(aa.regularization >= 0.0)) throw ConfigError("AA regularization must be >= 0");
    if (!(aa.drop_tol >= 0.0)) throw ConfigError("AA drop_tol must be >= 0");
    if (!(aa.rcond >= 0.0)) throw ConfigError("AA rcond must be >= 0");
    if (!(eta_over_beta >= 0.0)) throw ConfigError("eta_over_beta must be >= 0");
}

AlgoConfig AlgoConfig::resolved(const LossModel& model) const {
    AlgoConfig out = *this;
    if (eta_over_beta > 0.0) {
        out.eta = eta_over_beta / model.smoothness_bound();
        out.eta_over_beta = 0.0;
    }
    return out;
}

CommCost comm_cost(Variant v, std::size_t dim) {
    const auto d = static_cast<std::uint64_t>(dim);
    switch (v) {
        case Variant::FedAvg:
        case Variant::FedOsaaAvg:
            return {1, d, d};
        case Variant::Scaffold:
        case Variant::FedOsaaScaffold:
            return {1, 2 * d, 2 * d};
        default:
            return {2, 2 * d, 2 * d};
    }
}

void CommLedger::add(const CommCost& cost) {
    rounds += cost.rounds;
    floats_down += cost.floats_down;
    floats_up += cost.floats_up;
}

RoundState initial_state(const LossModel& model, const Vector& w0, std::uint64_t seed) {
    if (static_cast<std::size_t>(w0.size()) != model.dim()) {
        throw DimensionMismatch("initial_state", model.dim(), static_cast<std::size_t>(w0.size()));
    }
    RoundState s;
    s.w = w0;
    s.server_cv = Vector::Zero(w0.size());
    s.client_cv.assign(model.num_clients(), Vector::Zero(w0.size()));
    s.rngs.reserve(model.num_clients());
    for (std::size_t k = 0; k < model.num_clients(); ++k) s.rngs.emplace_back(mix_seed(seed, k));
    s.carried.resize(model.num_clients());
    return s;
}

std::vector<std::size_t> sample_batch(Rng& rng, std::size_t client_size, std::size_t batch_size) {
    if (batch_size == 0 || batch_size >= client_size) return {};
    std::vector<std::size_t> pool(client_size);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < batch_size; ++i) {
        const std::size_t j = i + rng.uniform_index(client_size - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(batch_size);
    std::sort(pool.begin(), pool.end());
    return pool;
}

LocalTrajectory local_update_first_order(const LossModel& model, std::size_t k, const Vector& w_t,
                                         const GradientCorrection& correction, const AlgoConfig& cfg, Rng& rng,
                                         bool final_residual) {
    if (cfg.local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
    const auto steps = static_cast<std::size_t>(cfg.local_epochs);
    const std::size_t n_k = model.client_size(k);
    LocalTrajectory out;
    out.iterates.reserve(steps + 1);
    out.residuals.reserve(steps + 1);
    out.iterates.push_back(w_t);
    for (std::size_t l = 0; l < steps; ++l) {
        const auto batch = sample_batch(rng, n_k, cfg.batch_size);
        out.residuals.push_back(corrected_gradient(model, k, out.iterates.back(), correction, batch));
        Vector next = out.iterates.back() - cfg.eta * out.residuals.back();
        if (!next.allFinite()) {
            throw DivergenceError("client " + std::to_string(k) + ": non-finite local iterate at step " +
                                      std::to_string(l + 1),
                                  static_cast<int>(l + 1));
        }
        out.iterates.push_back(std::move(next));
    }
    if (final_residual) {
        const auto batch = sample_batch(rng, n_k, cfg.batch_size);
        out.residuals.push_back(corrected_gradient(model, k, out.iterates.back(), correction, batch));
    }
    return out;
}

LocalResult local_update_fedosaa(const LossModel& model, std::size_t k, const Vector& w_t, const Vector& anchor,
                                 const GradientCorrection& correction, const AlgoConfig& cfg, Rng& rng,
                                 const AAHistory& carried) {
    const LocalTrajectory traj = local_update_first_order(model, k, w_t, correction, cfg, rng, true);
    LocalResult out;
    out.history = build_history(traj.iterates, traj.residuals);

    AAHistory used = out.history;
    if (cfg.aa.carry_over > 0 && !carried.empty()) {
        used = concat_history(newest_columns(carried, static_cast<Eigen::Index>(cfg.aa.carry_over)), out.history);
    }
    try {
        AAStepResult step = aa_step(w_t, anchor, used, cfg.eta, cfg.aa);
        out.w = std::move(step.w);
        out.diagnostics = step.diagnostics;
    } catch (const DegenerateHistory&) {
        out.w = traj.iterates.back();
        out.fallback = true;
    }

    if (cfg.diagnostics) {
        const double anchor_norm = anchor.norm();
        if (anchor_norm > 0.0) {
            out.diagnostics.delta = corrected_gradient(model, k, out.w, correction).norm() / anchor_norm;
        }
    }
    return out;
}

Vector local_update_newton_krylov(const LossModel& model, std::size_t k, const Vector& w_t,
                                  const Vector& global_grad, const AlgoConfig& cfg, KrylovSolver solver) {
    const LinearOperator hvp = [&](const Vector& v) { return model.hessian_vec(k, w_t, v); };
    const KrylovResult r = solver == KrylovSolver::CG ? cg_solve(hvp, global_grad, cfg.krylov_iters, cfg.krylov_tol)
                                                      : gmres_solve(hvp, global_grad, cfg.krylov_iters, cfg.krylov_tol);
    return w_t - r.x;
}

AAHistory lbfgs_curvature_pairs(const AAHistory& history) {
    AAHistory out;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index l = 0; l < history.columns(); ++l) {
        const double sy = history.S.col(l).dot(history.Y.col(l));
        if (sy > 1e-12 * history.S.col(l).norm() * history.Y.col(l).norm()) keep.push_back(l);
    }
    out.S.resize(history.S.rows(), static_cast<Eigen::Index>(keep.size()));
    out.Y.resize(history.Y.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.S.col(static_cast<Eigen::Index>(i)) = history.S.col(keep[i]);
        out.Y.col(static_cast<Eigen::Index>(i)) = history.Y.col(keep[i]);
    }
    return out;
}

Vector lbfgs_two_loop(const AAHistory& pairs, const Vector& g) {
    const Eigen::Index m = pairs.columns();
    if (m == 0) throw DegenerateHistory("lbfgs_two_loop: no curvature pairs");
    Vector q = g;
    Vector alpha(m);
    Vector rho(m);
    for (Eigen::Index i = m - 1; i >= 0; --i) {
        rho[i] = 1.0 / pairs.Y.col(i).dot(pairs.S.col(i));
        alpha[i] = rho[i] * pairs.S.col(i).dot(q);
        q -= alpha[i] * pairs.Y.col(i);
    }
    const double gamma = pairs.S.col(m - 1).dot(pairs.Y.col(m - 1)) / pairs.Y.col(m - 1).squaredNorm();
    Vector r = gamma * q;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double b = rho[i] * pairs.Y.col(i).dot(r);
        r += (alpha[i] - b) * pairs.S.col(i);
    }
    return r;
}

LocalResult local_update_lbfgs(const LossModel& model, std::size_t k, const Vector& w_t, const Vector& global_grad,
                               const GradientCorrection& correction, const AlgoConfig& cfg, Rng& rng) {
    const LocalTrajectory traj = local_update_first_order(model, k, w_t, correction, cfg, rng, true);
    LocalResult out;
    out.history = build_history(traj.iterates, traj.residuals);
    const AAHistory pairs = lbfgs_curvature_pairs(out.history);
    if (pairs.empty()) {
        out.w = traj.iterates.back();
        out.fallback = true;
        return out;
    }
    out.w = w_t - lbfgs_two_loop(pairs, global_grad);
    out.diagnostics.rank = pairs.columns();
    return out;
}

NewtonResult damped_newton(const NewtonProblem& problem, Vector x0, double tol, int max_iter) {
    NewtonResult out;
    out.x = std::move(x0);
    double f = problem.value(out.x);
    for (int it = 0;; ++it) {
        const Vector g = problem.gradient(out.x);
        out.grad_norm = g.norm();
        out.iterations = it;
        if (!std::isfinite(out.grad_norm) || !std::isfinite(f)) throw NumericalError("damped_newton: non-finite value");
        if (out.grad_norm <= tol) return out;
        if (it == max_iter) {
            throw ConvergenceFailure("damped_newton: gradient norm " + std::to_string(out.grad_norm) + " above " +
                                     std::to_string(tol) + " after " + std::to_string(max_iter) + " iterations");
        }

        Matrix h = problem.hessian(out.x);
        Eigen::LLT<Matrix> llt(h);
        double shift = 0.0;
        while (llt.info() != Eigen::Success) {
            shift = shift == 0.0 ? 1e-10 * std::max(1.0, h.diagonal().cwiseAbs().maxCoeff()) : 10.0 * shift;
            llt.compute(h + shift * Matrix::Identity(h.rows(), h.cols()));
            if (!std::isfinite(shift)) throw NumericalError("damped_newton: Hessian cannot be regularized");
        }
        const Vector p = -llt.solve(g);
        const double slope = g.dot(p);
        // Slack of a few ulps of f keeps unit steps acceptable once decreases drop below rounding.
        const double slack = 16.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(f));
        double t = 1.0;
        Vector candidate = out.x + p;
        double f_new = problem.value(candidate);
        for (int trial = 1; trial < kArmijoTrials && !(f_new <= f + kArmijoC1 * t * slope + slack); ++trial) {
            t *= 0.5;
            candidate = out.x + t * p;
            f_new = problem.value(candidate);
        }
        out.x = std::move(candidate);
        f = f_new;
    }
}

Vector local_update_dane(const LossModel& model, std::size_t k, const Vector& w_t, const Vector& global_grad) {
    const Vector offset = global_grad - model.gradient(k, w_t);
    NewtonProblem problem{
        [&](const Vector& w) { return model.value(k, w) + offset.dot(w); },
        [&](const Vector& w) -> Vector { return model.gradient(k, w) + offset; },
        [&](const Vector& w) { return model.hessian(k, w); },
    };
    const double tol = 1e-12 * std::max(1.0, global_grad.norm());
    return damped_newton(problem, w_t, tol, 200).x;
}

Vector aggregate(std::span<const Vector> updates, std::span<const double> weights) {
    if (updates.empty()) throw ConfigError("aggregate: no local updates");
    if (updates.size() != weights.size()) throw DimensionMismatch("aggregate weights", updates.size(), weights.size());
    const Eigen::Index d = updates.front().size();
    Vector out = Vector::Zero(d);
    for (std::size_t k = 0; k < updates.size(); ++k) {
        if (updates[k].size() != d) {
            throw DimensionMismatch("aggregate update " + std::to_string(k), static_cast<std::size_t>(d),
                                    static_cast<std::size_t>(updates[k].size()));
        }
        out += weights[k] * updates[k];
    }
    return out;
}

Vector aggregate(std::span<const Vector> updates, const LossModel& model) {
    std::vector<double> weights(model.num_clients());
    for (std::size_t k = 0; k < weights.size(); ++k) weights[k] = model.client_weight(k);
    return aggregate(updates, weights);
}

double armijo_step(const LossModel& model, const Vector& w, const Vector& direction, const Vector& grad) {
    const double f0 = model.global_value(w);
    const double slope = grad.dot(direction);
    double t = 1.0;
    for (int trial = 0; trial < kArmijoTrials; ++trial) {
        const double f = model.global_value(w + t * direction);
        if (std::isfinite(f) && f <= f0 + kArmijoC1 * t * slope) return t;
        if (trial + 1 < kArmijoTrials) t *= 0.5;
    }
    return t;
}

RoundReport run_round(RoundState& state, const AlgoConfig& config, const LossModel& model) {
    const AlgoConfig cfg = config.resolved(model);
    cfg.validate();
    const std::size_t K = model.num_clients();
    const std::size_t d = model.dim();
    if (static_cast<std::size_t>(state.w.size()) != d) {
        throw DimensionMismatch("run_round weights", d, static_cast<std::size_t>(state.w.size()));
    }
    if (state.rngs.size() != K || state.client_cv.size() != K) {
        throw ConfigError("run_round: state was initialized for a different number of clients");
    }
    if (state.carried.size() != K) state.carried.resize(K);

    const Variant v = cfg.variant;
    const Vector& w = state.w;
    Vector g_global;
    if (uses_global_gradient(v) || cfg.line_search) g_global = model.global_gradient(w);

    std::vector<Vector> updates(K);
    RoundReport report;
    report.theta.assign(K, nan());
    report.delta.assign(K, nan());
    report.rank.assign(K, 0);
    report.s_condition.assign(K, nan());
    std::vector<char> fell_back(K, 0);
    std::vector<AAHistory> histories(K);

    for_each_client(K, cfg.threads, [&](std::size_t k) {
        Rng& rng = state.rngs[k];
        auto take = [&](LocalResult&& r) {
            updates[k] = std::move(r.w);
            report.theta[k] = r.diagnostics.theta;
            report.delta[k] = r.diagnostics.delta;
            report.rank[k] = r.diagnostics.rank;
            report.s_condition[k] = r.diagnostics.s_condition;
            fell_back[k] = r.fallback ? 1 : 0;
            histories[k] = std::move(r.history);
        };
        switch (v) {
            case Variant::FedAvg:
                updates[k] = local_update_first_order(model, k, w, OffsetCorrection{Vector::Zero(d)}, cfg, rng)
                                 .iterates.back();
                break;
            case Variant::FedSVRG:
                updates[k] =
                    local_update_first_order(model, k, w, svrg_correction(model, k, w, g_global, cfg), cfg, rng)
                        .iterates.back();
                break;
            case Variant::Scaffold:
                updates[k] = local_update_first_order(model, k, w,
                                                      OffsetCorrection{state.server_cv - state.client_cv[k]}, cfg, rng)
                                 .iterates.back();
                break;
            case Variant::FedOsaaSvrg:
                take(local_update_fedosaa(model, k, w, g_global, svrg_correction(model, k, w, g_global, cfg), cfg,
                                          rng, state.carried[k]));
                break;
            case Variant::FedOsaaScaffold: {
                OffsetCorrection correction{state.server_cv - state.client_cv[k]};
                const Vector anchor = cfg.scaffold_anchor == ScaffoldAnchor::LocalResidual
                                          ? Vector(model.gradient(k, w) + correction.offset)
                                          : state.server_cv;
                take(local_update_fedosaa(model, k, w, anchor, correction, cfg, rng, state.carried[k]));
                break;
            }
            case Variant::FedOsaaAvg:
                take(local_update_fedosaa(model, k, w, model.gradient(k, w), OffsetCorrection{Vector::Zero(d)}, cfg,
                                          rng, state.carried[k]));
                break;
            case Variant::Giant:
                updates[k] = local_update_newton_krylov(model, k, w, g_global, cfg, KrylovSolver::CG);
                break;
            case Variant::NewtonGmres:
                updates[k] = local_update_newton_krylov(model, k, w, g_global, cfg, KrylovSolver::GMRES);
                break;
            case Variant::Lbfgs: {
                LocalResult r =
                    local_update_lbfgs(model, k, w, g_global, svrg_correction(model, k, w, g_global, cfg), cfg, rng);
                updates[k] = std::move(r.w);
                report.rank[k] = r.diagnostics.rank;
                fell_back[k] = r.fallback ? 1 : 0;
                break;
            }
            case Variant::Dane:
                updates[k] = local_update_dane(model, k, w, g_global);
                break;
        }
    });

    if (is_scaffold_family(v)) {
        // c_k <- grad f_k(w^t); c <- sum_k (N_k/N) c_k
        for_each_client(K, cfg.threads, [&](std::size_t k) {
            if (cfg.minibatch_control_variate && !full_batch(model, k, cfg)) {
                const auto batch = sample_batch(state.rngs[k], model.client_size(k), cfg.batch_size);
                state.client_cv[k] = model.minibatch_gradient(k, w, batch);
            } else {
                state.client_cv[k] = model.gradient(k, w);
            }
        });
        state.server_cv = aggregate(state.client_cv, model);
    }
    if (is_fedosaa(v) && cfg.aa.carry_over > 0) {
        for (std::size_t k = 0; k < K; ++k) {
            state.carried[k] = newest_columns(histories[k], static_cast<Eigen::Index>(cfg.aa.carry_over));
        }
    }

    Vector next = aggregate(updates, model);
    state.comm.add(comm_cost(v, d));
    if (cfg.line_search) {
        const Vector direction = next - w;
        report.step_length = armijo_step(model, w, direction, g_global);
        next = w + report.step_length * direction;
        state.comm.rounds += 1;
    }
    report.fallbacks = static_cast<std::size_t>(std::count(fell_back.begin(), fell_back.end(), 1));

    if (!next.allFinite() || next.norm() > kDivergenceNorm) {
        throw DivergenceError(std::string(to_string(v)) + " diverged in round " + std::to_string(state.t + 1),
                              static_cast<int>(state.t + 1));
    }
    state.w = std::move(next);
    state.t += 1;
    return report;
}

double contraction_rho(std::span<const double> deltas, double mu, double beta) {
    if (deltas.empty()) throw ConfigError("contraction_rho: no client deltas");
    if (!(mu > 0.0) || !(beta >= mu)) throw ConfigError("contraction_rho: need 0 < mu <= beta");
    double rho = std::numeric_limits<double>::infinity();
    for (double delta : deltas) {
        const double term = (1.0 - delta) * (1.0 - delta) / beta - (1.0 + delta) * delta / mu -
                            beta * (1.0 + delta) * (1.0 + delta) / (2.0 * mu * mu);
        rho = std::min(rho, term);
    }
    return rho;
}

}  // namespace fedosaa
