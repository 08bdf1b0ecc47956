#include "fedosaa/objective.hpp"

#include "fedosaa/random.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fedosaa {

double log1p_exp(double z) {
    if (z > 0.0) return z + std::log1p(std::exp(-z));
    return std::log1p(std::exp(z));
}

namespace {

// 1 / (1 + exp(m))
double logistic_tail(double m) {
    if (m > 0.0) {
        const double e = std::exp(-m);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(m));
}

// exp(m) / (1 + exp(m))^2, symmetric in m
double logistic_curvature(double m) {
    const double e = std::exp(-std::abs(m));
    return e / ((1.0 + e) * (1.0 + e));
}

Matrix random_orthogonal(std::size_t n, Rng& rng) {
    Matrix g(n, n);
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
        for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = rng.normal();
    }
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        if (r(j, j) < 0.0) q.col(j) *= -1.0;
    }
    return q;
}

// Orthonormal factor of `m` with the sign convention diag(R) > 0, so an
// already orthogonal input comes back unchanged.
Matrix orthonormalize(const Matrix& m) {
    Eigen::HouseholderQR<Matrix> qr(m);
    Matrix q = qr.householderQ();
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        if (r(j, j) < 0.0) q.col(j) *= -1.0;
    }
    return q;
}

}  // namespace

// ---------------------------------------------------------------------------
// LossModel

Matrix LossModel::hessian(std::size_t k, const Vector& w) const {
    const auto d = static_cast<Eigen::Index>(dim());
    Matrix h(d, d);
    Vector unit = Vector::Zero(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        unit[j] = 1.0;
        h.col(j) = hessian_vec(k, w, unit);
        unit[j] = 0.0;
    }
    return 0.5 * (h + h.transpose());
}

std::size_t LossModel::total_size() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < num_clients(); ++k) n += client_size(k);
    return n;
}

double LossModel::client_weight(std::size_t k) const {
    return static_cast<double>(client_size(k)) / static_cast<double>(total_size());
}

double LossModel::global_value(const Vector& w) const {
    double v = 0.0;
    for (std::size_t k = 0; k < num_clients(); ++k) v += client_weight(k) * value(k, w);
    return v;
}

Vector LossModel::global_gradient(const Vector& w) const {
    Vector g = Vector::Zero(static_cast<Eigen::Index>(dim()));
    for (std::size_t k = 0; k < num_clients(); ++k) g += client_weight(k) * gradient(k, w);
    return g;
}

Vector LossModel::global_hessian_vec(const Vector& w, const Vector& v) const {
    Vector hv = Vector::Zero(static_cast<Eigen::Index>(dim()));
    for (std::size_t k = 0; k < num_clients(); ++k) hv += client_weight(k) * hessian_vec(k, w, v);
    return hv;
}

Matrix LossModel::global_hessian(const Vector& w) const {
    const auto d = static_cast<Eigen::Index>(dim());
    Matrix h = Matrix::Zero(d, d);
    for (std::size_t k = 0; k < num_clients(); ++k) h += client_weight(k) * hessian(k, w);
    return h;
}

void LossModel::check_client(std::size_t k) const {
    if (k >= num_clients()) {
        throw ConfigError("client index " + std::to_string(k) + " out of range (" +
                          std::to_string(num_clients()) + " clients)");
    }
}

void LossModel::check_dim(const char* where, const Vector& v) const {
    if (static_cast<std::size_t>(v.size()) != dim()) {
        throw DimensionMismatch(where, dim(), static_cast<std::size_t>(v.size()));
    }
}

// ---------------------------------------------------------------------------
// LogisticModel

LogisticModel::LogisticModel(std::shared_ptr<const Dataset> data, const Partition& partition, double gamma)
    : data_(std::move(data)), dim_(data_ ? data_->dim() : 0), gamma_(gamma) {
    if (!data_) throw ConfigError("logistic model needs a dataset");
    if (!(gamma_ > 0.0)) throw ConfigError("logistic regularization gamma must be positive");
    if (partition.num_clients() == 0) throw ConfigError("logistic model needs at least one client");

    const auto d = static_cast<Eigen::Index>(dim_);
    for (std::size_t k = 0; k < partition.num_clients(); ++k) {
        const auto& rows = partition.client(k);
        if (rows.empty()) throw ConfigError("client " + std::to_string(k) + " holds no data");
        std::vector<Eigen::Triplet<double>> triplets;
        Vector y(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r] >= data_->size()) throw ConfigError("partition index out of range");
            const Example& ex = (*data_)[rows[r]];
            y[static_cast<Eigen::Index>(r)] = static_cast<double>(ex.label);
            double sq = 0.0;
            for (const Feature& f : ex.features) {
                triplets.emplace_back(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f.index - 1), f.value);
                sq += f.value * f.value;
            }
            max_sq_norm_ = std::max(max_sq_norm_, sq);
        }
        SparseRows x(static_cast<Eigen::Index>(rows.size()), d);
        x.setFromTriplets(triplets.begin(), triplets.end());
        x.makeCompressed();
        features_.push_back(std::move(x));
        labels_.push_back(std::move(y));
    }
}

std::size_t LogisticModel::client_size(std::size_t k) const {
    check_client(k);
    return static_cast<std::size_t>(labels_[k].size());
}

double LogisticModel::value(std::size_t k, const Vector& w) const {
    check_client(k);
    check_dim("LogisticModel::value", w);
    const Vector margins = labels_[k].cwiseProduct(features_[k] * w);
    double loss = 0.0;
    for (Eigen::Index j = 0; j < margins.size(); ++j) loss += log1p_exp(-margins[j]);
    return loss / static_cast<double>(margins.size()) + 0.5 * gamma_ * w.squaredNorm();
}

Vector LogisticModel::gradient(std::size_t k, const Vector& w) const {
    check_client(k);
    check_dim("LogisticModel::gradient", w);
    const Vector& y = labels_[k];
    const Vector margins = y.cwiseProduct(features_[k] * w);
    Vector s(margins.size());
    for (Eigen::Index j = 0; j < margins.size(); ++j) s[j] = -y[j] * logistic_tail(margins[j]);
    Vector g = features_[k].transpose() * s;
    g /= static_cast<double>(margins.size());
    g += gamma_ * w;
    return g;
}

Vector LogisticModel::minibatch_gradient(std::size_t k, const Vector& w, std::span<const std::size_t> batch) const {
    check_client(k);
    check_dim("LogisticModel::minibatch_gradient", w);
    if (batch.empty()) throw ConfigError("mini-batch must not be empty");
    const SparseRows& x = features_[k];
    const Vector& y = labels_[k];
    Vector g = Vector::Zero(w.size());
    for (std::size_t pos : batch) {
        if (pos >= static_cast<std::size_t>(x.rows())) throw ConfigError("mini-batch position out of range");
        const auto row = static_cast<Eigen::Index>(pos);
        double dot = 0.0;
        for (SparseRows::InnerIterator it(x, row); it; ++it) dot += it.value() * w[it.col()];
        const double coeff = -y[row] * logistic_tail(y[row] * dot);
        for (SparseRows::InnerIterator it(x, row); it; ++it) g[it.col()] += coeff * it.value();
    }
    g /= static_cast<double>(batch.size());
    g += gamma_ * w;
    return g;
}

Vector LogisticModel::hessian_vec(std::size_t k, const Vector& w, const Vector& v) const {
    check_client(k);
    check_dim("LogisticModel::hessian_vec", w);
    check_dim("LogisticModel::hessian_vec", v);
    const Vector& y = labels_[k];
    const Vector margins = y.cwiseProduct(features_[k] * w);
    Vector xv = features_[k] * v;
    for (Eigen::Index j = 0; j < xv.size(); ++j) xv[j] *= logistic_curvature(margins[j]);
    Vector hv = features_[k].transpose() * xv;
    hv /= static_cast<double>(margins.size());
    hv += gamma_ * v;
    return hv;
}

Matrix LogisticModel::hessian(std::size_t k, const Vector& w) const {
    check_client(k);
    check_dim("LogisticModel::hessian", w);
    const Vector& y = labels_[k];
    const Vector margins = y.cwiseProduct(features_[k] * w);
    Vector curvature(margins.size());
    for (Eigen::Index j = 0; j < margins.size(); ++j) curvature[j] = logistic_curvature(margins[j]);
    const SparseRows weighted = curvature.asDiagonal() * features_[k];
    Matrix h = Matrix(features_[k].transpose() * weighted);
    h /= static_cast<double>(margins.size());
    h.diagonal().array() += gamma_;
    return 0.5 * (h + h.transpose());
}

double LogisticModel::smoothness_bound() const { return gamma_ + 0.25 * max_sq_norm_; }

// ---------------------------------------------------------------------------
// QuadraticModel

QuadraticModel::QuadraticModel(std::vector<Matrix> hessians, std::vector<Vector> linear_terms,
                               std::vector<std::size_t> client_sizes)
    : hessians_(std::move(hessians)), linear_terms_(std::move(linear_terms)), sizes_(std::move(client_sizes)) {
    if (hessians_.empty()) throw ConfigError("quadratic model needs at least one client");
    if (hessians_.size() != linear_terms_.size()) throw ConfigError("quadratic model: A_k and b_k counts differ");
    if (sizes_.empty()) sizes_.assign(hessians_.size(), 1);
    if (sizes_.size() != hessians_.size()) throw ConfigError("quadratic model: client size count differs");

    dim_ = static_cast<std::size_t>(hessians_.front().rows());
    mu_ = std::numeric_limits<double>::infinity();
    beta_ = 0.0;
    for (std::size_t k = 0; k < hessians_.size(); ++k) {
        const Matrix& a = hessians_[k];
        if (static_cast<std::size_t>(a.rows()) != dim_ || static_cast<std::size_t>(a.cols()) != dim_) {
            throw DimensionMismatch("QuadraticModel A_k", dim_, static_cast<std::size_t>(a.rows()));
        }
        if (static_cast<std::size_t>(linear_terms_[k].size()) != dim_) {
            throw DimensionMismatch("QuadraticModel b_k", dim_, static_cast<std::size_t>(linear_terms_[k].size()));
        }
        if (sizes_[k] == 0) throw ConfigError("quadratic model: client sizes must be positive");
        if ((a - a.transpose()).norm() > 1e-12 * std::max(1.0, a.norm())) {
            throw ConfigError("quadratic model: A_" + std::to_string(k) + " is not symmetric");
        }
        Eigen::SelfAdjointEigenSolver<Matrix> eig(a, Eigen::EigenvaluesOnly);
        const double lo = eig.eigenvalues().minCoeff();
        const double hi = eig.eigenvalues().maxCoeff();
        if (!(lo > 0.0)) throw ConfigError("quadratic model: A_" + std::to_string(k) + " is not positive definite");
        client_mu_.push_back(lo);
        client_beta_.push_back(hi);
        mu_ = std::min(mu_, lo);
        beta_ = std::max(beta_, hi);
    }
}

std::size_t QuadraticModel::client_size(std::size_t k) const {
    check_client(k);
    return sizes_[k];
}

double QuadraticModel::value(std::size_t k, const Vector& w) const {
    check_client(k);
    check_dim("QuadraticModel::value", w);
    return 0.5 * w.dot(hessians_[k] * w) - linear_terms_[k].dot(w);
}

Vector QuadraticModel::gradient(std::size_t k, const Vector& w) const {
    check_client(k);
    check_dim("QuadraticModel::gradient", w);
    return hessians_[k] * w - linear_terms_[k];
}

Vector QuadraticModel::minibatch_gradient(std::size_t k, const Vector& w, std::span<const std::size_t> batch) const {
    if (batch.empty()) throw ConfigError("mini-batch must not be empty");
    return gradient(k, w);
}

Vector QuadraticModel::hessian_vec(std::size_t k, const Vector& w, const Vector& v) const {
    check_client(k);
    check_dim("QuadraticModel::hessian_vec", w);
    check_dim("QuadraticModel::hessian_vec", v);
    return hessians_[k] * v;
}

Matrix QuadraticModel::hessian(std::size_t k, const Vector& w) const {
    check_client(k);
    check_dim("QuadraticModel::hessian", w);
    return hessians_[k];
}

Vector QuadraticModel::minimizer() const {
    const auto d = static_cast<Eigen::Index>(dim_);
    Matrix a = Matrix::Zero(d, d);
    Vector b = Vector::Zero(d);
    for (std::size_t k = 0; k < hessians_.size(); ++k) {
        a += client_weight(k) * hessians_[k];
        b += client_weight(k) * linear_terms_[k];
    }
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) throw NumericalError("global quadratic Hessian is not positive definite");
    return llt.solve(b);
}

// ---------------------------------------------------------------------------
// Corrections

Vector corrected_gradient(const LossModel& model, std::size_t k, const Vector& w,
                          const GradientCorrection& correction, std::span<const std::size_t> batch) {
    const bool full = batch.empty();
    return std::visit(
        [&](const auto& c) -> Vector {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, SvrgCorrection>) {
                if (full) return model.gradient(k, w) - model.gradient(k, c.anchor) + c.global_gradient;
                return model.minibatch_gradient(k, w, batch) - model.minibatch_gradient(k, c.anchor, batch) +
                       c.global_gradient;
            } else {
                if (static_cast<std::size_t>(c.offset.size()) != model.dim()) {
                    throw DimensionMismatch("corrected_gradient offset", model.dim(),
                                            static_cast<std::size_t>(c.offset.size()));
                }
                if (full) return model.gradient(k, w) + c.offset;
                return model.minibatch_gradient(k, w, batch) + c.offset;
            }
        },
        correction);
}

Vector correction_offset(const LossModel& model, std::size_t k, const GradientCorrection& correction) {
    return std::visit(
        [&](const auto& c) -> Vector {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, SvrgCorrection>) {
                return c.global_gradient - model.gradient(k, c.anchor);
            } else {
                return c.offset;
            }
        },
        correction);
}

double corrected_value(const LossModel& model, std::size_t k, const Vector& w, const GradientCorrection& correction) {
    return model.value(k, w) + correction_offset(model, k, correction).dot(w);
}

// ---------------------------------------------------------------------------
// Synthetic problems

QuadraticFixture generate_quadratic(std::size_t dim, std::size_t num_clients, double kappa, double heterogeneity,
                                    std::uint64_t seed) {
    if (dim == 0) throw ConfigError("quadratic fixture needs dim >= 1");
    if (num_clients == 0) throw ConfigError("quadratic fixture needs at least one client");
    if (!(kappa >= 1.0)) throw ConfigError("condition number must be >= 1");
    if (!(heterogeneity >= 0.0)) throw ConfigError("heterogeneity must be non-negative");

    Rng rng(seed);
    const auto d = static_cast<Eigen::Index>(dim);
    const Matrix basis = random_orthogonal(dim, rng);

    Vector spectrum(d);
    const double log_kappa = std::log(kappa);
    for (Eigen::Index i = 0; i < d; ++i) spectrum[i] = std::exp(log_kappa * rng.uniform());
    std::sort(spectrum.data(), spectrum.data() + d);
    spectrum[0] = 1.0;
    if (d > 1) spectrum[d - 1] = kappa;

    std::vector<Matrix> hessians;
    std::vector<Vector> linear_terms;
    const double scale = heterogeneity / std::sqrt(static_cast<double>(dim));
    for (std::size_t k = 0; k < num_clients; ++k) {
        Matrix perturbed = basis;
        for (Eigen::Index j = 0; j < d; ++j) {
            for (Eigen::Index i = 0; i < d; ++i) perturbed(i, j) += scale * rng.normal();
        }
        const Matrix q = orthonormalize(perturbed);
        Vector lambda(d);
        for (Eigen::Index i = 0; i < d; ++i) {
            lambda[i] = std::clamp(spectrum[i] * std::exp(heterogeneity * rng.normal()), 1.0, kappa);
        }
        Matrix a = q * lambda.asDiagonal() * q.transpose();
        a = 0.5 * (a + a.transpose());
        hessians.push_back(std::move(a));

        Vector b(d);
        for (Eigen::Index i = 0; i < d; ++i) b[i] = rng.normal();
        linear_terms.push_back(std::move(b));
    }

    auto model = std::make_shared<QuadraticModel>(std::move(hessians), std::move(linear_terms));
    Vector w_star = model->minimizer();
    return {std::move(model), std::move(w_star)};
}

Dataset generate_logistic_dataset(std::size_t num_examples, std::size_t dim, std::uint64_t seed) {
    if (num_examples == 0 || dim == 0) throw ConfigError("synthetic logistic data needs N >= 1 and d >= 1");
    Rng rng(seed);
    std::vector<double> truth(dim);
    for (double& t : truth) t = rng.normal();

    std::vector<double> scales(dim, 1.0);
    for (std::size_t j = 1; j < dim; ++j) {
        scales[j] = std::pow(10.0, -static_cast<double>(j) / static_cast<double>(dim - 1));
    }

    std::vector<Example> examples;
    examples.reserve(num_examples);
    for (std::size_t i = 0; i < num_examples; ++i) {
        Example ex;
        ex.features.reserve(dim);
        double margin = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double x = scales[j] * rng.normal();
            margin += truth[j] * x;
            if (x != 0.0) ex.features.push_back({j + 1, x});
        }
        const double p_positive = 1.0 / (1.0 + std::exp(-margin));
        ex.label = rng.uniform() < p_positive ? 1 : -1;
        examples.push_back(std::move(ex));
    }
    return Dataset(std::move(examples), dim);
}

}  // namespace fedosaa
