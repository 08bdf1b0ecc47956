#pragma once

#include "fedosaa/dataset.hpp"
#include "fedosaa/errors.hpp"

#include <Eigen/SparseCore>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace fedosaa {

/// Client-decomposed objective f(w) = sum_k (N_k/N) f_k(w).
///
/// Mini-batches are given as positions in [0, client_size(k)) within the
/// client's own data. All evaluations are const and safe to call concurrently.
class LossModel {
public:
    virtual ~LossModel() = default;

    virtual std::size_t dim() const = 0;
    virtual std::size_t num_clients() const = 0;
    virtual std::size_t client_size(std::size_t k) const = 0;

    virtual double value(std::size_t k, const Vector& w) const = 0;
    virtual Vector gradient(std::size_t k, const Vector& w) const = 0;
    virtual Vector minibatch_gradient(std::size_t k, const Vector& w,
                                      std::span<const std::size_t> batch) const = 0;
    virtual Vector hessian_vec(std::size_t k, const Vector& w, const Vector& v) const = 0;

    /// Dense local Hessian. The default assembles it column by column from hessian_vec.
    virtual Matrix hessian(std::size_t k, const Vector& w) const;

    /// Upper bound on the smoothness constant of every f_k.
    virtual double smoothness_bound() const = 0;
    /// Lower bound on the strong-convexity constant of every f_k.
    virtual double strong_convexity_bound() const = 0;

    std::size_t total_size() const;
    double client_weight(std::size_t k) const;

    double global_value(const Vector& w) const;
    Vector global_gradient(const Vector& w) const;
    Vector global_hessian_vec(const Vector& w, const Vector& v) const;
    Matrix global_hessian(const Vector& w) const;

protected:
    void check_client(std::size_t k) const;
    void check_dim(const char* where, const Vector& v) const;
};

/// l2-regularized logistic loss over a partitioned sparse dataset.
class LogisticModel final : public LossModel {
public:
    LogisticModel(std::shared_ptr<const Dataset> data, const Partition& partition, double gamma);

    std::size_t dim() const override { return dim_; }
    std::size_t num_clients() const override { return features_.size(); }
    std::size_t client_size(std::size_t k) const override;

    double value(std::size_t k, const Vector& w) const override;
    Vector gradient(std::size_t k, const Vector& w) const override;
    Vector minibatch_gradient(std::size_t k, const Vector& w,
                              std::span<const std::size_t> batch) const override;
    Vector hessian_vec(std::size_t k, const Vector& w, const Vector& v) const override;
    Matrix hessian(std::size_t k, const Vector& w) const override;

    /// gamma + max_j ||x_j||^2 / 4
    double smoothness_bound() const override;
    double strong_convexity_bound() const override { return gamma_; }

    double gamma() const noexcept { return gamma_; }

private:
    using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

    std::shared_ptr<const Dataset> data_;
    std::vector<SparseRows> features_;
    std::vector<Vector> labels_;
    std::size_t dim_;
    double gamma_;
    double max_sq_norm_ = 0.0;
};

/// f_k(w) = 1/2 w'A_k w - b_k'w with SPD A_k; client weights from `client_sizes`.
class QuadraticModel final : public LossModel {
public:
    QuadraticModel(std::vector<Matrix> hessians, std::vector<Vector> linear_terms,
                   std::vector<std::size_t> client_sizes = {});

    std::size_t dim() const override { return dim_; }
    std::size_t num_clients() const override { return hessians_.size(); }
    std::size_t client_size(std::size_t k) const override;

    double value(std::size_t k, const Vector& w) const override;
    Vector gradient(std::size_t k, const Vector& w) const override;
    /// Quadratic clients carry no samples: every batch yields the exact gradient.
    Vector minibatch_gradient(std::size_t k, const Vector& w,
                              std::span<const std::size_t> batch) const override;
    Vector hessian_vec(std::size_t k, const Vector& w, const Vector& v) const override;
    Matrix hessian(std::size_t k, const Vector& w) const override;

    double smoothness_bound() const override { return beta_; }
    double strong_convexity_bound() const override { return mu_; }

    const Matrix& client_hessian(std::size_t k) const { return hessians_[k]; }
    const Vector& client_linear_term(std::size_t k) const { return linear_terms_[k]; }

    /// Smallest / largest eigenvalue of A_k.
    double client_mu(std::size_t k) const { return client_mu_[k]; }
    double client_beta(std::size_t k) const { return client_beta_[k]; }

    /// Global minimizer by a direct Cholesky solve of the averaged system.
    Vector minimizer() const;

private:
    std::vector<Matrix> hessians_;
    std::vector<Vector> linear_terms_;
    std::vector<std::size_t> sizes_;
    std::vector<double> client_mu_;
    std::vector<double> client_beta_;
    std::size_t dim_ = 0;
    double mu_ = 0.0;
    double beta_ = 0.0;
};

/// FedSVRG-style correction anchored at w^t: grad f(w^t) - grad f_k(w^t; batch).
struct SvrgCorrection {
    Vector anchor;
    Vector global_gradient;
};

/// Constant offset c - c_k (SCAFFOLD); a zero offset gives plain FedAvg steps.
struct OffsetCorrection {
    Vector offset;
};

using GradientCorrection = std::variant<SvrgCorrection, OffsetCorrection>;

/// Residual r_{k,l} of the corrected local objective. An empty `batch` means full batch.
/// The SVRG form uses the same batch for both local terms.
Vector corrected_gradient(const LossModel& model, std::size_t k, const Vector& w,
                          const GradientCorrection& correction,
                          std::span<const std::size_t> batch = {});

/// Full-batch corrected objective f_k(w) + <offset, w>, offset = grad f(anchor) - grad f_k(anchor)
/// for the SVRG form and c - c_k for the offset form.
double corrected_value(const LossModel& model, std::size_t k, const Vector& w,
                       const GradientCorrection& correction);

/// Constant linear term of the corrected objective (full batch).
Vector correction_offset(const LossModel& model, std::size_t k, const GradientCorrection& correction);

struct QuadraticFixture {
    std::shared_ptr<QuadraticModel> model;
    Vector minimizer;
};

/// Heterogeneous SPD quadratics with spectra in [1, kappa].
///
/// All clients share a base eigenbasis and a log-uniform base spectrum (its
/// endpoints pinned to 1 and kappa). `heterogeneity` scales both the per-client
/// rotation of the eigenbasis and the log-normal jitter of the eigenvalues.
/// Linear terms are independent standard normal vectors.
QuadraticFixture generate_quadratic(std::size_t dim, std::size_t num_clients, double kappa,
                                    double heterogeneity, std::uint64_t seed);

/// Synthetic binary classification data: dense Gaussian features with
/// per-coordinate scales decaying log-linearly from 1 to 0.1, labels drawn
/// from a logistic model around a standard normal ground truth.
Dataset generate_logistic_dataset(std::size_t num_examples, std::size_t dim, std::uint64_t seed);

/// log(1 + exp(z)) without overflow.
double log1p_exp(double z);

}  // namespace fedosaa
