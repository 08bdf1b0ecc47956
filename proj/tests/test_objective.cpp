#include "fedosaa/objective.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace fedosaa;

namespace {

struct LogisticFixture {
    std::shared_ptr<const Dataset> data;
    Partition partition;
    std::shared_ptr<LogisticModel> model;
};

LogisticFixture logistic(std::size_t n, std::size_t d, std::size_t clients, double gamma, std::uint64_t seed) {
    LogisticFixture f;
    f.data = std::make_shared<Dataset>(generate_logistic_dataset(n, d, seed));
    f.partition = partition_iid(*f.data, clients, seed + 1);
    f.model = std::make_shared<LogisticModel>(f.data, f.partition, gamma);
    return f;
}

QuadraticModel identity_quadratic(const Vector& b) {
    const auto d = b.size();
    return QuadraticModel({Matrix::Identity(d, d)}, {b});
}

}  // namespace

TEST_SUITE("objective") {

TEST_CASE("logistic value at zero is log 2") {
    const auto f = logistic(50, 6, 3, 0.1, 7);
    const Vector zero = Vector::Zero(6);
    for (std::size_t k = 0; k < 3; ++k) CHECK(f.model->value(k, zero) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(f.model->global_value(zero) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("logistic gradient at zero with tiny gamma") {
    const auto f = logistic(40, 5, 2, 1e-300, 3);
    for (std::size_t k = 0; k < 2; ++k) {
        Vector expected = Vector::Zero(5);
        for (std::size_t idx : f.partition.client(k)) {
            const Example& ex = (*f.data)[idx];
            for (const Feature& feat : ex.features) expected[feat.index - 1] -= 0.5 * ex.label * feat.value;
        }
        expected /= static_cast<double>(f.partition.client(k).size());
        CHECK(oracle::rel(f.model->gradient(k, Vector::Zero(5)), expected) < 1e-14);
    }
}

TEST_CASE("logistic gradient and Hessian-vector product against finite differences") {
    const auto f = logistic(200, 20, 4, 1e-3, 11);
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const Vector w = oracle::random_vector(20, rng);
        const Vector v = oracle::random_vector(20, rng);
        for (std::size_t k = 0; k < 4; ++k) {
            const Vector g = f.model->gradient(k, w);
            const Vector fd = oracle::fd_gradient([&](const Vector& x) { return f.model->value(k, x); }, w);
            CHECK(oracle::rel(g, fd) < 1e-6);
            const Vector hv = f.model->hessian_vec(k, w, v);
            const Vector fdh = oracle::fd_hvp([&](const Vector& x) { return f.model->gradient(k, x); }, w, v);
            CHECK(oracle::rel(hv, fdh) < 1e-5);
            CHECK(oracle::rel(Vector(f.model->hessian(k, w) * v), hv) < 1e-12);
        }
    }
}

TEST_CASE("logistic Hessian at zero") {
    const auto f = logistic(30, 4, 1, 0.5, 2);
    Rng rng(1);
    const Vector v = oracle::random_vector(4, rng);
    Vector expected = 0.5 * v;
    for (std::size_t idx : f.partition.client(0)) {
        const Example& ex = (*f.data)[idx];
        Vector x = Vector::Zero(4);
        for (const Feature& feat : ex.features) x[feat.index - 1] = feat.value;
        expected += 0.25 * x.dot(v) * x / static_cast<double>(f.partition.client(0).size());
    }
    CHECK(oracle::rel(f.model->hessian_vec(0, Vector::Zero(4), v), expected) < 1e-13);
}

TEST_CASE("logistic value is stable for large margins") {
    CHECK(log1p_exp(800.0) == doctest::Approx(800.0));
    CHECK(log1p_exp(-800.0) == 0.0);
    CHECK(std::isfinite(log1p_exp(1e308)));
    const auto f = logistic(20, 3, 1, 1e-3, 4);
    const Vector big = Vector::Constant(3, 1e4);
    CHECK(std::isfinite(f.model->value(0, big)));
    CHECK(f.model->gradient(0, big).allFinite());
    CHECK(f.model->hessian_vec(0, big, Vector::Ones(3)).allFinite());
}

TEST_CASE("mini-batch gradients") {
    const auto f = logistic(60, 5, 12, 0.01, 9);
    Rng rng(2);
    const Vector w = oracle::random_vector(5, rng);
    const std::size_t n_k = f.model->client_size(0);
    REQUIRE(n_k == 5);

    SUBCASE("the full batch equals the gradient") {
        std::vector<std::size_t> all(n_k);
        std::iota(all.begin(), all.end(), std::size_t{0});
        CHECK(oracle::rel(f.model->minibatch_gradient(0, w, all), f.model->gradient(0, w)) < 1e-15);
    }
    SUBCASE("a singleton is one example's gradient plus the full regularizer") {
        const Example& ex = (*f.data)[f.partition.client(0)[2]];
        Vector x = Vector::Zero(5);
        for (const Feature& feat : ex.features) x[feat.index - 1] = feat.value;
        const double m = ex.label * x.dot(w);
        const Vector expected = -ex.label * x / (1.0 + std::exp(m)) + 0.01 * w;
        const std::vector<std::size_t> batch{2};
        CHECK(oracle::rel(f.model->minibatch_gradient(0, w, batch), expected) < 1e-14);
    }
    SUBCASE("the mean over all size-B subsets is the gradient") {
        for (std::size_t b = 1; b <= n_k; ++b) {
            Vector mean = Vector::Zero(5);
            std::size_t count = 0;
            for (unsigned mask = 0; mask < (1u << n_k); ++mask) {
                if (static_cast<std::size_t>(__builtin_popcount(mask)) != b) continue;
                std::vector<std::size_t> batch;
                for (std::size_t i = 0; i < n_k; ++i) {
                    if (mask & (1u << i)) batch.push_back(i);
                }
                mean += f.model->minibatch_gradient(0, w, batch);
                ++count;
            }
            mean /= static_cast<double>(count);
            CHECK(oracle::rel(mean, f.model->gradient(0, w)) < 1e-13);
        }
    }
    SUBCASE("empty and out-of-range batches are rejected") {
        CHECK_THROWS_AS(f.model->minibatch_gradient(0, w, {}), ConfigError);
        const std::vector<std::size_t> bad{n_k};
        CHECK_THROWS_AS(f.model->minibatch_gradient(0, w, bad), ConfigError);
    }
}

TEST_CASE("global gradient is the weighted sum of local gradients") {
    auto data = std::make_shared<Dataset>(generate_logistic_dataset(300, 8, 5));
    const std::vector<double> props{0.5, 0.3, 0.2};
    const Partition p = partition_imbalanced(*data, props, 5);
    const LogisticModel model(data, p, 1e-3);
    Rng rng(3);
    const Vector w = oracle::random_vector(8, rng);
    Vector sum = Vector::Zero(8);
    double value = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
        const double weight = static_cast<double>(p.client(k).size()) / static_cast<double>(p.total());
        CHECK(model.client_weight(k) == doctest::Approx(weight).epsilon(1e-15));
        sum += weight * model.gradient(k, w);
        value += weight * model.value(k, w);
    }
    CHECK(oracle::rel(model.global_gradient(w), sum) < 1e-12);
    CHECK(model.global_value(w) == doctest::Approx(value).epsilon(1e-14));
}

TEST_CASE("logistic convexity and smoothness witnesses") {
    const auto f = logistic(120, 10, 3, 0.05, 21);
    const double beta = f.model->smoothness_bound();
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector w = oracle::random_vector(10, rng);
        const Vector u = oracle::random_vector(10, rng);
        const Vector a = oracle::random_vector(10, rng);
        const Vector b = oracle::random_vector(10, rng);
        for (std::size_t k = 0; k < 3; ++k) {
            const double lower = f.model->value(k, w) + f.model->gradient(k, w).dot(u - w) +
                                 0.5 * f.model->gamma() * (u - w).squaredNorm();
            CHECK(f.model->value(k, u) >= lower - 1e-12);
            CHECK((f.model->gradient(k, u) - f.model->gradient(k, w)).norm() <= beta * (u - w).norm() * (1 + 1e-12));
            const double uhv = a.dot(f.model->hessian_vec(k, w, b));
            const double vhu = b.dot(f.model->hessian_vec(k, w, a));
            CHECK(std::abs(uhv - vhu) <= 1e-10 * std::max(std::abs(uhv), 1.0));
        }
    }
}

TEST_CASE("logistic model rejects bad parameters") {
    auto data = std::make_shared<Dataset>(generate_logistic_dataset(20, 3, 1));
    const Partition p = partition_iid(*data, 2, 1);
    CHECK_THROWS_AS(LogisticModel(data, p, 0.0), ConfigError);
    const LogisticModel model(data, p, 1.0);
    CHECK_THROWS_AS(model.value(0, Vector::Zero(4)), DimensionMismatch);
    CHECK_THROWS_AS(model.value(2, Vector::Zero(3)), ConfigError);
}

TEST_CASE("quadratic values, gradients and Hessians") {
    const QuadraticModel unit = identity_quadratic(Vector::Zero(3));
    CHECK(unit.value(0, Vector::Unit(3, 0)) == doctest::Approx(0.5));

    const QuadraticModel twice({2.0 * Matrix::Identity(3, 3)}, {Vector::Zero(3)});
    CHECK(oracle::rel(twice.gradient(0, Vector::Unit(3, 0)), Vector(2.0 * Vector::Unit(3, 0))) == 0.0);

    Rng rng(4);
    const Matrix a = oracle::random_spd(5, 1.0, 10.0, rng);
    const QuadraticModel q({a}, {oracle::random_vector(5, rng)});
    const Vector v = oracle::random_vector(5, rng);
    CHECK(oracle::rel(q.hessian_vec(0, oracle::random_vector(5, rng), v), Vector(a * v)) < 1e-15);
    CHECK(q.client_mu(0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(q.client_beta(0) == doctest::Approx(10.0).epsilon(1e-10));
}

TEST_CASE("quadratic global value averages the clients") {
    Rng rng(6);
    const QuadraticModel q({oracle::random_spd(4, 1, 3, rng), oracle::random_spd(4, 1, 3, rng)},
                           {oracle::random_vector(4, rng), oracle::random_vector(4, rng)});
    const Vector w = oracle::random_vector(4, rng);
    CHECK(q.global_value(w) == doctest::Approx(0.5 * (q.value(0, w) + q.value(1, w))).epsilon(1e-15));
}

TEST_CASE("quadratic model validation") {
    Matrix asym = Matrix::Identity(2, 2);
    asym(0, 1) = 0.5;
    CHECK_THROWS_AS(QuadraticModel({asym}, {Vector::Zero(2)}), ConfigError);
    Matrix indefinite = Matrix::Identity(2, 2);
    indefinite(1, 1) = -1.0;
    CHECK_THROWS_AS(QuadraticModel({indefinite}, {Vector::Zero(2)}), ConfigError);
    CHECK_THROWS_AS(QuadraticModel({Matrix::Identity(2, 2)}, {Vector::Zero(3)}), DimensionMismatch);
}

TEST_CASE("quadratic minimizer") {
    const QuadraticModel q = identity_quadratic(Vector::Unit(4, 0));
    CHECK(oracle::rel(q.minimizer(), Vector(Vector::Unit(4, 0))) < 1e-15);
}

TEST_CASE("generated quadratic fixtures") {
    const QuadraticFixture fx = generate_quadratic(30, 6, 100.0, 0.1, 17);
    const QuadraticModel& m = *fx.model;
    CHECK(m.global_gradient(fx.minimizer).norm() <= 1e-10);

    Matrix avg = Matrix::Zero(30, 30);
    Vector rhs = Vector::Zero(30);
    for (std::size_t k = 0; k < 6; ++k) {
        avg += m.client_weight(k) * m.client_hessian(k);
        rhs += m.client_weight(k) * m.client_linear_term(k);
        CHECK(m.client_mu(k) >= 1.0 - 1e-9);
        CHECK(m.client_beta(k) <= 100.0 * (1 + 1e-9));
    }
    CHECK(oracle::rel(fx.minimizer, oracle::dense_solve(avg, rhs)) < 1e-10);
    Eigen::SelfAdjointEigenSolver<Matrix> es(avg);
    const double ratio = es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff();
    CHECK(ratio >= 1.0);
    CHECK(ratio <= 100.0 * (1 + 1e-9));

    const QuadraticFixture again = generate_quadratic(30, 6, 100.0, 0.1, 17);
    CHECK(again.minimizer == fx.minimizer);
    CHECK_THROWS_AS(generate_quadratic(3, 2, 0.5, 0.1, 1), ConfigError);
}

TEST_CASE("corrected gradients") {
    const auto f = logistic(200, 6, 4, 1e-2, 31);
    const LossModel& m = *f.model;
    Rng rng(12);
    const Vector anchor = oracle::random_vector(6, rng);
    const Vector g = m.global_gradient(anchor);
    const SvrgCorrection svrg{anchor, g};

    SUBCASE("at the anchor the full-batch SVRG form is the global gradient") {
        for (std::size_t k = 0; k < 4; ++k) CHECK(oracle::rel(corrected_gradient(m, k, anchor, svrg), g) <= 1e-12);
    }
    SUBCASE("the SVRG form is the gradient of the corrected local objective") {
        const Vector w = oracle::random_vector(6, rng);
        for (std::size_t k = 0; k < 4; ++k) {
            const Vector fd = oracle::fd_gradient([&](const Vector& x) { return corrected_value(m, k, x, svrg); }, w);
            CHECK(oracle::rel(corrected_gradient(m, k, w, svrg), fd) < 1e-6);
        }
    }
    SUBCASE("mini-batch SVRG form uses the same batch in both local terms") {
        const Vector w = oracle::random_vector(6, rng);
        const std::vector<std::size_t> batch{0, 3, 7};
        const Vector expected =
            m.minibatch_gradient(1, w, batch) - m.minibatch_gradient(1, anchor, batch) + g;
        CHECK(oracle::rel(corrected_gradient(m, 1, w, svrg, batch), expected) == 0.0);
        CHECK(oracle::rel(corrected_gradient(m, 1, anchor, svrg, batch), g) < 1e-12);
    }
    SUBCASE("offset form") {
        const Vector offset = oracle::random_vector(6, rng);
        const Vector w = oracle::random_vector(6, rng);
        CHECK(oracle::rel(corrected_gradient(m, 2, w, OffsetCorrection{offset}), Vector(m.gradient(2, w) + offset)) ==
              0.0);
        CHECK_THROWS_AS(corrected_gradient(m, 2, w, OffsetCorrection{Vector::Zero(5)}), DimensionMismatch);
    }
}

TEST_CASE("single-client correction vanishes") {
    auto data = std::make_shared<Dataset>(generate_logistic_dataset(50, 4, 2));
    const LogisticModel m(data, partition_iid(*data, 1, 0), 1e-3);
    Rng rng(1);
    const Vector anchor = oracle::random_vector(4, rng);
    const SvrgCorrection svrg{anchor, m.global_gradient(anchor)};
    CHECK(correction_offset(m, 0, svrg).norm() == 0.0);
    const Vector w = oracle::random_vector(4, rng);
    CHECK(oracle::rel(corrected_gradient(m, 0, w, svrg), m.global_gradient(w)) < 1e-15);
}

TEST_CASE("synthetic logistic data is seeded") {
    const Dataset a = generate_logistic_dataset(100, 7, 3);
    CHECK(a.size() == 100);
    CHECK(a.dim() == 7);
    CHECK(a == generate_logistic_dataset(100, 7, 3));
    CHECK_FALSE(a == generate_logistic_dataset(100, 7, 4));
    std::size_t positives = 0;
    for (const auto& ex : a.examples()) positives += ex.label > 0 ? 1 : 0;
    CHECK(positives > 10);
    CHECK(positives < 90);
}

}  // TEST_SUITE
