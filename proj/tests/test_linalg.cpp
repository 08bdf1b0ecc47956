#include "fedosaa/linalg.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace fedosaa;

TEST_SUITE("linalg") {

TEST_CASE("least squares with the identity") {
    Rng rng(1);
    const Vector b = oracle::random_vector(6, rng);
    const auto r = least_squares(Matrix::Identity(6, 6), b);
    CHECK(r.rank == 6);
    CHECK(oracle::rel(r.x, b) < 1e-15);
}

TEST_CASE("least squares drops a duplicate column") {
    Matrix a = Matrix::Zero(3, 2);
    a(0, 0) = a(0, 1) = 1.0;
    const auto r = least_squares(a, Vector::Unit(3, 0));
    CHECK(r.rank == 1);
    CHECK(r.x[0] == doctest::Approx(1.0));
    CHECK(r.x[1] == 0.0);
}

TEST_CASE("least squares residual is orthogonal to the columns") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix a = oracle::random_matrix(20, 5, rng);
        const Vector b = oracle::random_vector(20, rng);
        const auto r = least_squares(a, b);
        CHECK(r.rank == 5);
        CHECK((a.transpose() * (a * r.x - b)).norm() <= 1e-10 * a.norm() * b.norm());
        const Vector normal = (a.transpose() * a).ldlt().solve(a.transpose() * b);
        CHECK(oracle::rel(r.x, normal) < 1e-10);
    }
}

TEST_CASE("least squares on a rank-deficient matrix matches the projection") {
    Rng rng(3);
    Matrix a = oracle::random_matrix(12, 6, rng);
    a.col(4) = a.col(0) - 2.0 * a.col(2);
    a.col(5) = 3.0 * a.col(1);
    const Vector b = oracle::random_vector(12, rng);
    const auto r = least_squares(a, b);
    CHECK(r.rank == 4);
    CHECK((a * r.x - b).norm() == doctest::Approx(oracle::projection_residual(a, b)).epsilon(1e-10));
    std::size_t zeros = 0;
    for (Eigen::Index i = 0; i < 6; ++i) zeros += r.x[i] == 0.0 ? 1 : 0;
    CHECK(zeros == 2);
}

TEST_CASE("least squares preconditions") {
    CHECK_THROWS_AS(least_squares(Matrix::Zero(2, 3), Vector::Zero(2)), ConfigError);
    CHECK_THROWS_AS(least_squares(Matrix::Zero(3, 2), Vector::Zero(2)), DimensionMismatch);
    Matrix bad = Matrix::Identity(2, 2);
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(least_squares(bad, Vector::Ones(2)), NumericalError);
    const auto zero = least_squares(Matrix::Zero(4, 2), Vector::Ones(4));
    CHECK(zero.rank == 0);
    CHECK(zero.x == Vector::Zero(2));
}

TEST_CASE("AA coefficients, small cases") {
    SUBCASE("m = 0") {
        const Vector alpha = aa_coefficients(Vector::Ones(3));
        CHECK(alpha.size() == 1);
        CHECK(alpha[0] == 1.0);
    }
    SUBCASE("orthogonal unit residuals") {
        Matrix r(2, 2);
        r << 1, 0, 0, 1;
        const Vector alpha = aa_coefficients(r);
        CHECK(alpha[0] == doctest::Approx(0.5));
        CHECK(alpha[1] == doctest::Approx(0.5));
        CHECK((r * alpha).norm() == doctest::Approx(std::sqrt(2.0) / 2.0));
    }
    SUBCASE("opposite residuals cancel") {
        Matrix r(3, 2);
        r.col(0) << 1, -2, 3;
        r.col(1) = -r.col(0);
        const Vector alpha = aa_coefficients(r);
        CHECK(alpha[0] == doctest::Approx(0.5));
        CHECK(alpha[1] == doctest::Approx(0.5));
        CHECK((r * alpha).norm() < 1e-14);
    }
    SUBCASE("empty input") { CHECK_THROWS_AS(aa_coefficients(Matrix(3, 0)), ConfigError); }
}

TEST_CASE("AA coefficients: affine constraint, gain bound and projection identity") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::Index d = 15;
        const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng.uniform_index(8));
        const Matrix r = oracle::random_matrix(d, m + 1, rng);
        const Vector alpha = aa_coefficients(r);
        CHECK(alpha.sum() == doctest::Approx(1.0).epsilon(1e-14));
        // alpha_0 is set last, so the constraint holds up to one rounding of the tail sum.
        CHECK(std::abs(alpha.sum() - 1.0) <= 4 * std::numeric_limits<double>::epsilon() * alpha.cwiseAbs().sum());
        const double mixed = (r * alpha).norm();
        CHECK(mixed <= r.col(0).norm() * (1 + 1e-12));

        Matrix y(d, m);
        for (Eigen::Index i = 0; i < m; ++i) y.col(i) = r.col(i) - r.col(i + 1);
        CHECK(mixed == doctest::Approx(oracle::projection_residual(y, r.col(0))).epsilon(1e-10));

        // Brute-force optimality: no other affine combination does better.
        for (int probe = 0; probe < 5; ++probe) {
            Vector beta = alpha + 0.1 * oracle::random_vector(m + 1, rng);
            beta[0] += 1.0 - beta.sum();
            CHECK((r * beta).norm() >= mixed * (1 - 1e-12));
        }
    }
}

TEST_CASE("CG") {
    SUBCASE("identity in one step") {
        Rng rng(5);
        const Vector g = oracle::random_vector(7, rng);
        const auto r = cg_solve([](const Vector& v) { return v; }, g, 1);
        CHECK(oracle::rel(r.x, g) < 1e-15);
    }
    SUBCASE("finite termination and agreement with a dense solve") {
        Rng rng(6);
        for (int trial = 0; trial < 10; ++trial) {
            const Matrix h = oracle::random_spd(10, 1.0, 50.0, rng);
            const Vector g = oracle::random_vector(10, rng);
            const auto r = cg_solve([&](const Vector& v) { return Vector(h * v); }, g, 10);
            CHECK((h * r.x - g).norm() <= 1e-8 * g.norm());
            CHECK(oracle::rel(r.x, oracle::dense_solve(h, g)) < 1e-8);
        }
    }
    SUBCASE("early exit at the tolerance") {
        Rng rng(7);
        const Matrix h = oracle::random_spd(30, 1.0, 10.0, rng);
        const Vector g = oracle::random_vector(30, rng);
        const auto r = cg_solve([&](const Vector& v) { return Vector(h * v); }, g, 30, 1e-4);
        CHECK(r.iterations < 30);
        CHECK(r.relative_residual <= 1e-4);
        CHECK((h * r.x - g).norm() / g.norm() == doctest::Approx(r.relative_residual).epsilon(1e-6));
    }
    SUBCASE("indefinite operator breaks down with the last iterate") {
        Matrix h = Matrix::Identity(3, 3);
        h(2, 2) = -1.0;
        const Vector g = Vector::Ones(3);
        try {
            cg_solve([&](const Vector& v) { return Vector(h * v); }, g, 5);
            FAIL("expected a breakdown");
        } catch (const SolverBreakdown& e) {
            CHECK(e.last_iterate().allFinite());
        }
    }
    SUBCASE("zero right-hand side") {
        const auto r = cg_solve([](const Vector& v) { return v; }, Vector::Zero(4), 3);
        CHECK(r.x == Vector::Zero(4));
        CHECK(r.iterations == 0);
    }
}

TEST_CASE("GMRES") {
    SUBCASE("identity") {
        Rng rng(8);
        const Vector g = oracle::random_vector(5, rng);
        const auto r = gmres_solve([](const Vector& v) { return v; }, g, 5);
        CHECK(r.iterations == 1);
        CHECK(oracle::rel(r.x, g) < 1e-15);
    }
    SUBCASE("scaled identity, one iteration") {
        const auto r = gmres_solve([](const Vector& v) { return Vector(2.0 * v); }, Vector::Unit(3, 0), 1);
        CHECK(oracle::rel(r.x, Vector(0.5 * Vector::Unit(3, 0))) < 1e-15);
        CHECK(r.relative_residual < 1e-15);
    }
    SUBCASE("SPD with q = d matches a dense solve") {
        Rng rng(9);
        for (int trial = 0; trial < 10; ++trial) {
            const Matrix b = oracle::random_spd(12, 1.0, 30.0, rng);
            const Vector g = oracle::random_vector(12, rng);
            const auto r = gmres_solve([&](const Vector& v) { return Vector(b * v); }, g, 12);
            CHECK(oracle::rel(r.x, oracle::dense_solve(b, g)) < 1e-8);
        }
    }
    SUBCASE("nonsymmetric operator matches the Krylov oracle at every q") {
        Rng rng(10);
        const Matrix b = Matrix::Identity(15, 15) * 3.0 + 0.3 * oracle::random_matrix(15, 15, rng);
        const Vector g = oracle::random_vector(15, rng);
        for (int q = 1; q <= 10; ++q) {
            const auto r = gmres_solve([&](const Vector& v) { return Vector(b * v); }, g, q);
            CHECK(oracle::rel(r.x, oracle::krylov_minres(b, g, q)) < 1e-8);
        }
    }
    SUBCASE("residual history is non-increasing and optimal over the Krylov space") {
        Rng rng(11);
        const Matrix b = oracle::random_spd(20, 1.0, 100.0, rng);
        const Vector g = oracle::random_vector(20, rng);
        const auto r = gmres_solve([&](const Vector& v) { return Vector(b * v); }, g, 12);
        for (std::size_t i = 1; i < r.residual_history.size(); ++i) {
            CHECK(r.residual_history[i] <= r.residual_history[i - 1] * (1 + 1e-12));
        }
        for (int q = 1; q <= 6; ++q) {
            const auto rq = gmres_solve([&](const Vector& v) { return Vector(b * v); }, g, q);
            const double best = (b * rq.x - g).norm();
            Matrix basis(20, q);
            Vector v = g;
            for (int j = 0; j < q; ++j) {
                basis.col(j) = v;
                v = b * v;
            }
            for (int probe = 0; probe < 50; ++probe) {
                const Vector p = basis * oracle::random_vector(q, rng);
                CHECK(best <= (b * p - g).norm() * (1 + 1e-12));
            }
        }
    }
    SUBCASE("happy breakdown returns the exact solution") {
        Matrix b = Matrix::Identity(6, 6);
        b.diagonal() << 1, 1, 1, 2, 2, 2;
        const Vector g = Vector::Ones(6);
        const auto r = gmres_solve([&](const Vector& v) { return Vector(b * v); }, g, 6);
        CHECK(r.iterations == 2);
        CHECK(oracle::rel(r.x, oracle::dense_solve(b, g)) < 1e-14);
    }
    SUBCASE("non-finite operator output") {
        CHECK_THROWS_AS(gmres_solve([](const Vector& v) { return Vector(v * std::numeric_limits<double>::infinity()); },
                                    Vector::Ones(3), 3),
                        SolverBreakdown);
    }
}

TEST_CASE("CG and GMRES agree on SPD systems") {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix h = oracle::random_spd(25, 1.0, 100.0, rng);
        const Vector g = oracle::random_vector(25, rng);
        const auto op = [&](const Vector& v) { return Vector(h * v); };
        for (int q : {3, 6, 10}) {
            const double cg = cg_solve(op, g, q).relative_residual;
            const double gm = gmres_solve(op, g, q).relative_residual;
            CHECK(gm <= cg * (1 + 1e-10));
            CHECK(cg <= 10.0 * gm);
        }
    }
}

TEST_CASE("condition number") {
    Matrix d = Matrix::Zero(3, 2);
    d(0, 0) = 4.0;
    d(1, 1) = 0.5;
    CHECK(condition_number(d) == doctest::Approx(8.0));
    CHECK(std::isinf(condition_number(Matrix::Zero(3, 2))));
}

}  // TEST_SUITE
