// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/SVD>
#include <cmath>
#include <limits>

#include "phymt/error.hpp"
#include "phymt/numerics.hpp"

using namespace phymt;

namespace {

double reconstruction_error(const ComplexMatrix& m, const SvdResult<Complex>& r) {
    const ComplexMatrix back = r.u * r.s.cast<Complex>().asDiagonal() * r.v.adjoint();
    return (m - back).norm();
}

double orthonormality_error(const ComplexMatrix& q) {
    const auto d = q.cols();
    return (q.adjoint() * q - ComplexMatrix::Identity(d, d)).norm();
}

}  // namespace

TEST_CASE("svd of the identity") {
    const auto r = svd(ComplexMatrix(ComplexMatrix::Identity(3, 3)));
    for (int i = 0; i < 3; ++i) CHECK(r.s(i) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("svd of a diagonal matrix is the diagonal up to phase") {
    ComplexMatrix m = ComplexMatrix::Zero(3, 3);
    m(0, 0) = 3.0;
    m(1, 1) = 2.0;
    m(2, 2) = 1.0;
    const auto r = svd(m);
    CHECK(r.s(0) == doctest::Approx(3.0));
    CHECK(r.s(1) == doctest::Approx(2.0));
    CHECK(r.s(2) == doctest::Approx(1.0));
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(r.u(i, i)) == doctest::Approx(1.0));
        CHECK(std::abs(r.v(i, i)) == doctest::Approx(1.0));
    }
}

TEST_CASE("svd reconstructs a random 5x3 matrix") {
    SeededRng rng(3);
    const ComplexMatrix m = crandn(rng, 5, 3);
    const auto r = svd(m);
    CHECK(reconstruction_error(m, r) < 1e-10);
}

TEST_CASE("svd property sweep over shapes up to 32x32") {
    SeededRng rng(4);
    for (int rows : {1, 2, 3, 7, 16, 32}) {
        for (int cols : {1, 2, 5, 16, 32}) {
            const ComplexMatrix m = crandn(rng, rows, cols);
            const auto r = svd(m);
            const double scale = m.norm();
            CAPTURE(rows);
            CAPTURE(cols);
            CHECK(reconstruction_error(m, r) < 1e-10 * scale);
            CHECK(orthonormality_error(r.u) < 1e-10);
            CHECK(orthonormality_error(r.v) < 1e-10);
            for (Eigen::Index i = 1; i < r.s.size(); ++i) CHECK(r.s(i) <= r.s(i - 1));
            for (Eigen::Index j = 0; j < r.u.cols(); ++j) {
                for (Eigen::Index i = 0; i < r.u.rows(); ++i) {
                    if (std::abs(r.u(i, j)) > 1e-300) {
                        CHECK(std::abs(r.u(i, j).imag()) < 1e-12);
                        CHECK(r.u(i, j).real() >= 0.0);
                        break;
                    }
                }
            }
        }
    }
}

TEST_CASE("singular values agree with an independent factorization") {
    SeededRng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const ComplexMatrix m = crandn(rng, 12, 9);
        const auto r = svd(m);
        Eigen::JacobiSVD<Eigen::MatrixXcd> oracle(m);
        CHECK((r.s - oracle.singularValues()).norm() < 1e-10 * m.norm());
    }
}

TEST_CASE("rank-r truncation error matches the discarded singular values") {
    SeededRng rng(6);
    const ComplexMatrix m = crandn(rng, 20, 14);
    const auto r = svd(m);
    Eigen::JacobiSVD<Eigen::MatrixXcd> oracle(m);
    const Eigen::VectorXd s = oracle.singularValues();
    for (int rank : {0, 1, 4, 13, 14}) {
        const ComplexMatrix approx = r.u.leftCols(rank) * r.s.head(rank).cast<Complex>().asDiagonal() * r.v.leftCols(rank).adjoint();
        const double expected = std::sqrt(s.tail(14 - rank).squaredNorm());
        CHECK(std::abs((m - approx).norm() - expected) < 1e-9);
    }
}

TEST_CASE("real svd reconstructs") {
    SeededRng rng(7);
    const RealMatrix m = randn(rng, 9, 6);
    const auto r = svd(m);
    CHECK((m - r.u * r.s.asDiagonal() * r.v.transpose()).norm() < 1e-10 * m.norm());
}

TEST_CASE("svd rejects non-finite input") {
    ComplexMatrix m = ComplexMatrix::Ones(2, 2);
    m(1, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(svd(m), Error);
    try {
        svd(m);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::kInvalidInput);
    }
}

TEST_CASE("solve_hermitian on scaled identities") {
    SeededRng rng(8);
    const ComplexMatrix b = crandn(rng, 4, 3);
    CHECK((solve_hermitian(ComplexMatrix(ComplexMatrix::Identity(4, 4)), b) - b).norm() == doctest::Approx(0.0));
    const ComplexMatrix two = 2.0 * ComplexMatrix::Identity(4, 4);
    CHECK((solve_hermitian(two, b) - b / 2.0).norm() < 1e-15);
}

TEST_CASE("solve_hermitian residual on a Gram system") {
    SeededRng rng(9);
    const ComplexMatrix g = crandn(rng, 10, 6);
    const ComplexMatrix a = g.adjoint() * g + ComplexMatrix::Identity(6, 6);
    const ComplexMatrix b = crandn(rng, 6, 2);
    const ComplexMatrix x = solve_hermitian(a, b);
    CHECK((a * x - b).norm() < 1e-9 * b.norm());
}

TEST_CASE("solve_hermitian recovers a planted solution") {
    SeededRng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        const ComplexMatrix g = crandn(rng, 8, 8);
        const ComplexMatrix a = g.adjoint() * g + 0.1 * ComplexMatrix::Identity(8, 8);
        const ComplexMatrix x0 = crandn(rng, 8, 3);
        const ComplexMatrix x = solve_hermitian(a, a * x0);
        CHECK((x - x0).norm() < 1e-8 * x0.norm());
    }
}

TEST_CASE("solve_hermitian rejects an indefinite matrix") {
    ComplexMatrix a = ComplexMatrix::Identity(3, 3);
    a(2, 2) = -1.0;
    try {
        solve_hermitian(a, ComplexMatrix(ComplexMatrix::Ones(3, 1)));
        FAIL("expected a singular-system error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::kSingularSystem);
    }
}

TEST_CASE("crandn is deterministic per seed and stream") {
    SeededRng a(42, 3), b(42, 3), c(42, 4);
    const ComplexMatrix x = crandn(a, 3, 3);
    CHECK(x == crandn(b, 3, 3));
    CHECK(x != crandn(c, 3, 3));
    SeededRng d(1);
    const ComplexMatrix one = crandn(d, 1, 1);
    CHECK(std::isfinite(one(0, 0).real()));
    CHECK(std::isfinite(one(0, 0).imag()));
}

TEST_CASE("crandn moments over 1e5 draws") {
    SeededRng rng(11);
    const ComplexMatrix x = crandn(rng, 1000, 100);
    const Complex mean = x.mean();
    const double var = x.cwiseAbs2().mean();
    const double re_var = x.real().cwiseAbs2().mean();
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.02);
    CHECK(std::abs(re_var - 0.5) < 0.01);
}

TEST_CASE("split streams do not advance the parent") {
    SeededRng a(5);
    SeededRng b(5);
    (void)a.split(7).next_u64();
    CHECK(a.next_u64() == b.next_u64());
    SeededRng c(5);
    for (int i = 0; i < 1000; ++i) CHECK(c.below(7) < 7u);
}
