// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "phymt/error.hpp"
#include "phymt/precoding.hpp"

using namespace phymt;
using namespace phymt::precoding;

namespace {

// Term-by-term scalar evaluation of the SINR definition.
double sinr_oracle(const ComplexMatrix& h, const ComplexMatrix& w, double sigma2, int k) {
    auto inner = [&](int a, int b) {
        Complex acc(0.0, 0.0);
        for (Eigen::Index n = 0; n < h.rows(); ++n) acc += std::conj(h(n, a)) * w(n, b);
        return std::norm(acc);
    };
    double interference = 0.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        if (j != k) interference += inner(k, static_cast<int>(j));
    }
    return inner(k, k) / (interference + sigma2);
}

PowerParams params(std::initializer_list<double> lambda, std::initializer_list<double> p, double p_max) {
    PowerParams out;
    out.lambda = RealVector::Map(std::data(lambda), static_cast<Eigen::Index>(lambda.size()));
    out.p = RealVector::Map(std::data(p), static_cast<Eigen::Index>(p.size()));
    out.p_max = p_max;
    return out;
}

ComplexMatrix orthogonal_channel() {
    ComplexMatrix h = ComplexMatrix::Zero(4, 2);
    h(0, 0) = Complex(1.5, 0.5);
    h(1, 0) = Complex(-0.5, 1.0);
    h(2, 1) = Complex(0.7, 0.0);
    h(3, 1) = Complex(0.0, -2.0);
    return h;
}

}  // namespace

TEST_CASE("zero precoder has zero sinr and rate") {
    SeededRng rng(1);
    const ComplexMatrix h = crandn(rng, 8, 3);
    PrecoderSet w{ComplexMatrix::Zero(8, 3), 1.0};
    for (int k = 0; k < 3; ++k) CHECK(sinr(h, w, 1.0, k) == 0.0);
    CHECK(sum_rate(h, w, 1.0) == 0.0);
}

TEST_CASE("single-user mrt sinr closed form") {
    SeededRng rng(2);
    const ComplexMatrix h = crandn(rng, 6, 1);
    const double p = 3.0, sigma2 = 0.5;
    PrecoderSet w{std::sqrt(p) * h / h.norm(), p};
    CHECK(sinr(h, w, sigma2, 0) == doctest::Approx(p * h.squaredNorm() / sigma2).epsilon(1e-12));
}

TEST_CASE("sinr and sum rate match a scalar oracle") {
    SeededRng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const ComplexMatrix h = crandn(rng, 8, 4);
        PrecoderSet w{crandn(rng, 8, 4), 4.0};
        double rate = 0.0;
        for (int k = 0; k < 4; ++k) {
            const double g = sinr_oracle(h, w.w, 0.7, k);
            CHECK(sinr(h, w, 0.7, k) == doctest::Approx(g).epsilon(1e-12));
            rate += std::log2(1.0 + g);
        }
        CHECK(std::abs(sum_rate(h, w, 0.7) - rate) < 1e-12);
    }
}

TEST_CASE("orthogonal users with equal-power mrt have no interference") {
    const ComplexMatrix h = orthogonal_channel();
    const double p_max = 2.0, sigma2 = 0.3;
    const PrecoderSet w = mrt_precoder(h, p_max);
    double expected = 0.0;
    for (int k = 0; k < 2; ++k) expected += std::log2(1.0 + (p_max / 2.0) * h.col(k).squaredNorm() / sigma2);
    CHECK(sum_rate(h, w, sigma2) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("sum rate ignores a per-column phase rotation") {
    SeededRng rng(4);
    const ComplexMatrix h = crandn(rng, 8, 3);
    PrecoderSet w{crandn(rng, 8, 3), 3.0};
    PrecoderSet r = w;
    r.w.col(1) *= std::exp(Complex(0.0, 1.234));
    CHECK(std::abs(sum_rate(h, w, 1.0) - sum_rate(h, r, 1.0)) < 1e-12);
}

TEST_CASE("structured precoder with one user is mrt") {
    SeededRng rng(5);
    const ComplexMatrix h = crandn(rng, 8, 1);
    for (double lambda : {0.0, 0.3, 5.0, 1e3}) {
        const auto w = structured_precoder(h, params({lambda}, {2.0}, 2.0), 1.0);
        const ComplexVector mrt = std::sqrt(2.0) * h.col(0) / h.norm();
        CHECK((w.w.col(0) - mrt).norm() < 1e-10);
    }
}

TEST_CASE("structured precoder with zero lambda is per-user mrt") {
    SeededRng rng(6);
    const ComplexMatrix h = crandn(rng, 8, 3);
    const auto w = structured_precoder(h, params({0.0, 0.0, 0.0}, {1.0, 2.0, 3.0}, 6.0), 1.0);
    for (int k = 0; k < 3; ++k) {
        const ComplexVector expected = std::sqrt(static_cast<double>(k + 1)) * h.col(k) / h.col(k).norm();
        CHECK((w.w.col(k) - expected).norm() < 1e-12);
    }
}

TEST_CASE("structured precoder column norms are sqrt(p)") {
    SeededRng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const ComplexMatrix h = crandn(rng, 16, 4);
        PowerParams pp;
        pp.lambda = RealVector::NullaryExpr(4, [&](Eigen::Index) { return rng.uniform(0.0, 5.0); });
        pp.p = RealVector::NullaryExpr(4, [&](Eigen::Index) { return rng.uniform(0.1, 5.0); });
        const auto w = structured_precoder(h, pp, 0.8);
        for (int k = 0; k < 4; ++k) CHECK(std::abs(w.w.col(k).norm() - std::sqrt(pp.p(k))) < 1e-12);
    }
}

TEST_CASE("scale_to_budget arithmetic") {
    RealVector a(2), b(2);
    a << 2.0, 2.0;
    b << 1.0, 3.0;
    const auto s = scale_to_budget(a, b, 1.0);
    CHECK(s.lambda(0) == doctest::Approx(0.5));
    CHECK(s.lambda(1) == doctest::Approx(0.5));
    CHECK(s.p(1) == doctest::Approx(0.75));
    RealVector c(3);
    c << 1.0, 2.5, 0.5;
    const auto fixed = scale_to_budget(c, c, 4.0);
    CHECK((fixed.p - c).norm() < 1e-15);
    SeededRng rng(8);
    for (int i = 0; i < 50; ++i) {
        RealVector x = RealVector::NullaryExpr(5, [&](Eigen::Index) { return rng.uniform(0.0, 3.0); });
        const auto r = scale_to_budget(x, x * 2.0, 7.0);
        CHECK(std::abs(r.lambda.sum() - 7.0) < 1e-12);
        CHECK(std::abs(r.p.sum() - 7.0) < 1e-12);
    }
    try {
        scale_to_budget(RealVector::Zero(2), b, 1.0);
        FAIL("expected degenerate-output error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::kDegenerateOutput);
    }
}

TEST_CASE("zf nulls interference and meets the budget") {
    SeededRng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const ComplexMatrix h = crandn(rng, 16, 4);
        const auto w = zf_precoder(h, 10.0, 1.0);
        const ComplexMatrix g = h.adjoint() * w.w;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                if (i != j) CHECK(std::abs(g(i, j)) < 1e-9);
        CHECK(std::abs(w.total_power() - 10.0) < 1e-12);
    }
}

TEST_CASE("zf on orthonormal columns is proportional to the channel") {
    SeededRng rng(10);
    const auto q = svd(crandn(rng, 6, 3)).u;
    const auto w = zf_precoder(q, 3.0, 1.0);
    CHECK((w.w - q).norm() < 1e-12);
}

TEST_CASE("zf rejects a rank-deficient channel") {
    ComplexMatrix h = ComplexMatrix::Zero(4, 2);
    h(0, 0) = 1.0;
    h(0, 1) = 2.0;
    try {
        zf_precoder(h, 1.0, 1.0);
        FAIL("expected singular-system error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::kSingularSystem);
    }
}

TEST_CASE("wmmse single user reaches the closed form") {
    SeededRng rng(11);
    const ComplexMatrix h = crandn(rng, 8, 1);
    const auto r = wmmse_precoder(h, 10.0, 1.0, 3);
    CHECK(std::abs(r.rate_trace.back() - std::log2(1.0 + 10.0 * h.squaredNorm())) < 1e-6);
}

TEST_CASE("wmmse trace is monotone and beats zf on average") {
    SeededRng rng(12);
    double wm = 0.0, zf = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const ComplexMatrix h = crandn(rng, 16, 4);
        const auto r = wmmse_precoder(h, 10.0, 1.0);
        REQUIRE(r.rate_trace.size() == 20u);
        for (std::size_t i = 1; i < r.rate_trace.size(); ++i)
            CHECK(r.rate_trace[i] >= r.rate_trace[i - 1] * (1.0 - 1e-9));
        CHECK(r.precoder.total_power() <= 10.0 * (1.0 + 1e-9));
        wm += r.rate_trace.back();
        zf += sum_rate(h, zf_precoder(h, 10.0, 1.0), 1.0);
    }
    CHECK(wm >= zf);
}

TEST_CASE("project_simplex") {
    RealVector x(3);
    x << 0.2, -1.0, 3.0;
    const RealVector p = project_simplex(x, 2.0);
    CHECK(p.sum() == doctest::Approx(2.0));
    CHECK(p.minCoeff() >= 0.0);
    CHECK(p(1) == 0.0);
    RealVector feasible(3);
    feasible << 0.5, 0.5, 1.0;
    CHECK((project_simplex(feasible, 2.0) - feasible).norm() < 1e-15);
}

TEST_CASE("fit objective gradient matches finite differences") {
    SeededRng rng(13);
    const ComplexMatrix h = crandn(rng, 8, 3);
    const auto ref = wmmse_precoder(h, 5.0, 1.0).precoder;
    RealVector lambda(3), p(3);
    lambda << 1.0, 2.5, 1.5;
    p = ref.w.colwise().squaredNorm().transpose();
    RealVector g;
    fit_objective(h, lambda, p, ref.w, 1.0, &g);
    for (int i = 0; i < 3; ++i) {
        RealVector up = lambda, dn = lambda;
        up(i) += 1e-6;
        dn(i) -= 1e-6;
        const double fd = (fit_objective(h, up, p, ref.w, 1.0, nullptr) - fit_objective(h, dn, p, ref.w, 1.0, nullptr)) / 2e-6;
        CHECK(std::abs(fd - g(i)) < 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("fit with one user is exact") {
    SeededRng rng(14);
    const ComplexMatrix h = crandn(rng, 8, 1);
    const auto w = wmmse_precoder(h, 4.0, 1.0);
    const auto fit = fit_power_params(w.precoder, h, 1.0, 4.0);
    CHECK(fit.params.lambda(0) == doctest::Approx(4.0));
    CHECK(fit.params.p(0) == doctest::Approx(4.0));
    CHECK(fit.objective < 1e-12);
}

TEST_CASE("fit from lambda = 0 on orthogonal users reconstructs mrt") {
    const ComplexMatrix h = orthogonal_channel();
    const PrecoderSet target = mrt_precoder(h, 2.0);
    FitOptions opt;
    opt.start = FitStart::kZero;
    const auto fit = fit_power_params(target, h, 1.0, 2.0, opt);
    const auto rebuilt = structured_precoder(h, fit.params, 1.0);
    CHECK((rebuilt.w - target.w).norm() < 1e-6);
}

TEST_CASE("fit recovers the wmmse rate on random instances") {
    SeededRng rng(15);
    int good = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const ComplexMatrix h = crandn(rng, 16, 4);
        const auto w = wmmse_precoder(h, 10.0, 1.0);
        const auto fit = fit_power_params(w.precoder, h, 1.0, 10.0);
        CHECK(std::abs(fit.params.lambda.sum() - 10.0) < 1e-9);
        CHECK(std::abs(fit.params.p.sum() - 10.0) < 1e-9);
        if (fit.rate >= 0.99 * sum_rate(h, w.precoder, 1.0)) ++good;
    }
    CHECK(good >= 19);
}
