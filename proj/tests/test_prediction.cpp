// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "phymt/error.hpp"
#include "phymt/prediction.hpp"

using namespace phymt;
using namespace phymt::prediction;

namespace {

double dataset_ar_nmse_db(double kmh, int samples) {
    chan::SceneConfig s;
    s.velocity_min_mps = s.velocity_max_mps = chan::kmh_to_mps(kmh);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < samples; ++i) {
        SeededRng rng(31, static_cast<std::uint64_t>(i));
        const auto seq = chan::csi_sequence(chan::draw_paths(s, rng), s, 20);
        const auto cp = make_cp_sample(seq, i % s.n_t(), 16, 4, chan::kNoiselessSnr, s.velocity_min_mps, rng);
        const RealMatrix pred = ar_predict(cp.history, 4, 4);
        num += (pred - cp.future).squaredNorm();
        den += cp.future.squaredNorm();
    }
    return 10.0 * std::log10(num / den);
}

}  // namespace

TEST_CASE("normalize fixed point and round trip") {
    SeededRng rng(1);
    RealMatrix x = randn(rng, 16, 8);
    x.array() -= x.mean();
    x /= std::sqrt(x.array().square().mean());
    const auto n = normalize(x);
    CHECK(std::abs(n.stats.mu) < 1e-15);
    CHECK(std::abs(n.stats.sigma - 1.0) < 1e-14);
    CHECK((n.x - x).norm() < 1e-13);

    const RealMatrix y = 3.0 * randn(rng, 5, 7) + RealMatrix::Constant(5, 7, -2.0);
    const auto m = normalize(y);
    CHECK(std::abs(m.x.mean()) < 1e-14);
    CHECK(std::abs(std::sqrt(m.x.array().square().mean()) - 1.0) < 1e-12);
    CHECK((denormalize(m.x, m.stats) - y).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("normalize recovers an offset mean") {
    SeededRng rng(2);
    const RealMatrix x = RealMatrix::Constant(100, 100, 5.0) + randn(rng, 100, 100);
    CHECK(std::abs(normalize(x).stats.mu - 5.0) < 0.05);
}

TEST_CASE("normalize rejects a constant input") {
    try {
        normalize(RealMatrix::Constant(4, 4, 2.5));
        FAIL("expected degenerate stats");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::kDegenerateStats);
    }
}

TEST_CASE("patchify shapes and padding") {
    SeededRng rng(3);
    const RealMatrix x = randn(rng, 16, 16);
    const RealMatrix p4 = patchify(x, 4);
    CHECK(p4.rows() == 4);
    CHECK(p4.cols() == 64);
    CHECK(p4.row(1).segment(16, 16) == x.row(5));
    CHECK(patchify(x, 1) == x);
    const RealMatrix p5 = patchify(x, 5);
    CHECK(p5.rows() == 4);
    CHECK(p5.row(3).head(16) == x.row(15));
    CHECK(p5.row(3).tail(64).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("nmse_db reference values") {
    SeededRng rng(4);
    const RealMatrix t = randn(rng, 4, 6);
    CHECK(nmse_db(t, t) == kNmseFloorDb);
    CHECK(nmse_db(RealMatrix::Zero(4, 6), t) == doctest::Approx(0.0));
    RealMatrix e = randn(rng, 4, 6);
    e *= 0.1 * t.norm() / e.norm();
    CHECK(std::abs(nmse_db(t + e, t) + 20.0) < 1e-9);
    CHECK(std::abs(nmse_db(-3.0 * (t + e), -3.0 * t) - nmse_db(t + e, t)) < 1e-12);
    try {
        nmse_db(t, RealMatrix::Zero(4, 6));
        FAIL("expected invalid input");
    } catch (const Error& err) {
        CHECK(err.kind() == ErrorKind::kInvalidInput);
    }
}

TEST_CASE("ar forecasts a constant column exactly") {
    const RealMatrix h = RealMatrix::Constant(16, 2, 0.7);
    const RealMatrix f = ar_predict(h, 3, 4);
    CHECK(nmse_db(f, RealMatrix::Constant(4, 2, 0.7)) == kNmseFloorDb);
}

TEST_CASE("ar(2) extrapolates a complex exponential") {
    const double w = 0.37;
    RealMatrix all(20, 2);
    for (int t = 0; t < 20; ++t) {
        all(t, 0) = std::cos(w * t + 0.2);
        all(t, 1) = std::sin(w * t + 0.2);
    }
    const RealMatrix f = ar_predict(all.topRows(16), 2, 4);
    CHECK(nmse_db(f, all.bottomRows(4)) < -40.0);
}

TEST_CASE("ar on white noise forecasts near zero") {
    double num = 0.0, den = 0.0;
    for (int seed = 0; seed < 200; ++seed) {
        SeededRng rng(5, static_cast<std::uint64_t>(seed));
        const RealMatrix x = randn(rng, 20, 4);
        const RealMatrix f = ar_predict(x.topRows(16), 2, 4);
        num += (f - x.bottomRows(4)).squaredNorm();
        den += x.bottomRows(4).squaredNorm();
    }
    CHECK(std::abs(10.0 * std::log10(num / den)) < 1.0);
}

TEST_CASE("ar rejects an order too large for the history") {
    SeededRng rng(6);
    CHECK_THROWS_AS(ar_predict(randn(rng, 4, 2), 4, 2), Error);
}

TEST_CASE("cp sample layout") {
    chan::SceneConfig s;
    SeededRng rng(7);
    const auto seq = chan::csi_sequence(chan::draw_paths(s, rng), s, 20);
    const auto cp = make_cp_sample(seq, 3, 16, 4, chan::kNoiselessSnr, 1.0, rng);
    CHECK(cp.history.rows() == 16);
    CHECK(cp.history.cols() == 2 * s.subcarriers);
    CHECK(cp.future.rows() == 4);
    CHECK(cp.history(2, 1) == seq.slots[2](3, 1).real());
    CHECK(cp.future(0, s.subcarriers + 5) == seq.slots[16](3, 5).imag());
}

TEST_CASE("ar baseline degrades with speed") {
    const double v10 = dataset_ar_nmse_db(10.0, 150);
    const double v50 = dataset_ar_nmse_db(50.0, 150);
    const double v100 = dataset_ar_nmse_db(100.0, 150);
    CAPTURE(v10);
    CAPTURE(v50);
    CAPTURE(v100);
    CHECK(v10 < v50);
    CHECK(v50 < v100);
}
