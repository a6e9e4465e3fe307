// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "phymt/channel_sim.hpp"
#include "phymt/error.hpp"

using namespace phymt;
using namespace phymt::chan;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("phymt_test_" + name);
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no error thrown");
    return ErrorKind::kValidation;
}

// Mean |<h_t, h_{t+1}>| / (|h_t||h_{t+1}|) over independent draws at one speed.
double slot_correlation(double kmh, int draws) {
    SceneConfig s;
    s.velocity_min_mps = s.velocity_max_mps = kmh_to_mps(kmh);
    double acc = 0.0;
    for (int i = 0; i < draws; ++i) {
        SeededRng rng(77, static_cast<std::uint64_t>(i));
        const auto seq = csi_sequence(draw_paths(s, rng), s, 6);
        const ComplexMatrix& a = seq.slots[0];
        const ComplexMatrix& b = seq.slots[5];
        acc += std::abs((a.conjugate().cwiseProduct(b)).sum()) / (a.norm() * b.norm());
    }
    return acc / draws;
}

}  // namespace

TEST_CASE("steering vector at broadside is all ones") {
    const ComplexVector a = upa_steering(4, 4, 0.0, 0.0);
    CHECK(a.size() == 16);
    CHECK((a - ComplexVector::Ones(16)).norm() < 1e-15);
}

TEST_CASE("steering vector at endfire alternates sign") {
    const ComplexVector a = upa_steering(2, 1, M_PI / 2, 0.0);
    CHECK(std::abs(a(0) - Complex(1.0, 0.0)) < 1e-15);
    CHECK(std::abs(a(1) - Complex(-1.0, 0.0)) < 1e-15);
}

TEST_CASE("steering vector norm is sqrt(n_h n_v)") {
    SeededRng rng(1);
    for (int i = 0; i < 50; ++i) {
        const double az = rng.uniform(-M_PI, M_PI);
        const double el = rng.uniform(-M_PI, M_PI);
        CHECK(std::abs(upa_steering(5, 3, az, el).norm() - std::sqrt(15.0)) < 1e-12);
    }
}

TEST_CASE("draw_paths yields 21 x 20 paths deterministically") {
    SceneConfig s;
    SeededRng a(9), b(9);
    const PathSet p = draw_paths(s, a);
    const PathSet q = draw_paths(s, b);
    REQUIRE(p.paths.size() == 420u);
    for (std::size_t i = 0; i < p.paths.size(); ++i) {
        CHECK(p.paths[i].gain == q.paths[i].gain);
        CHECK(p.paths[i].delay_s == q.paths[i].delay_s);
        CHECK(p.paths[i].delay_s >= 0.0);
        CHECK(p.paths[i].doppler_hz == q.paths[i].doppler_hz);
        CHECK(std::abs(p.paths[i].doppler_hz) <= p.velocity_mps / s.wavelength() + 1e-9);
    }
}

TEST_CASE("mean channel energy per entry is one") {
    SceneConfig s;
    s.subcarriers = 2;
    double energy = 0.0;
    std::size_t count = 0;
    for (int i = 0; i < 10000; ++i) {
        SeededRng rng(123, static_cast<std::uint64_t>(i));
        const auto seq = csi_sequence(draw_paths(s, rng), s, 1);
        energy += seq.slots[0].col(0).squaredNorm() / static_cast<double>(s.n_t());
        ++count;
    }
    CHECK(std::abs(energy / static_cast<double>(count) - 1.0) < 0.03);
}

TEST_CASE("single static path is constant over slots and subcarriers") {
    SceneConfig s;
    PathSet p;
    p.paths.push_back({Complex(0.3, -0.4), 0.0, 0.2, 0.1, 0.0});
    const auto seq = csi_sequence(p, s, 3);
    const ComplexVector expected = Complex(0.3, -0.4) * upa_steering(s.n_h, s.n_v, 0.2, 0.1);
    for (const auto& h : seq.slots) {
        for (int m = 0; m < s.subcarriers; ++m) CHECK((h.col(m) - expected).norm() < 1e-14);
    }
}

TEST_CASE("single Doppler path rotates by a fixed phase per slot") {
    SceneConfig s;
    PathSet p;
    const double nu = 123.0;
    p.paths.push_back({Complex(1.0, 0.0), 50e-9, 0.3, -0.1, nu});
    const auto seq = csi_sequence(p, s, 4);
    const Complex step = std::exp(Complex(0.0, 2.0 * M_PI * nu * s.slot_duration_s));
    for (int t = 1; t < 4; ++t) {
        for (int m = 0; m < s.subcarriers; ++m) {
            const Complex ratio = seq.slots[t](0, m) / seq.slots[t - 1](0, m);
            CHECK(std::abs(ratio - step) < 1e-12);
        }
    }
    // linear phase across subcarriers
    const Complex df = seq.slots[0](0, 1) / seq.slots[0](0, 0);
    for (int m = 2; m < s.subcarriers; ++m) CHECK(std::abs(seq.slots[0](0, m) / seq.slots[0](0, m - 1) - df) < 1e-12);
}

TEST_CASE("inter-slot correlation falls with speed") {
    CHECK(slot_correlation(10.0, 200) > slot_correlation(100.0, 200));
}

TEST_CASE("add_awgn at 0 dB doubles the energy") {
    SeededRng rng(2);
    const ComplexMatrix h = crandn(rng, 100, 100);
    SeededRng nr(3);
    const ComplexMatrix y = add_awgn(h, 0.0, nr);
    const double ratio = (y - h).squaredNorm() / h.squaredNorm();
    CHECK(std::abs(ratio - 1.0) < 0.05);
    SeededRng nr2(3);
    CHECK(add_awgn(h, 0.0, nr2) == y);
    CHECK(add_awgn(h, kNoiselessSnr, nr2) == h);
}

TEST_CASE("add_awgn rejects an all-zero channel") {
    SeededRng rng(4);
    CHECK(kind_of([&] { add_awgn(ComplexMatrix::Zero(2, 2), 10.0, rng); }) == ErrorKind::kInvalidInput);
}

TEST_CASE("dataset round trip is bit exact") {
    SceneConfig s;
    Dataset d;
    d.task = "cp";
    d.scene = s;
    d.users = 1;
    d.slots = 3;
    for (int i = 0; i < 10; ++i) {
        SeededRng rng(5, static_cast<std::uint64_t>(i));
        d.sequences.push_back(csi_sequence(draw_paths(s, rng), s, 3));
        d.tags.push_back({{"sample", i}});
    }
    const auto path = temp_file("roundtrip.bin");
    save_dataset(path, d);
    const Dataset e = load_dataset(path);
    REQUIRE(e.sequences.size() == 10u);
    for (std::size_t i = 0; i < 10; ++i) {
        for (int t = 0; t < 3; ++t) CHECK(e.sequences[i].slots[t] == d.sequences[i].slots[t]);
        CHECK(e.tags[i] == d.tags[i]);
    }
    const auto header = read_dataset_header(path);
    CHECK(header.at("K") == 1);
    CHECK(header.at("T") == 3);
    CHECK(header.at("N_T") == s.n_t());
    CHECK(header.at("M") == s.subcarriers);
    std::filesystem::remove(path);
}

TEST_CASE("dataset loader rejects bad magic and truncation") {
    SceneConfig s;
    Dataset d;
    d.task = "det";
    d.scene = s;
    d.users = 1;
    d.slots = 1;
    SeededRng rng(6);
    d.sequences.push_back(csi_sequence(draw_paths(s, rng), s, 1));
    d.tags.push_back(nlohmann::json::object());
    const auto path = temp_file("bad.bin");
    save_dataset(path, d);
    const auto size = std::filesystem::file_size(path);

    std::filesystem::resize_file(path, size - 8);
    CHECK(kind_of([&] { load_dataset(path); }) == ErrorKind::kCorruptFile);

    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("NOTPHYMT", 8);
    }
    CHECK(kind_of([&] { load_dataset(path); }) == ErrorKind::kFormat);
    std::filesystem::remove(path);
}

TEST_CASE("scene validation") {
    SceneConfig s;
    s.clusters = 0;
    CHECK(kind_of([&] { s.validate(); }) == ErrorKind::kValidation);
    SceneConfig t;
    t.subcarrier_spacing_hz = 0.0;
    CHECK(kind_of([&] { t.validate(); }) == ErrorKind::kValidation);
}
