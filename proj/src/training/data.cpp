// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <cmath>

#include "phymt/training.hpp"

namespace phymt::train {

void to_json(nlohmann::json& j, const DataConfig& c) {
    j = {{"scene", c.scene},
         {"t1", c.t1},
         {"t2", c.t2},
         {"l0", c.l0},
         {"qam_order", c.qam_order},
         {"p_max", c.p_max},
         {"sigma2", c.sigma2},
         {"cp_snr_db", c.cp_snr_db},
         {"det_snr_db", c.det_snr_db},
         {"velocities_kmh", c.velocities_kmh}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
    if (j.contains("scene")) c.scene = j.at("scene").get<chan::SceneConfig>();
    c.t1 = j.value("t1", c.t1);
    c.t2 = j.value("t2", c.t2);
    c.l0 = j.value("l0", c.l0);
    c.qam_order = j.value("qam_order", c.qam_order);
    c.p_max = j.value("p_max", c.p_max);
    c.sigma2 = j.value("sigma2", c.sigma2);
    c.cp_snr_db = j.value("cp_snr_db", c.cp_snr_db);
    c.det_snr_db = j.value("det_snr_db", c.det_snr_db);
    c.velocities_kmh = j.value("velocities_kmh", c.velocities_kmh);
}

std::size_t TaskData::size(TaskId t) const {
    switch (t) {
        case TaskId::kCp: return cp.size();
        case TaskId::kDet: return det.size();
        case TaskId::kPre: return pre.size();
    }
    return 0;
}

namespace {

template <typename T>
const T& pick(const std::vector<T>& grid, SeededRng& rng) {
    if (grid.empty()) fail(ErrorKind::kValidation, "empty grid");
    return grid[static_cast<std::size_t>(rng.below(grid.size()))];
}

ComplexMatrix sample_channel(const chan::Dataset& d, std::size_t sample) {
    const auto k = static_cast<std::size_t>(d.users);
    std::vector<chan::CsiSequence> group(d.sequences.begin() + static_cast<std::ptrdiff_t>(sample * k),
                                         d.sequences.begin() + static_cast<std::ptrdiff_t>((sample + 1) * k));
    return chan::stack_users(group, 0, d.scene.central_subcarrier());
}

std::size_t sample_count(const chan::Dataset& d, const char* task) {
    if (d.task != task) fail(ErrorKind::kValidation, std::string("dataset holds task '") + d.task + "', expected " + task);
    if (d.users < 1 || d.sequences.size() % static_cast<std::size_t>(d.users) != 0)
        fail(ErrorKind::kValidation, "dataset sequence count is not a multiple of the user count");
    return d.sequences.size() / static_cast<std::size_t>(d.users);
}

}  // namespace

chan::Dataset generate_channels(TaskId task, const DataConfig& cfg, int count, std::uint64_t seed) {
    cfg.scene.validate();
    if (count < 1) fail(ErrorKind::kValidation, "generate_channels: count must be >= 1");
    chan::Dataset d;
    d.task = nn::to_string(task);
    d.scene = cfg.scene;
    d.extra = {{"seed", seed}, {"data", cfg}};
    if (task == TaskId::kCp) {
        d.users = 1;
        d.slots = cfg.t1 + cfg.t2;
        for (int s = 0; s < count; ++s) {
            SeededRng rng(seed, static_cast<std::uint64_t>(s));
            chan::SceneConfig scene = cfg.scene;
            if (!cfg.velocities_kmh.empty()) {
                const double v = chan::kmh_to_mps(pick(cfg.velocities_kmh, rng));
                scene.velocity_min_mps = v;
                scene.velocity_max_mps = v;
            }
            const chan::PathSet paths = chan::draw_paths(scene, rng);
            d.sequences.push_back(chan::csi_sequence(paths, scene, d.slots, 0));
            d.tags.push_back({{"sample", s}, {"velocity_kmh", chan::mps_to_kmh(paths.velocity_mps)}});
        }
        return d;
    }
    d.users = cfg.scene.users;
    d.slots = 1;
    for (int s = 0; s < count; ++s) {
        for (int k = 0; k < d.users; ++k) {
            SeededRng rng(seed, static_cast<std::uint64_t>(s) * static_cast<std::uint64_t>(d.users) + static_cast<std::uint64_t>(k));
            const chan::PathSet paths = chan::draw_paths(cfg.scene, rng);
            d.sequences.push_back(chan::csi_sequence(paths, cfg.scene, 1, k));
            d.tags.push_back({{"sample", s}, {"user", k}});
        }
    }
    return d;
}

std::vector<CpItem> make_cp_items(const chan::Dataset& d, const DataConfig& cfg, std::uint64_t seed) {
    const std::size_t n = sample_count(d, "cp");
    if (d.slots < cfg.t1 + cfg.t2) fail(ErrorKind::kValidation, "cp dataset has fewer slots than T1 + T2");
    std::vector<CpItem> out;
    out.reserve(n);
    const int n_t = d.scene.n_t();
    for (std::size_t s = 0; s < n; ++s) {
        SeededRng rng(seed, s);
        const double snr = pick(cfg.cp_snr_db, rng);
        const double v_kmh = d.tags.empty() ? 0.0 : d.tags[s].value("velocity_kmh", 0.0);
        const auto sample = prediction::make_cp_sample(d.sequences[s], static_cast<int>(s % static_cast<std::size_t>(n_t)), cfg.t1,
                                                       cfg.t2, snr, chan::kmh_to_mps(v_kmh), rng);
        out.push_back({sample.history, sample.future, v_kmh, snr});
    }
    return out;
}

std::vector<DetItem> make_det_items(const chan::Dataset& d, const DataConfig& cfg, std::uint64_t seed) {
    const std::size_t n = sample_count(d, "det");
    const auto c = detection::Constellation::qam(cfg.qam_order);
    std::vector<DetItem> out;
    out.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        SeededRng rng(seed, s);
        const double snr = pick(cfg.det_snr_db, rng);
        const ComplexMatrix h = sample_channel(d, s);
        const auto ds = detection::make_detection_sample(h, cfg.l0, c, snr, rng);
        DetItem it;
        it.h = h;
        it.y = ds.y;
        it.h_tokens = nn::channel_tokens(h);
        it.y_tokens = nn::signal_tokens(ds.y);
        it.x_true.resize(cfg.l0, 2 * h.cols());
        for (int l = 0; l < cfg.l0; ++l) {
            for (Eigen::Index k = 0; k < h.cols(); ++k) {
                it.x_true(l, 2 * k) = ds.x(k, l).real();
                it.x_true(l, 2 * k + 1) = ds.x(k, l).imag();
            }
        }
        it.indices = ds.indices;
        it.sigma2 = ds.sigma2;
        it.snr_db = snr;
        out.push_back(std::move(it));
    }
    return out;
}

std::vector<PreItem> make_pre_items(const chan::Dataset& d, const DataConfig& cfg) {
    const std::size_t n = sample_count(d, "pre");
    std::vector<PreItem> out;
    out.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        PreItem it;
        it.h = sample_channel(d, s);
        it.h_tokens = nn::channel_tokens(it.h);
        it.p_max = cfg.p_max;
        it.sigma2 = cfg.sigma2;
        const auto w = precoding::wmmse_precoder(it.h, cfg.p_max, cfg.sigma2);
        const auto fit = precoding::fit_power_params(w.precoder, it.h, cfg.sigma2, cfg.p_max);
        it.label = fit.params;
        it.label_ok = fit.label_quality_ok;
        it.wmmse_rate = precoding::sum_rate(it.h, w.precoder, cfg.sigma2);
        out.push_back(std::move(it));
    }
    return out;
}

}  // namespace phymt::train
