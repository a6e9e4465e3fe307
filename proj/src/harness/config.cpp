// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "phymt/harness.hpp"

namespace phymt::harness {

void to_json(nlohmann::json& j, const SweepGrids& g) {
    j = {{"velocities_kmh", g.velocities_kmh}, {"powers_dbw", g.powers_dbw}, {"users", g.users}};
}

void from_json(const nlohmann::json& j, SweepGrids& g) {
    g.velocities_kmh = j.value("velocities_kmh", g.velocities_kmh);
    g.powers_dbw = j.value("powers_dbw", g.powers_dbw);
    g.users = j.value("users", g.users);
}

void ExperimentConfig::validate() const {
    data.scene.validate();
    model.validate();
    train.validate();
    if (sweep.velocities_kmh.empty() || sweep.powers_dbw.empty() || sweep.users.empty())
        fail(ErrorKind::kValidation, "config: sweep grids must be nonempty");
    if (data.cp_snr_db.empty() || data.det_snr_db.empty()) fail(ErrorKind::kValidation, "config: SNR grids must be nonempty");
    for (int k : sweep.users)
        if (k < 1) fail(ErrorKind::kValidation, "config: user counts must be >= 1");
    if (train_count < 1 || test_count < 1 || eval_count < 1) fail(ErrorKind::kValidation, "config: sample counts must be >= 1");
    if (pretrain_steps < 0) fail(ErrorKind::kValidation, "config: pretrain_steps must be >= 0");
    if (jobs < 1) fail(ErrorKind::kValidation, "config: jobs must be >= 1");
    if (model.n_t != data.scene.n_t()) fail(ErrorKind::kValidation, "config: model.n_t differs from the scene array size");
    if (model.users != data.scene.users) fail(ErrorKind::kValidation, "config: model.users differs from the scene");
    if (model.subcarriers != data.scene.subcarriers) fail(ErrorKind::kValidation, "config: model.subcarriers differs from the scene");
    if (model.t1 != data.t1 || model.t2 != data.t2 || model.l0 != data.l0)
        fail(ErrorKind::kValidation, "config: model t1/t2/l0 differ from the data config");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"data", c.data},
         {"model", c.model},
         {"train", c.train},
         {"sweep", c.sweep},
         {"train_count", c.train_count},
         {"test_count", c.test_count},
         {"eval_count", c.eval_count},
         {"pretrain_steps", c.pretrain_steps},
         {"pretrain_lr", c.pretrain_lr},
         {"lora_rank", c.lora_rank},
         {"seed", c.seed},
         {"jobs", c.jobs},
         {"out_dir", c.out_dir}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    if (j.contains("data")) c.data = j.at("data").get<train::DataConfig>();
    if (j.contains("model")) c.model = j.at("model").get<nn::ModelConfig>();
    if (j.contains("train")) c.train = j.at("train").get<train::TrainConfig>();
    if (j.contains("sweep")) c.sweep = j.at("sweep").get<SweepGrids>();
    c.train_count = j.value("train_count", c.train_count);
    c.test_count = j.value("test_count", c.test_count);
    c.eval_count = j.value("eval_count", c.eval_count);
    c.pretrain_steps = j.value("pretrain_steps", c.pretrain_steps);
    c.pretrain_lr = j.value("pretrain_lr", c.pretrain_lr);
    c.lora_rank = j.value("lora_rank", c.lora_rank);
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    c.out_dir = j.value("out_dir", c.out_dir);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorKind::kIo, "cannot open config " + path.string());
    try {
        return nlohmann::json::parse(is).get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kValidation, "config " + path.string() + ": " + e.what());
    }
}

void apply_seed_override(ExperimentConfig& c) {
    const char* s = std::getenv("PHYMT_SEED");
    if (s == nullptr || *s == '\0') return;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (*end != '\0') fail(ErrorKind::kValidation, std::string("PHYMT_SEED is not an integer: ") + s);
    c.seed = v;
    c.train.seed = v;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

int exit_code(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::kValidation:
        case ErrorKind::kInvalidInput:
        case ErrorKind::kShape:
        case ErrorKind::kInvalidRank:
            return 2;
        case ErrorKind::kNumericalFailure:
        case ErrorKind::kSingularSystem:
        case ErrorKind::kDegenerateOutput:
        case ErrorKind::kDegenerateStats:
            return 3;
        default:
            return 1;
    }
}

}  // namespace phymt::harness
