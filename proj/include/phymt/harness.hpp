// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "phymt/training.hpp"

namespace phymt::harness {

using nn::TaskId;

struct SweepGrids {
    std::vector<double> velocities_kmh = {10.0, 50.0, 100.0};
    std::vector<double> powers_dbw = {-10.0, -5.0, 0.0, 5.0, 10.0};
    std::vector<int> users = {4, 6, 8};
};

void to_json(nlohmann::json& j, const SweepGrids& g);
void from_json(const nlohmann::json& j, SweepGrids& g);

struct ExperimentConfig {
    train::DataConfig data;
    nn::ModelConfig model;
    train::TrainConfig train;
    SweepGrids sweep;
    int train_count = 2000;
    int test_count = 500;
    /// Test items per sweep cell for the precoding power and user sweeps.
    int eval_count = 200;
    int pretrain_steps = 1000;
    double pretrain_lr = 1e-2;
    int lora_rank = 8;
    std::uint64_t seed = 1;
    int jobs = 1;
    std::string out_dir = "out";

    /// Grids nonempty, counts positive, model shapes agree with the scene.
    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_config(const std::filesystem::path& path);
/// PHYMT_SEED, when set, replaces both the experiment and the training seed.
void apply_seed_override(ExperimentConfig& c);

/// Runs fn(0) .. fn(n-1) on at most `jobs` threads. Results must be written
/// by index so the output does not depend on scheduling.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

// ---- tables and plots

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
};

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Self-contained SVG line plot; the data points are repeated in a comment.
std::string render_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series);

/// One series per distinct value of `method_col`, using `x_col` and `y_col`.
std::vector<Series> table_series(const Table& t, const std::string& method_col, const std::string& x_col,
                                 const std::string& y_col);

// ---- data

/// File names inside a data directory.
std::string dataset_file(TaskId task, const std::string& split);
std::string users_file(int users);

struct DataSummary {
    std::vector<std::pair<std::string, int>> files;  // file name, sample count
};

/// Writes train/test channel datasets per task, the CP velocity-grid test set,
/// one precoding test set per user count, and manifest.json.
DataSummary gen_data(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Loads a split and turns it into task items; checks the stored header against `cfg`.
train::TaskData load_task_data(const ExperimentConfig& cfg, const std::filesystem::path& dir, const std::string& split,
                               const std::vector<TaskId>& tasks);

// ---- training

struct TrainOptions {
    std::vector<TaskId> tasks = {TaskId::kCp, TaskId::kDet, TaskId::kPre};
    std::optional<TaskId> single_task;
    bool use_prompt = true;
    nn::QuantMode quant = nn::QuantMode::kNone;
};

std::vector<TaskId> parse_tasks(const std::string& s);

/// Fresh model from the config seed with a pretrained backbone (or a copy of
/// `pretrained` when given), prepared for fine-tuning.
train::MultiTaskModel build_model(const ExperimentConfig& cfg, const TrainOptions& opt,
                                  const nn::Backbone* pretrained = nullptr);

struct TrainOutcome {
    train::MultiTaskModel model;
    train::TrainResult result;
    Table summary;  // task, metric, init, final
};

TrainOutcome run_training(const ExperimentConfig& cfg, const TrainOptions& opt, const train::TaskData& train_data,
                          const train::TaskData& test_data, const nn::Backbone* pretrained = nullptr);

/// Loads data from `data_dir`, trains, and writes model.ckpt, train_log.csv,
/// summary.csv, config.json and the meta.json sidecar into `out`.
TrainOutcome cmd_train(const ExperimentConfig& cfg, const TrainOptions& opt, const std::filesystem::path& data_dir,
                       const std::filesystem::path& out);

// ---- evaluation

struct EvalTables {
    Table cp_velocity;
    Table cp_snr;
    Table det_snr;
    Table pre_power;
    Table pre_users;
};

EvalTables run_eval(train::MultiTaskModel& model, const ExperimentConfig& cfg, const std::filesystem::path& data_dir);

/// Writes one CSV and one SVG per table.
EvalTables cmd_eval(const std::filesystem::path& checkpoint, const ExperimentConfig& cfg,
                    const std::filesystem::path& data_dir, const std::filesystem::path& out);

// ---- quantization demo

struct QuantDemoConfig {
    int rows = 64;
    int cols = 64;
    int rank = 8;
    int bits = 4;
    int iters = 5;
    int seeds = 100;
    std::uint64_t seed = 1;
    int jobs = 1;
};

struct QuantDemoResult {
    Table trace;  // seed, iteration, pre_svd, post_svd, best_so_far, naive
    int wins = 0;
    int seeds = 0;
};

QuantDemoResult quantize_demo(const QuantDemoConfig& c);

// ---- bench

Table bench(int repeats);

/// Exit status for an exception escaping a command: 2 validation, 3 numerical, 1 otherwise.
int exit_code(const Error& e);

}  // namespace phymt::harness
