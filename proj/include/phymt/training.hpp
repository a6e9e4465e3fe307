// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "phymt/channel_sim.hpp"
#include "phymt/detection.hpp"
#include "phymt/nn_core.hpp"
#include "phymt/precoding.hpp"
#include "phymt/prediction.hpp"

namespace phymt::train {

using nn::TaskId;

// ---- samples

struct CpItem {
    RealMatrix history;  // T1 x 2M, noisy
    RealMatrix future;   // T2 x 2M
    double velocity_kmh = 0.0;
    double snr_db = 0.0;
};

struct DetItem {
    ComplexMatrix h;             // N_T x K
    ComplexMatrix y;             // N_T x L0
    RealMatrix h_tokens;         // K x 2N_T
    RealMatrix y_tokens;         // L0 x 2N_T
    RealMatrix x_true;           // L0 x 2K, (Re x_1, Im x_1, ...)
    std::vector<int> indices;    // K * L0, column-major over slots
    double sigma2 = 0.0;
    double snr_db = 0.0;
};

struct PreItem {
    ComplexMatrix h;             // N_T x K
    RealMatrix h_tokens;         // K x 2N_T
    precoding::PowerParams label;
    double wmmse_rate = 0.0;
    double p_max = 0.0;
    double sigma2 = 1.0;
    bool label_ok = true;
};

struct DataConfig {
    chan::SceneConfig scene;
    int t1 = 16;
    int t2 = 4;
    int l0 = 8;
    int qam_order = 4;
    double p_max = 10.0;
    double sigma2 = 1.0;
    std::vector<double> cp_snr_db = {5.0, 10.0, 15.0, 20.0};
    std::vector<double> det_snr_db = {0.0, 5.0, 10.0, 15.0, 20.0};
    /// Empty: velocities uniform over the scene range. Otherwise drawn from the grid.
    std::vector<double> velocities_kmh;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

/// Channel realizations for one task. CP stores one sequence of T1 + T2 slots
/// per sample; DET and PRE store K single-slot sequences per sample
/// (consecutive groups of `users`).
chan::Dataset generate_channels(TaskId task, const DataConfig& cfg, int count, std::uint64_t seed);

std::vector<CpItem> make_cp_items(const chan::Dataset& d, const DataConfig& cfg, std::uint64_t seed);
std::vector<DetItem> make_det_items(const chan::Dataset& d, const DataConfig& cfg, std::uint64_t seed);
std::vector<PreItem> make_pre_items(const chan::Dataset& d, const DataConfig& cfg);

struct TaskData {
    std::vector<CpItem> cp;
    std::vector<DetItem> det;
    std::vector<PreItem> pre;

    std::size_t size(TaskId t) const;
};

// ---- losses

/// (1/2K)(||p - p_hat||^2 + ||lambda - lambda_hat||^2). Gradients are optional.
double loss_pre_supervised(const RealVector& lambda_hat, const RealVector& p_hat, const precoding::PowerParams& label,
                           RealVector* grad_lambda = nullptr, RealVector* grad_p = nullptr);

/// -sum_rate(structured_precoder(H, scale(positive))). `positive` is K x 2
/// (lambda, p) before budget scaling; the gradient w.r.t. it is by central
/// differences with step `step`.
double loss_pre_unsupervised(const RealMatrix& positive, const ComplexMatrix& h, double sigma2, double p_max,
                             RealMatrix* grad = nullptr, double step = 1e-5);

/// (1/2K)||X - X_hat||_F^2 averaged over slots; inputs are L x 2K.
double loss_det(const RealMatrix& x_hat, const RealMatrix& x_true, RealMatrix* grad = nullptr);

/// (1/2 M T2)||X - X_hat||_F^2 on T2 x 2M blocks.
double loss_cp(const RealMatrix& pred, const RealMatrix& truth, RealMatrix* grad = nullptr);

// ---- model

struct MultiTaskModel {
    nn::ModelConfig config;
    std::vector<nn::TaskSpec> registry;
    nn::PromptEmbedder prompt;
    nn::Backbone backbone;
    nn::EncoderCp enc_cp;
    nn::EncoderDet enc_det;
    nn::EncoderPre enc_pre;
    nn::DecoderCp dec_cp;
    nn::DecoderDet dec_det;
    nn::DecoderPre dec_pre;
    bool use_prompt = true;
    nn::QuantMode quant = nn::QuantMode::kNone;
    int lora_rank = 8;
    double lora_sigma = 0.02;
    double p_max = 10.0;
    double sigma2 = 1.0;

    MultiTaskModel() = default;
    MultiTaskModel(const nn::ModelConfig& config, std::uint64_t seed);

    const nn::TaskSpec& spec(TaskId t) const;
    /// Prompt table, adapters, and the task's own encoder and decoder.
    ParamList trainable(TaskId t);
    /// Every parameter except quantized base weights.
    ParamList all_params();

    /// Freezes the backbone, attaches adapters, then quantizes per `mode`.
    void prepare_finetune(nn::QuantMode mode, std::uint64_t seed);

    RealMatrix predict_cp(const RealMatrix& history) const;
    RealMatrix predict_det(const RealMatrix& h_tokens, const RealMatrix& y_tokens) const;
    nn::DecoderPre::Output predict_pre(const RealMatrix& h_tokens, double budget) const;

    /// Forward, loss and (when `backward`) gradient accumulation for one sample.
    double cp_sample(const CpItem& s, bool backward);
    double det_sample(const DetItem& s, bool backward);
    /// `supervised` selects the label loss; otherwise the negative sum rate.
    double pre_sample(const PreItem& s, bool supervised, bool backward);

    std::uint64_t backbone_fingerprint() const { return backbone.fingerprint(); }
    /// Packed 4-bit bytes over 2-byte float16 storage of the quantized matrices.
    double quantized_storage_ratio() const;

    void save(const std::filesystem::path& path) const;
    static MultiTaskModel load(const std::filesystem::path& path);

private:
    RealMatrix prompt_tokens(TaskId t) const;
    RealMatrix run_backbone(TaskId t, const RealMatrix& data, nn::Backbone::Cache* cache) const;
    /// Backpropagates dL/d(data outputs) through backbone and prompt; returns dL/d(data inputs).
    RealMatrix backward_backbone(TaskId t, const RealMatrix& d_out, Eigen::Index n_data, const nn::Backbone::Cache& cache);
};

/// Next-token regression on random AR(1) vector sequences; freezes nothing.
double pretrain_backbone(nn::Backbone& bb, int steps, std::uint64_t seed, double lr = 1e-2);

// ---- optimization

struct TrainConfig {
    int steps = 600;
    int batch = 16;
    double lr = 1e-3;
    double momentum = 0.9;
    double clip = 1.0;
    std::uint64_t seed = 1;
    std::array<double, 3> weights = {1.0 / 3, 1.0 / 3, 1.0 / 3};  // cp, det, pre
    /// Step at which precoding switches to the unsupervised loss; < 0 means 60% of steps.
    int switch_step = -1;
    int eval_every = 0;

    int resolved_switch() const { return switch_step < 0 ? (steps * 6) / 10 : switch_step; }
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Momentum gradient descent with global-norm clipping.
class Optimizer {
public:
    Optimizer(double lr, double momentum, double clip) : lr_(lr), momentum_(momentum), clip_(clip) {}
    /// Returns the pre-clip gradient norm.
    double step(const ParamList& params);

private:
    double lr_;
    double momentum_;
    double clip_;
    std::unordered_map<const Param*, RealMatrix> velocity_;
};

TaskId sample_task(SeededRng& rng, const std::array<double, 3>& weights);

struct MetricRow {
    int step = 0;
    std::string task;
    std::string metric;
    double value = 0.0;
    std::vector<std::pair<std::string, std::string>> tags;
};

class MetricLog {
public:
    void add(int step, const std::string& task, const std::string& metric, double value,
             std::vector<std::pair<std::string, std::string>> tags = {});
    void append(const MetricLog& other);
    const std::vector<MetricRow>& rows() const { return rows_; }
    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;

private:
    std::vector<MetricRow> rows_;
};

std::string format_value(double v);

/// One optimizer update on `batch` for `task`. Throws kNumericalFailure on a NaN loss.
double train_step(MultiTaskModel& model, Optimizer& opt, const TaskData& data, TaskId task,
                  const std::vector<std::size_t>& batch, bool pre_supervised, int step);

struct TrainResult {
    MetricLog log;
    std::map<TaskId, std::vector<double>> losses;   // per-task loss trace
    std::map<TaskId, std::vector<int>> loss_steps;  // global step of each entry
};

/// Runs `cfg.steps` updates. With `only`, every step uses that task.
TrainResult train(MultiTaskModel& model, const TaskData& data, const TrainConfig& cfg,
                  std::optional<TaskId> only = std::nullopt);

// ---- evaluation

using CpPredictor = std::function<RealMatrix(const CpItem&)>;
using DetPredictor = std::function<RealMatrix(const DetItem&)>;        // L0 x 2K
using PrePredictor = std::function<precoding::PrecoderSet(const PreItem&)>;

/// Per velocity (and SNR) cell: pooled NMSE in dB.
MetricLog evaluate_cp(const std::vector<CpItem>& items, const CpPredictor& f, const std::string& method);
/// Per SNR cell: NMSE in dB of the soft symbols and SER after hard decisions.
MetricLog evaluate_det(const std::vector<DetItem>& items, const DetPredictor& f, const detection::Constellation& c,
                       const std::string& method);
/// Mean sum rate and its ratio to the mean WMMSE rate of the same items.
MetricLog evaluate_pre(const std::vector<PreItem>& items, const PrePredictor& f, const std::string& method);

MetricLog evaluate(MultiTaskModel& model, TaskId task, const TaskData& test, const std::string& method = "model");

/// Pooled (not per-cell) task metrics: CP and DET NMSE in linear scale, PRE mean rate.
double overall_metric(MultiTaskModel& model, TaskId task, const TaskData& test);
/// Mean task loss over the test items (PRE uses the negative sum rate).
double mean_loss(MultiTaskModel& model, TaskId task, const TaskData& test);

struct TwoStageResult {
    MetricLog log;
    double stage1_rate = 0.0;   // held-out mean rate at the switch step
    double final_rate = 0.0;
    double wmmse_rate = 0.0;
};

/// PRE-only training: label loss until the switch step, negative sum rate after.
TwoStageResult run_two_stage_precoding(MultiTaskModel& model, const TaskData& train_data, const TaskData& test,
                                       const TrainConfig& cfg);

}  // namespace phymt::train
