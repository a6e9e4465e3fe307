// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "phymt/training.hpp"

namespace phymt::train {

void TrainConfig::validate() const {
    if (steps < 0 || batch < 1) fail(ErrorKind::kValidation, "train: steps must be >= 0 and batch >= 1");
    if (!(lr > 0.0) || momentum < 0.0 || momentum >= 1.0 || !(clip > 0.0)) fail(ErrorKind::kValidation, "train: bad optimizer settings");
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) fail(ErrorKind::kValidation, "train: negative task weight");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) fail(ErrorKind::kValidation, "train: task weights must sum to 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"steps", c.steps},   {"batch", c.batch},     {"lr", c.lr},
         {"momentum", c.momentum}, {"clip", c.clip},   {"seed", c.seed},
         {"weights", c.weights}, {"switch_step", c.switch_step}, {"eval_every", c.eval_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.clip = j.value("clip", c.clip);
    c.seed = j.value("seed", c.seed);
    c.weights = j.value("weights", c.weights);
    c.switch_step = j.value("switch_step", c.switch_step);
    c.eval_every = j.value("eval_every", c.eval_every);
}

double Optimizer::step(const ParamList& params) {
    double sq = 0.0;
    for (const Param* p : params) {
        if (p->trainable) sq += p->grad.squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) fail(ErrorKind::kNumericalFailure, "optimizer: non-finite gradient");
    const double scale = norm > clip_ ? clip_ / norm : 1.0;
    for (Param* p : params) {
        if (!p->trainable) continue;
        auto [it, fresh] = velocity_.try_emplace(p, RealMatrix::Zero(p->value.rows(), p->value.cols()));
        RealMatrix& v = it->second;
        v = momentum_ * v + scale * p->grad;
        p->value -= lr_ * v;
    }
    return norm;
}

TaskId sample_task(SeededRng& rng, const std::array<double, 3>& weights) {
    const double total = weights[0] + weights[1] + weights[2];
    if (!(total > 0.0)) fail(ErrorKind::kValidation, "sample_task: weights sum to zero");
    const double u = rng.uniform() * total;
    if (u < weights[0]) return TaskId::kCp;
    if (u < weights[0] + weights[1] || weights[2] == 0.0) return TaskId::kDet;
    return TaskId::kPre;
}

// ---- metric log

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void MetricLog::add(int step, const std::string& task, const std::string& metric, double value,
                    std::vector<std::pair<std::string, std::string>> tags) {
    rows_.push_back({step, task, metric, value, std::move(tags)});
}

void MetricLog::append(const MetricLog& other) { rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end()); }

std::string MetricLog::to_csv() const {
    std::ostringstream out;
    out << "step,task,metric,value,tags\n";
    for (const auto& r : rows_) {
        out << r.step << ',' << r.task << ',' << r.metric << ',' << format_value(r.value);
        for (const auto& [k, v] : r.tags) out << ',' << k << '=' << v;
        out << '\n';
    }
    return out.str();
}

void MetricLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail(ErrorKind::kIo, "cannot write " + path.string());
    f << to_csv();
}

// ---- training

double train_step(MultiTaskModel& model, Optimizer& opt, const TaskData& data, TaskId task,
                  const std::vector<std::size_t>& batch, bool pre_supervised, int step) {
    if (batch.empty()) fail(ErrorKind::kValidation, "train_step: empty batch");
    const ParamList params = model.trainable(task);
    zero_grads(params);
    double loss = 0.0;
    for (std::size_t i : batch) {
        switch (task) {
            case TaskId::kCp: loss += model.cp_sample(data.cp.at(i), true); break;
            case TaskId::kDet: loss += model.det_sample(data.det.at(i), true); break;
            case TaskId::kPre: loss += model.pre_sample(data.pre.at(i), pre_supervised, true); break;
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    loss *= inv;
    if (!std::isfinite(loss))
        fail(ErrorKind::kNumericalFailure, "train_step: non-finite loss at step " + std::to_string(step) + " task " + nn::to_string(task));
    for (Param* p : params) p->grad *= inv;
    opt.step(params);
    return loss;
}

namespace {

std::vector<std::size_t> draw_batch(SeededRng& rng, std::size_t n, int batch) {
    std::vector<std::size_t> out(static_cast<std::size_t>(batch));
    for (auto& i : out) i = static_cast<std::size_t>(rng.below(n));
    return out;
}

}  // namespace

TrainResult train(MultiTaskModel& model, const TaskData& data, const TrainConfig& cfg, std::optional<TaskId> only) {
    cfg.validate();
    for (TaskId t : nn::kAllTasks) {
        const bool needed = only ? *only == t : cfg.weights[static_cast<std::size_t>(t)] > 0.0;
        if (needed && data.size(t) == 0) fail(ErrorKind::kValidation, std::string("train: no samples for task ") + nn::to_string(t));
    }
    TrainResult res;
    Optimizer opt(cfg.lr, cfg.momentum, cfg.clip);
    SeededRng task_rng(cfg.seed, 1000);
    SeededRng batch_rng(cfg.seed, 2000);
    const int switch_at = cfg.resolved_switch();
    for (int step = 0; step < cfg.steps; ++step) {
        const TaskId t = only ? *only : sample_task(task_rng, cfg.weights);
        const auto batch = draw_batch(batch_rng, data.size(t), cfg.batch);
        const bool supervised = step < switch_at;
        const double loss = train_step(model, opt, data, t, batch, supervised, step);
        std::vector<std::pair<std::string, std::string>> tags;
        if (t == TaskId::kPre) tags.emplace_back("stage", supervised ? "supervised" : "unsupervised");
        res.log.add(step, nn::to_string(t), "loss", loss, std::move(tags));
        res.losses[t].push_back(loss);
        res.loss_steps[t].push_back(step);
    }
    return res;
}

// ---- evaluation

namespace {

template <typename Item, typename Key>
std::map<double, std::vector<const Item*>> group_by(const std::vector<Item>& items, Key key) {
    std::map<double, std::vector<const Item*>> out;
    for (const auto& it : items) out[key(it)].push_back(&it);
    return out;
}

double to_db(double num, double den) {
    if (!(den > 0.0)) fail(ErrorKind::kInvalidInput, "nmse: zero reference");
    if (num <= 0.0) return prediction::kNmseFloorDb;
    return std::max(prediction::kNmseFloorDb, 10.0 * std::log10(num / den));
}

}  // namespace

MetricLog evaluate_cp(const std::vector<CpItem>& items, const CpPredictor& f, const std::string& method) {
    if (items.empty()) fail(ErrorKind::kMissingData, "evaluate_cp: no items");
    std::vector<RealMatrix> preds;
    preds.reserve(items.size());
    for (const auto& it : items) preds.push_back(f(it));
    auto pooled = [&](const std::vector<const CpItem*>& cell) {
        double num = 0.0, den = 0.0;
        for (const CpItem* it : cell) {
            num += (preds[static_cast<std::size_t>(it - items.data())] - it->future).squaredNorm();
            den += it->future.squaredNorm();
        }
        return to_db(num, den);
    };
    MetricLog log;
    for (const auto& [v, cell] : group_by(items, [](const CpItem& i) { return i.velocity_kmh; }))
        log.add(0, "cp", "nmse_db", pooled(cell), {{"method", method}, {"velocity_kmh", format_value(v)}});
    for (const auto& [s, cell] : group_by(items, [](const CpItem& i) { return i.snr_db; }))
        log.add(0, "cp", "nmse_db", pooled(cell), {{"method", method}, {"snr_db", format_value(s)}});
    return log;
}

MetricLog evaluate_det(const std::vector<DetItem>& items, const DetPredictor& f, const detection::Constellation& c,
                       const std::string& method) {
    if (items.empty()) fail(ErrorKind::kMissingData, "evaluate_det: no items");
    MetricLog log;
    for (const auto& [snr, cell] : group_by(items, [](const DetItem& i) { return i.snr_db; })) {
        double num = 0.0, den = 0.0;
        std::size_t errors = 0, total = 0;
        for (const DetItem* it : cell) {
            const RealMatrix x_hat = f(*it);
            num += (x_hat - it->x_true).squaredNorm();
            den += it->x_true.squaredNorm();
            const Eigen::Index k = x_hat.cols() / 2;
            ComplexMatrix soft(k, x_hat.rows());
            for (Eigen::Index l = 0; l < x_hat.rows(); ++l)
                for (Eigen::Index u = 0; u < k; ++u) soft(u, l) = Complex(x_hat(l, 2 * u), x_hat(l, 2 * u + 1));
            const auto d = detection::hard_demod_ser(soft, it->indices, c);
            errors += static_cast<std::size_t>(std::lround(d.ser * static_cast<double>(it->indices.size())));
            total += it->indices.size();
        }
        const std::vector<std::pair<std::string, std::string>> tags = {{"method", method}, {"snr_db", format_value(snr)}};
        log.add(0, "det", "nmse_db", to_db(num, den), tags);
        log.add(0, "det", "ser", static_cast<double>(errors) / static_cast<double>(total), tags);
    }
    return log;
}

MetricLog evaluate_pre(const std::vector<PreItem>& items, const PrePredictor& f, const std::string& method) {
    if (items.empty()) fail(ErrorKind::kMissingData, "evaluate_pre: no items");
    MetricLog log;
    for (const auto& [p, cell] : group_by(items, [](const PreItem& i) { return i.p_max; })) {
        double rate = 0.0, ref = 0.0;
        for (const PreItem* it : cell) {
            rate += precoding::sum_rate(it->h, f(*it), it->sigma2);
            ref += it->wmmse_rate;
        }
        const auto n = static_cast<double>(cell.size());
        const std::vector<std::pair<std::string, std::string>> tags = {{"method", method},
                                                                       {"p_max_db", format_value(10.0 * std::log10(p))},
                                                                       {"users", std::to_string(cell.front()->h.cols())}};
        log.add(0, "pre", "sum_rate", rate / n, tags);
        log.add(0, "pre", "rate_ratio", rate / ref, tags);
    }
    return log;
}

MetricLog evaluate(MultiTaskModel& model, TaskId task, const TaskData& test, const std::string& method) {
    switch (task) {
        case TaskId::kCp:
            return evaluate_cp(test.cp, [&](const CpItem& i) { return model.predict_cp(i.history); }, method);
        case TaskId::kDet:
            return evaluate_det(test.det, [&](const DetItem& i) { return model.predict_det(i.h_tokens, i.y_tokens); },
                                detection::Constellation::qam(4), method);
        case TaskId::kPre:
            return evaluate_pre(
                test.pre,
                [&](const PreItem& i) {
                    return precoding::structured_precoder(i.h, model.predict_pre(i.h_tokens, i.p_max).params, i.sigma2);
                },
                method);
    }
    fail(ErrorKind::kValidation, "evaluate: unknown task");
}

double overall_metric(MultiTaskModel& model, TaskId task, const TaskData& test) {
    if (test.size(task) == 0) fail(ErrorKind::kMissingData, "overall_metric: no items");
    double num = 0.0, den = 0.0;
    switch (task) {
        case TaskId::kCp:
            for (const auto& i : test.cp) {
                num += (model.predict_cp(i.history) - i.future).squaredNorm();
                den += i.future.squaredNorm();
            }
            return num / den;
        case TaskId::kDet:
            for (const auto& i : test.det) {
                num += (model.predict_det(i.h_tokens, i.y_tokens) - i.x_true).squaredNorm();
                den += i.x_true.squaredNorm();
            }
            return num / den;
        case TaskId::kPre:
            for (const auto& i : test.pre) {
                const auto w = precoding::structured_precoder(i.h, model.predict_pre(i.h_tokens, i.p_max).params, i.sigma2);
                num += precoding::sum_rate(i.h, w, i.sigma2);
            }
            return num / static_cast<double>(test.pre.size());
    }
    return 0.0;
}

double mean_loss(MultiTaskModel& model, TaskId task, const TaskData& test) {
    if (test.size(task) == 0) fail(ErrorKind::kMissingData, "mean_loss: no items");
    double total = 0.0;
    switch (task) {
        case TaskId::kCp:
            for (const auto& i : test.cp) total += model.cp_sample(i, false);
            break;
        case TaskId::kDet:
            for (const auto& i : test.det) total += model.det_sample(i, false);
            break;
        case TaskId::kPre:
            for (const auto& i : test.pre) total += model.pre_sample(i, false, false);
            break;
    }
    return total / static_cast<double>(test.size(task));
}

TwoStageResult run_two_stage_precoding(MultiTaskModel& model, const TaskData& train_data, const TaskData& test,
                                       const TrainConfig& cfg) {
    cfg.validate();
    if (train_data.pre.empty() || test.pre.empty()) fail(ErrorKind::kMissingData, "two-stage precoding: no samples");
    TwoStageResult res;
    for (const auto& i : test.pre) res.wmmse_rate += i.wmmse_rate;
    res.wmmse_rate /= static_cast<double>(test.pre.size());

    Optimizer opt(cfg.lr, cfg.momentum, cfg.clip);
    SeededRng batch_rng(cfg.seed, 2000);
    const int switch_at = std::min(cfg.resolved_switch(), cfg.steps);
    for (int step = 0; step < cfg.steps; ++step) {
        if (step == switch_at) {
            res.stage1_rate = overall_metric(model, TaskId::kPre, test);
            res.log.add(step, "pre", "heldout_sum_rate", res.stage1_rate, {{"stage", "supervised_end"}});
        }
        const auto batch = draw_batch(batch_rng, train_data.pre.size(), cfg.batch);
        const bool supervised = step < switch_at;
        const double loss = train_step(model, opt, train_data, TaskId::kPre, batch, supervised, step);
        res.log.add(step, "pre", "loss", loss, {{"stage", supervised ? "supervised" : "unsupervised"}});
    }
    res.final_rate = overall_metric(model, TaskId::kPre, test);
    if (switch_at >= cfg.steps) res.stage1_rate = res.final_rate;
    res.log.add(cfg.steps, "pre", "heldout_sum_rate", res.final_rate, {{"stage", "final"}});
    res.log.add(cfg.steps, "pre", "rate_ratio", res.final_rate / res.wmmse_rate, {{"stage", "final"}});
    return res;
}

}  // namespace phymt::train
