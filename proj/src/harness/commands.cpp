// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include "phymt/harness.hpp"

namespace phymt::harness {

using train::CpItem;
using train::DetItem;
using train::MetricLog;
using train::MetricRow;
using train::PreItem;
using train::TaskData;

namespace {

// Split ids feed the channel seeds so every file draws independent channels.
constexpr int kSplitTrain = 0;
constexpr int kSplitTest = 1;
constexpr int kSplitVelocity = 2;
constexpr int kSplitUsers = 16;

constexpr int kArOrder = 2;

std::uint64_t channel_seed(std::uint64_t base, TaskId t, int split) {
    return base * 1000003ULL + 101ULL * static_cast<std::uint64_t>(split) + static_cast<std::uint64_t>(t) + 1;
}

std::uint64_t item_seed(std::uint64_t channel) { return channel ^ 0x9e3779b97f4a7c15ULL; }

int split_id(const std::string& split) {
    if (split == "train") return kSplitTrain;
    if (split == "test") return kSplitTest;
    if (split == "velocity_test") return kSplitVelocity;
    fail(ErrorKind::kValidation, "unknown split '" + split + "'");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::kIo, "cannot write " + path.string());
    os << text;
    if (!os) fail(ErrorKind::kIo, "write failed for " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

// Wall-clock data stays in this sidecar so the other outputs are reproducible.
void write_meta(const std::filesystem::path& dir, const std::string& command, nlohmann::json extra = {}) {
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    nlohmann::json j = {{"command", command}, {"written_at", stamp}};
    if (!extra.is_null()) j["details"] = std::move(extra);
    write_text(dir / "meta.json", j.dump(2) + "\n");
}

nlohmann::json read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream is(path);
    if (!is) fail(ErrorKind::kMissingData, "no manifest.json in " + dir.string() + " (run gen-data first)");
    return nlohmann::json::parse(is);
}

chan::Dataset load_checked(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(ErrorKind::kMissingData, "missing dataset " + path.string());
    return chan::load_dataset(path);
}

void check_scene(const chan::Dataset& d, const ExperimentConfig& cfg, const std::string& name, bool check_users) {
    if (d.scene.n_t() != cfg.model.n_t || d.scene.subcarriers != cfg.model.subcarriers)
        fail(ErrorKind::kValidation, name + ": array or subcarrier count differs from the model config");
    if (check_users && d.task != "cp" && d.users != cfg.model.users)
        fail(ErrorKind::kValidation, name + ": user count differs from the model config");
}

chan::Dataset head(const chan::Dataset& d, int samples) {
    const auto per = static_cast<std::size_t>(d.users);
    const std::size_t keep = std::min(d.sequences.size(), per * static_cast<std::size_t>(samples));
    chan::Dataset out = d;
    out.sequences.resize(keep);
    if (out.tags.size() > keep) out.tags.resize(keep);
    return out;
}

const std::string& tag(const MetricRow& r, const std::string& key) {
    for (const auto& [k, v] : r.tags)
        if (k == key) return v;
    fail(ErrorKind::kMissingData, "metric row lacks tag " + key);
}

bool has_tag(const MetricRow& r, const std::string& key) {
    for (const auto& kv : r.tags)
        if (kv.first == key) return true;
    return false;
}

// Rows with tag `x` become (method, x, value); two metrics can share one row.
void append_rows(Table& t, const MetricLog& log, const std::string& x, const std::vector<std::string>& metrics) {
    std::map<std::pair<std::string, std::string>, std::vector<std::string>> cells;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& r : log.rows()) {
        if (!has_tag(r, x)) continue;
        const auto it = std::find(metrics.begin(), metrics.end(), r.metric);
        if (it == metrics.end()) continue;
        const auto key = std::make_pair(tag(r, "method"), tag(r, x));
        auto [pos, fresh] = cells.try_emplace(key, std::vector<std::string>(metrics.size()));
        if (fresh) order.push_back(key);
        pos->second[static_cast<std::size_t>(it - metrics.begin())] = train::format_value(r.value);
    }
    for (const auto& key : order) {
        std::vector<std::string> row = {key.first, key.second};
        for (auto& v : cells[key]) row.push_back(v);
        t.rows.push_back(std::move(row));
    }
}

RealMatrix to_symbol_rows(const ComplexMatrix& x) {
    RealMatrix out(x.cols(), 2 * x.rows());
    for (Eigen::Index l = 0; l < x.cols(); ++l)
        for (Eigen::Index k = 0; k < x.rows(); ++k) {
            out(l, 2 * k) = x(k, l).real();
            out(l, 2 * k + 1) = x(k, l).imag();
        }
    return out;
}

MetricLog eval_pre_methods(train::MultiTaskModel* model, const std::vector<PreItem>& items) {
    MetricLog log;
    if (model != nullptr) {
        log.append(train::evaluate_pre(
            items,
            [&](const PreItem& i) {
                return precoding::structured_precoder(i.h, model->predict_pre(i.h_tokens, i.p_max).params, i.sigma2);
            },
            "model"));
    }
    log.append(train::evaluate_pre(items, [](const PreItem& i) { return precoding::zf_precoder(i.h, i.p_max, i.sigma2); }, "zf"));
    log.append(train::evaluate_pre(
        items, [](const PreItem& i) { return precoding::wmmse_precoder(i.h, i.p_max, i.sigma2).precoder; }, "wmmse"));
    return log;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::string dataset_file(TaskId task, const std::string& split) {
    return std::string(nn::to_string(task)) + "_" + split + ".phymt";
}

std::string users_file(int users) { return "pre_users_" + std::to_string(users) + ".phymt"; }

DataSummary gen_data(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
    cfg.validate();
    ensure_dir(dir);
    struct Job {
        std::string file;
        TaskId task;
        train::DataConfig data;
        int count;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (TaskId t : nn::kAllTasks) {
        jobs.push_back({dataset_file(t, "train"), t, cfg.data, cfg.train_count, channel_seed(cfg.seed, t, kSplitTrain)});
        jobs.push_back({dataset_file(t, "test"), t, cfg.data, cfg.test_count, channel_seed(cfg.seed, t, kSplitTest)});
    }
    train::DataConfig grid = cfg.data;
    grid.velocities_kmh = cfg.sweep.velocities_kmh;
    jobs.push_back({dataset_file(TaskId::kCp, "velocity_test"), TaskId::kCp, grid, cfg.test_count,
                    channel_seed(cfg.seed, TaskId::kCp, kSplitVelocity)});
    for (int k : cfg.sweep.users) {
        train::DataConfig dk = cfg.data;
        dk.scene.users = k;
        jobs.push_back({users_file(k), TaskId::kPre, dk, cfg.eval_count, channel_seed(cfg.seed, TaskId::kPre, kSplitUsers + k)});
    }
    parallel_for(jobs.size(), cfg.jobs, [&](std::size_t i) {
        const Job& j = jobs[i];
        chan::save_dataset(dir / j.file, train::generate_channels(j.task, j.data, j.count, j.seed));
    });
    DataSummary s;
    nlohmann::json files = nlohmann::json::array();
    for (const auto& j : jobs) {
        s.files.emplace_back(j.file, j.count);
        files.push_back({{"file", j.file}, {"task", nn::to_string(j.task)}, {"samples", j.count}, {"seed", j.seed}});
    }
    const nlohmann::json manifest = {{"seed", cfg.seed}, {"data", cfg.data}, {"sweep", cfg.sweep}, {"files", files}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    write_meta(dir, "gen-data");
    return s;
}

TaskData load_task_data(const ExperimentConfig& cfg, const std::filesystem::path& dir, const std::string& split,
                        const std::vector<TaskId>& tasks) {
    const nlohmann::json manifest = read_manifest(dir);
    if (manifest.at("data") != nlohmann::json(cfg.data))
        fail(ErrorKind::kValidation, "data config differs from the one recorded in " + (dir / "manifest.json").string());
    const auto base = manifest.at("seed").get<std::uint64_t>();
    const int sid = split_id(split);
    TaskData out;
    for (TaskId t : tasks) {
        const std::string name = dataset_file(t, split);
        const chan::Dataset d = load_checked(dir / name);
        check_scene(d, cfg, name, true);
        const std::uint64_t seed = item_seed(channel_seed(base, t, sid));
        switch (t) {
            case TaskId::kCp: out.cp = train::make_cp_items(d, cfg.data, seed); break;
            case TaskId::kDet: out.det = train::make_det_items(d, cfg.data, seed); break;
            case TaskId::kPre: out.pre = train::make_pre_items(d, cfg.data); break;
        }
    }
    return out;
}

std::vector<TaskId> parse_tasks(const std::string& s) {
    if (s == "all") return {nn::kAllTasks.begin(), nn::kAllTasks.end()};
    std::vector<TaskId> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const TaskId t = nn::parse_task(item);
        if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    }
    if (out.empty()) fail(ErrorKind::kValidation, "no tasks selected");
    return out;
}

train::MultiTaskModel build_model(const ExperimentConfig& cfg, const TrainOptions& opt, const nn::Backbone* pretrained) {
    train::MultiTaskModel m(cfg.model, cfg.seed);
    m.p_max = cfg.data.p_max;
    m.sigma2 = cfg.data.sigma2;
    m.lora_rank = cfg.lora_rank;
    m.use_prompt = opt.use_prompt;
    if (pretrained != nullptr) {
        m.backbone = *pretrained;
    } else if (cfg.pretrain_steps > 0) {
        train::pretrain_backbone(m.backbone, cfg.pretrain_steps, cfg.seed, cfg.pretrain_lr);
    }
    m.prepare_finetune(opt.quant, cfg.seed);
    return m;
}

TrainOutcome run_training(const ExperimentConfig& cfg, const TrainOptions& opt, const TaskData& train_data,
                          const TaskData& test_data, const nn::Backbone* pretrained) {
    const std::vector<TaskId> tasks = opt.single_task ? std::vector<TaskId>{*opt.single_task} : opt.tasks;
    train::TrainConfig tc = cfg.train;
    double total = 0.0;
    for (TaskId t : nn::kAllTasks) {
        const bool on = std::find(tasks.begin(), tasks.end(), t) != tasks.end();
        if (!on) tc.weights[static_cast<std::size_t>(t)] = 0.0;
        total += tc.weights[static_cast<std::size_t>(t)];
    }
    if (!(total > 0.0)) fail(ErrorKind::kValidation, "selected tasks all have zero weight");
    for (double& w : tc.weights) w /= total;

    TrainOutcome out{build_model(cfg, opt, pretrained), {}, {}};
    out.summary.header = {"task", "metric", "init", "final"};
    std::vector<std::array<double, 2>> init;
    for (TaskId t : tasks) {
        if (test_data.size(t) == 0) continue;
        init.push_back({train::overall_metric(out.model, t, test_data), train::mean_loss(out.model, t, test_data)});
    }
    out.result = train::train(out.model, train_data, tc, opt.single_task);
    std::size_t i = 0;
    for (TaskId t : tasks) {
        if (test_data.size(t) == 0) continue;
        const double metric = train::overall_metric(out.model, t, test_data);
        const double loss = train::mean_loss(out.model, t, test_data);
        const std::string name = nn::to_string(t);
        const std::string metric_name = t == TaskId::kPre ? "sum_rate" : "nmse";
        out.summary.rows.push_back({name, metric_name, train::format_value(init[i][0]), train::format_value(metric)});
        out.summary.rows.push_back({name, "loss", train::format_value(init[i][1]), train::format_value(loss)});
        out.result.log.add(tc.steps, name, "eval_" + metric_name, metric);
        out.result.log.add(tc.steps, name, "eval_loss", loss);
        ++i;
    }
    return out;
}

TrainOutcome cmd_train(const ExperimentConfig& cfg, const TrainOptions& opt, const std::filesystem::path& data_dir,
                       const std::filesystem::path& out) {
    cfg.validate();
    const std::vector<TaskId> tasks = opt.single_task ? std::vector<TaskId>{*opt.single_task} : opt.tasks;
    const TaskData tr = load_task_data(cfg, data_dir, "train", tasks);
    const TaskData te = load_task_data(cfg, data_dir, "test", tasks);
    TrainOutcome res = run_training(cfg, opt, tr, te);
    ensure_dir(out);
    res.model.save(out / "model.ckpt");
    res.result.log.write_csv(out / "train_log.csv");
    res.summary.write_csv(out / "summary.csv");
    write_text(out / "config.json", nlohmann::json(cfg).dump(2) + "\n");
    nlohmann::json flags = {{"use_prompt", opt.use_prompt}, {"quantize", nn::to_string(opt.quant)}};
    nlohmann::json names = nlohmann::json::array();
    for (TaskId t : tasks) names.push_back(nn::to_string(t));
    flags["tasks"] = names;
    flags["single_task"] = opt.single_task.has_value();
    write_meta(out, "train", flags);
    return res;
}

EvalTables run_eval(train::MultiTaskModel& model, const ExperimentConfig& cfg, const std::filesystem::path& data_dir) {
    const auto& mc = model.config;
    if (mc.n_t != cfg.model.n_t || mc.subcarriers != cfg.model.subcarriers || mc.t1 != cfg.data.t1 ||
        mc.t2 != cfg.data.t2 || mc.l0 != cfg.data.l0)
        fail(ErrorKind::kValidation, "checkpoint shapes differ from the config");
    EvalTables t;
    t.cp_velocity.header = {"method", "velocity_kmh", "nmse_db"};
    t.cp_snr.header = {"method", "snr_db", "nmse_db"};
    t.det_snr.header = {"method", "snr_db", "nmse_db", "ser"};
    t.pre_power.header = {"method", "p_max_dbw", "sum_rate", "rate_ratio"};
    t.pre_users.header = {"method", "users", "sum_rate", "rate_ratio"};

    const TaskData vel = load_task_data(cfg, data_dir, "velocity_test", {TaskId::kCp});
    const TaskData test = load_task_data(cfg, data_dir, "test", {TaskId::kCp, TaskId::kDet});
    const train::CpPredictor cp_model = [&](const CpItem& i) { return model.predict_cp(i.history); };
    const train::CpPredictor cp_ar = [&](const CpItem& i) { return prediction::ar_predict(i.history, std::min(kArOrder, cfg.data.t1 - 1), cfg.data.t2); };
    for (const auto& [name, f] : {std::pair{"model", cp_model}, std::pair{"ar", cp_ar}}) {
        append_rows(t.cp_velocity, train::evaluate_cp(vel.cp, f, name), "velocity_kmh", {"nmse_db"});
        append_rows(t.cp_snr, train::evaluate_cp(test.cp, f, name), "snr_db", {"nmse_db"});
    }

    const auto c = detection::Constellation::qam(cfg.data.qam_order);
    const train::DetPredictor det_model = [&](const DetItem& i) { return model.predict_det(i.h_tokens, i.y_tokens); };
    const train::DetPredictor det_lmmse = [](const DetItem& i) {
        return to_symbol_rows(detection::lmmse_detect(i.h, i.y, i.sigma2));
    };
    const train::DetPredictor det_ml = [&](const DetItem& i) {
        ComplexMatrix x(i.h.cols(), i.y.cols());
        for (Eigen::Index l = 0; l < i.y.cols(); ++l) x.col(l) = detection::qam_modulate(detection::ml_detect(i.h, i.y.col(l), c), c);
        return to_symbol_rows(x);
    };
    for (const auto& [name, f] : {std::pair{"model", det_model}, std::pair{"lmmse", det_lmmse}, std::pair{"ml", det_ml}})
        append_rows(t.det_snr, train::evaluate_det(test.det, f, c, name), "snr_db", {"nmse_db", "ser"});

    const chan::Dataset pre = head(load_checked(data_dir / dataset_file(TaskId::kPre, "test")), cfg.eval_count);
    check_scene(pre, cfg, "pre test", true);
    std::vector<MetricLog> power_logs(cfg.sweep.powers_dbw.size());
    parallel_for(power_logs.size(), cfg.jobs, [&](std::size_t i) {
        train::DataConfig dc = cfg.data;
        dc.p_max = std::pow(10.0, cfg.sweep.powers_dbw[i] / 10.0);
        power_logs[i] = eval_pre_methods(&model, train::make_pre_items(pre, dc));
    });
    for (std::size_t i = 0; i < power_logs.size(); ++i) {
        MetricLog relabeled;
        for (MetricRow r : power_logs[i].rows()) {
            r.tags.emplace_back("p_max_dbw", train::format_value(cfg.sweep.powers_dbw[i]));
            relabeled.add(r.step, r.task, r.metric, r.value, r.tags);
        }
        append_rows(t.pre_power, relabeled, "p_max_dbw", {"sum_rate", "rate_ratio"});
    }

    for (int k : cfg.sweep.users) {
        const chan::Dataset d = head(load_checked(data_dir / users_file(k)), cfg.eval_count);
        check_scene(d, cfg, users_file(k), false);
        if (d.users != k) fail(ErrorKind::kValidation, users_file(k) + ": stored user count differs");
        append_rows(t.pre_users, eval_pre_methods(&model, train::make_pre_items(d, cfg.data)), "users", {"sum_rate", "rate_ratio"});
    }
    return t;
}

EvalTables cmd_eval(const std::filesystem::path& checkpoint, const ExperimentConfig& cfg,
                    const std::filesystem::path& data_dir, const std::filesystem::path& out) {
    cfg.validate();
    if (!std::filesystem::exists(checkpoint)) fail(ErrorKind::kMissingData, "missing checkpoint " + checkpoint.string());
    train::MultiTaskModel model = train::MultiTaskModel::load(checkpoint);
    EvalTables t = run_eval(model, cfg, data_dir);
    ensure_dir(out);
    struct Figure {
        const Table* table;
        const char* name;
        const char* title;
        const char* x;
        const char* y;
        const char* x_label;
        const char* y_label;
    };
    const Figure figures[] = {
        {&t.cp_velocity, "cp_velocity", "Channel prediction vs speed", "velocity_kmh", "nmse_db", "speed (km/h)", "NMSE (dB)"},
        {&t.cp_snr, "cp_snr", "Channel prediction vs SNR", "snr_db", "nmse_db", "SNR (dB)", "NMSE (dB)"},
        {&t.det_snr, "det_snr", "Detection NMSE vs SNR", "snr_db", "nmse_db", "SNR (dB)", "NMSE (dB)"},
        {&t.det_snr, "det_ser", "Detection SER vs SNR", "snr_db", "ser", "SNR (dB)", "SER"},
        {&t.pre_power, "pre_power", "Sum rate vs transmit power", "p_max_dbw", "sum_rate", "power (dBW)", "sum rate (bit/s/Hz)"},
        {&t.pre_users, "pre_users", "Sum rate vs users", "users", "sum_rate", "users", "sum rate (bit/s/Hz)"},
    };
    for (const auto& f : figures) {
        if (std::string(f.name) != "det_ser") f.table->write_csv(out / (std::string(f.name) + ".csv"));
        write_text(out / (std::string(f.name) + ".svg"),
                   render_svg(f.title, f.x_label, f.y_label, table_series(*f.table, "method", f.x, f.y)));
    }
    write_meta(out, "eval", {{"checkpoint", checkpoint.string()}});
    return t;
}

QuantDemoResult quantize_demo(const QuantDemoConfig& c) {
    if (c.rows < 1 || c.cols < 1 || c.seeds < 1 || c.iters < 1) fail(ErrorKind::kValidation, "quantize-demo: sizes must be >= 1");
    std::vector<lora::LoftqResult> runs(static_cast<std::size_t>(c.seeds));
    parallel_for(runs.size(), c.jobs, [&](std::size_t s) {
        SeededRng rng(c.seed, s);
        runs[s] = lora::loftq_init(randn(rng, c.rows, c.cols), c.rank, c.bits, c.iters);
    });
    QuantDemoResult out;
    out.trace.header = {"seed", "iteration", "pre_svd", "post_svd", "best_so_far", "naive"};
    out.seeds = c.seeds;
    for (std::size_t s = 0; s < runs.size(); ++s) {
        const auto& r = runs[s];
        double best = 1e300;
        for (std::size_t i = 0; i < r.post_svd.size(); ++i) {
            best = std::min(best, r.post_svd[i]);
            out.trace.rows.push_back({std::to_string(s), std::to_string(i + 1), train::format_value(r.pre_svd[i]),
                                      train::format_value(r.post_svd[i]), train::format_value(best),
                                      train::format_value(r.naive_error)});
        }
        if (r.error < r.naive_error) ++out.wins;
    }
    return out;
}

Table bench(int repeats) {
    if (repeats < 1) fail(ErrorKind::kValidation, "bench: repeats must be >= 1");
    Table t;
    t.header = {"name", "repeats", "mean_ms"};
    auto time = [&](const std::string& name, const std::function<void()>& fn) {
        fn();
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < repeats; ++i) fn();
        t.rows.push_back({name, std::to_string(repeats), train::format_value(1e3 * seconds_since(t0) / repeats)});
    };
    SeededRng rng(1);
    const ComplexMatrix m64 = crandn(rng, 64, 64);
    const ComplexMatrix h = crandn(rng, 16, 4);
    const RealMatrix w = randn(rng, 64, 64);
    const auto c4 = detection::Constellation::qam(4);
    const ComplexMatrix y = crandn(rng, 16, 8);
    time("svd_complex_64x64", [&] { svd(m64); });
    time("wmmse_16x4", [&] { precoding::wmmse_precoder(h, 10.0, 1.0); });
    time("fit_power_params_16x4", [&] {
        precoding::fit_power_params(precoding::wmmse_precoder(h, 10.0, 1.0).precoder, h, 1.0, 10.0);
    });
    time("loftq_64x64_r8", [&] { lora::loftq_init(w, 8); });
    time("lmmse_16x4_l8", [&] { detection::lmmse_detect(h, y, 0.1); });
    time("ml_16x4_qpsk", [&] { detection::ml_detect(h, y.col(0), c4); });

    ExperimentConfig cfg;
    cfg.train_count = 32;
    train::DataConfig dc = cfg.data;
    TaskData d;
    d.cp = train::make_cp_items(train::generate_channels(TaskId::kCp, dc, 32, 1), dc, 2);
    d.det = train::make_det_items(train::generate_channels(TaskId::kDet, dc, 32, 3), dc, 4);
    d.pre = train::make_pre_items(train::generate_channels(TaskId::kPre, dc, 32, 5), dc);
    train::MultiTaskModel model(cfg.model, 1);
    model.prepare_finetune(nn::QuantMode::kNf4, 1);
    train::Optimizer opt(1e-3, 0.9, 1.0);
    std::vector<std::size_t> batch(static_cast<std::size_t>(cfg.train.batch));
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;
    int step = 0;
    for (TaskId task : nn::kAllTasks) {
        time(std::string("train_step_") + nn::to_string(task) + "_b" + std::to_string(batch.size()),
             [&] { train::train_step(model, opt, d, task, batch, true, step++); });
    }
    return t;
}

}  // namespace phymt::harness
