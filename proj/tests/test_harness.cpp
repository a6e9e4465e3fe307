// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "phymt/error.hpp"
#include "phymt/harness.hpp"

using namespace phymt;
using namespace phymt::harness;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny() {
    ExperimentConfig c;
    c.data.scene.n_h = 2;
    c.data.scene.n_v = 2;
    c.data.scene.users = 2;
    c.data.scene.subcarriers = 4;
    c.data.scene.clusters = 4;
    c.data.scene.paths_per_cluster = 5;
    c.data.t1 = 8;
    c.data.t2 = 2;
    c.data.l0 = 3;
    c.model.n_t = 4;
    c.model.users = 2;
    c.model.subcarriers = 4;
    c.model.t1 = 8;
    c.model.t2 = 2;
    c.model.l0 = 3;
    c.model.hidden = 24;
    c.model.encoder_blocks = 1;
    c.model.encoder_heads = 2;
    c.model.vocab = 512;
    c.model.backbone.d_model = 16;
    c.model.backbone.heads = 2;
    c.model.backbone.ffn = 32;
    c.model.backbone.max_positions = 32;
    c.train.steps = 12;
    c.train.batch = 2;
    c.sweep.users = {2, 3};
    c.train_count = 12;
    c.test_count = 16;
    c.eval_count = 6;
    c.pretrain_steps = 5;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("phymt_harness_" + name);
    fs::remove_all(p);
    return p;
}

std::string first_line(const std::string& csv) { return csv.substr(0, csv.find('\n')); }

int count_method(const Table& t, const std::string& m) {
    int n = 0;
    for (const auto& r : t.rows) n += r[0] == m;
    return n;
}

double cell(const Table& t, const std::string& method, const std::string& x, std::size_t col) {
    for (const auto& r : t.rows)
        if (r[0] == method && r[1] == x) return std::stod(r[col]);
    FAIL("no row " << method << " " << x);
    return 0.0;
}

}  // namespace

TEST_CASE("gen-data writes matching headers and is reproducible") {
    const ExperimentConfig c = tiny();
    const fs::path a = scratch("gen_a"), b = scratch("gen_b");
    const auto s = gen_data(c, a);
    gen_data(c, b);
    CHECK(s.files.size() == 6u + 1u + c.sweep.users.size());
    for (const auto& [file, n] : s.files) {
        CHECK(slurp(a / file) == slurp(b / file));
        const auto h = chan::read_dataset_header(a / file);
        CHECK(h.at("N_T").get<int>() == 4);
        CHECK(h.at("M").get<int>() == 4);
    }
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    const auto vel = chan::load_dataset(a / dataset_file(TaskId::kCp, "velocity_test"));
    for (const auto& t : vel.tags) {
        const double v = t.at("velocity_kmh").get<double>();
        CHECK((std::abs(v - 10) < 1e-9 || std::abs(v - 50) < 1e-9 || std::abs(v - 100) < 1e-9));
    }
    CHECK(chan::load_dataset(a / users_file(3)).users == 3);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("train, eval and their schemas") {
    ExperimentConfig c = tiny();
    const fs::path data = scratch("data"), run = scratch("run"), ev = scratch("eval"), run2 = scratch("run2");
    gen_data(c, data);
    TrainOptions opt;
    opt.quant = nn::QuantMode::kLoftq;
    const TrainOutcome r = cmd_train(c, opt, data, run);
    CHECK(r.model.quantized_storage_ratio() == 0.25);
    CHECK(first_line(slurp(run / "train_log.csv")) == "step,task,metric,value,tags");
    CHECK(first_line(slurp(run / "summary.csv")) == "task,metric,init,final");
    CHECK(r.summary.rows.size() == 6u);

    // identical reruns give identical bytes outside the sidecar
    cmd_train(c, opt, data, run2);
    for (const char* f : {"model.ckpt", "train_log.csv", "summary.csv", "config.json"}) CHECK(slurp(run / f) == slurp(run2 / f));

    const EvalTables t = cmd_eval(run / "model.ckpt", c, data, ev);
    CHECK(first_line(slurp(ev / "cp_velocity.csv")) == "method,velocity_kmh,nmse_db");
    CHECK(first_line(slurp(ev / "cp_snr.csv")) == "method,snr_db,nmse_db");
    CHECK(first_line(slurp(ev / "det_snr.csv")) == "method,snr_db,nmse_db,ser");
    CHECK(first_line(slurp(ev / "pre_power.csv")) == "method,p_max_dbw,sum_rate,rate_ratio");
    CHECK(first_line(slurp(ev / "pre_users.csv")) == "method,users,sum_rate,rate_ratio");
    for (const char* f : {"cp_velocity.svg", "cp_snr.svg", "det_snr.svg", "det_ser.svg", "pre_power.svg", "pre_users.svg"}) {
        const std::string svg = slurp(ev / f);
        CHECK(svg.rfind("<svg", 0) == 0);
        CHECK(svg.find("<!-- data") != std::string::npos);
    }
    CHECK(t.cp_velocity.rows.size() == c.sweep.velocities_kmh.size() * 2);
    CHECK(t.pre_power.rows.size() == c.sweep.powers_dbw.size() * 3);
    CHECK(count_method(t.pre_users, "wmmse") == 2);
    for (const auto& row : t.pre_power.rows)
        if (row[0] == "wmmse") CHECK(std::stod(row[3]) == doctest::Approx(1.0).epsilon(1e-12));
    for (const auto& row : t.det_snr.rows)
        if (row[0] == "ml") CHECK(std::stod(row[3]) <= cell(t.det_snr, "lmmse", row[1], 3));

    // single-task and prompt-free paths
    TrainOptions single;
    single.single_task = TaskId::kDet;
    single.use_prompt = false;
    const TrainOutcome s = cmd_train(c, single, data, run2);
    CHECK(s.summary.rows.size() == 2u);
    CHECK(s.result.losses.size() == 1u);
    CHECK(!s.model.use_prompt);

    // a config that no longer matches the stored data
    ExperimentConfig other = c;
    other.data.p_max = 3.0;
    try {
        cmd_train(other, opt, data, run2);
        FAIL("expected validation error");
    } catch (const Error& e) {
        CHECK(exit_code(e) == 2);
    }
    fs::remove(data / "cp_velocity_test.phymt");
    try {
        cmd_eval(run / "model.ckpt", c, data, ev);
        FAIL("expected missing data");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::kMissingData);
    }
    for (const auto& p : {data, run, ev, run2}) fs::remove_all(p);
}

TEST_CASE("quantize demo traces") {
    QuantDemoConfig q;
    q.rows = 32;
    q.cols = 24;
    q.rank = 4;
    q.seeds = 6;
    const auto r = quantize_demo(q);
    CHECK(r.trace.header == std::vector<std::string>{"seed", "iteration", "pre_svd", "post_svd", "best_so_far", "naive"});
    CHECK(r.trace.rows.size() == 30u);
    CHECK(r.wins == 6);
    for (std::size_t i = 1; i < r.trace.rows.size(); ++i) {
        if (r.trace.rows[i][0] != r.trace.rows[i - 1][0]) continue;
        CHECK(std::stod(r.trace.rows[i][4]) <= std::stod(r.trace.rows[i - 1][4]));
    }
    q.rank = 24;
    q.seeds = 2;
    for (const auto& row : quantize_demo(q).trace.rows)
        if (row[1] == "1") CHECK(std::stod(row[3]) < 1e-9);
    QuantDemoConfig par = q;
    par.jobs = 3;
    par.seeds = 5;
    q.seeds = 5;
    CHECK(quantize_demo(par).trace.to_csv() == quantize_demo(q).trace.to_csv());
}

TEST_CASE("config json round trip, validation and seed override") {
    ExperimentConfig c = tiny();
    const ExperimentConfig back = nlohmann::json(c).get<ExperimentConfig>();
    CHECK(nlohmann::json(back) == nlohmann::json(c));
    ExperimentConfig bad = c;
    bad.sweep.powers_dbw.clear();
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.model.n_t = 16;
    CHECK_THROWS_AS(bad.validate(), Error);
    setenv("PHYMT_SEED", "77", 1);
    apply_seed_override(c);
    unsetenv("PHYMT_SEED");
    CHECK(c.seed == 77u);
    CHECK(c.train.seed == 77u);
}

TEST_CASE("task lists and exit codes") {
    CHECK(parse_tasks("all").size() == 3u);
    CHECK(parse_tasks("pre,cp,pre") == std::vector<TaskId>{TaskId::kPre, TaskId::kCp});
    CHECK_THROWS_AS(parse_tasks("cp,xyz"), Error);
    CHECK(exit_code(Error(ErrorKind::kValidation, "x")) == 2);
    CHECK(exit_code(Error(ErrorKind::kNumericalFailure, "x")) == 3);
    CHECK(exit_code(Error(ErrorKind::kIo, "x")) == 1);
}

TEST_CASE("svg series and escaping") {
    Table t;
    t.header = {"method", "x", "y"};
    t.rows = {{"a<b", "1", "2"}, {"a<b", "2", "3"}, {"c", "1", "5"}};
    const auto s = table_series(t, "method", "x", "y");
    REQUIRE(s.size() == 2u);
    CHECK(s[0].y == std::vector<double>{2, 3});
    const std::string svg = render_svg("t", "x", "y", s);
    CHECK(svg.find("a&lt;b") != std::string::npos);
    CHECK(svg.find("a<b") == std::string::npos);
}
