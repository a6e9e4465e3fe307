// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"

#include "phymt/error.hpp"
#include "phymt/harness.hpp"

using namespace phymt;
using namespace phymt::harness;

namespace {

ExperimentConfig config_from(const std::string& path) {
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
    apply_seed_override(cfg);
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"phymt: multi-task physical-layer models at desk scale"};
    app.require_subcommand(1);

    std::string config_path;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "experiment config (JSON); defaults apply when omitted")->check(CLI::ExistingFile);
    };

    auto* gen = app.add_subcommand("gen-data", "generate train/test channel datasets");
    add_config(gen);
    std::string data_dir = "data";
    gen->add_option("-o,--out", data_dir, "output directory");

    auto* tr = app.add_subcommand("train", "fine-tune the multi-task model");
    add_config(tr);
    std::string tasks = "all", single, quant = "none", train_out = "run";
    bool no_prompt = false;
    tr->add_option("-d,--data", data_dir, "dataset directory written by gen-data");
    tr->add_option("-o,--out", train_out, "output directory");
    tr->add_option("--tasks", tasks, "all, or a comma list of cp,det,pre");
    tr->add_option("--single-task", single, "train a single-task model")->check(CLI::IsMember({"cp", "det", "pre"}));
    tr->add_option("--quantize", quant, "backbone quantization")->check(CLI::IsMember({"none", "nf4", "loftq"}));
    tr->add_flag("--no-prompt", no_prompt, "replace the task identifier embeddings by zeros");

    auto* ev = app.add_subcommand("eval", "sweep a checkpoint against the baselines");
    add_config(ev);
    std::string checkpoint, eval_out = "eval";
    ev->add_option("-m,--checkpoint", checkpoint, "model checkpoint")->required();
    ev->add_option("-d,--data", data_dir, "dataset directory written by gen-data");
    ev->add_option("-o,--out", eval_out, "output directory");

    auto* qd = app.add_subcommand("quantize-demo", "LoftQ initialization against plain NF4 on Gaussian matrices");
    QuantDemoConfig qc;
    std::string qd_out;
    qd->add_option("--rows", qc.rows);
    qd->add_option("--cols", qc.cols);
    qd->add_option("-r,--rank", qc.rank);
    qd->add_option("--bits", qc.bits);
    qd->add_option("--iters", qc.iters);
    qd->add_option("--seeds", qc.seeds);
    qd->add_option("--jobs", qc.jobs);
    qd->add_option("-o,--out", qd_out, "CSV path (stdout when omitted)");

    auto* be = app.add_subcommand("bench", "time the main kernels");
    int repeats = 5;
    be->add_option("-n,--repeats", repeats);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            const ExperimentConfig cfg = config_from(config_path);
            const DataSummary s = gen_data(cfg, data_dir);
            for (const auto& [file, n] : s.files) std::printf("%-28s %6d samples\n", file.c_str(), n);
        } else if (tr->parsed()) {
            const ExperimentConfig cfg = config_from(config_path);
            TrainOptions opt;
            opt.tasks = parse_tasks(tasks);
            if (!single.empty()) opt.single_task = nn::parse_task(single);
            opt.use_prompt = !no_prompt;
            opt.quant = nn::parse_quant_mode(quant);
            const TrainOutcome res = cmd_train(cfg, opt, data_dir, train_out);
            std::cout << res.summary.to_csv();
            if (opt.quant != nn::QuantMode::kNone)
                std::printf("quantized storage ratio vs float16: %.4f\n", res.model.quantized_storage_ratio());
        } else if (ev->parsed()) {
            const ExperimentConfig cfg = config_from(config_path);
            const EvalTables t = cmd_eval(checkpoint, cfg, data_dir, eval_out);
            for (const Table* tab : {&t.cp_velocity, &t.cp_snr, &t.det_snr, &t.pre_power, &t.pre_users}) std::cout << tab->to_csv() << "\n";
        } else if (qd->parsed()) {
            if (const char* s = std::getenv("PHYMT_SEED")) qc.seed = std::strtoull(s, nullptr, 10);
            const QuantDemoResult r = quantize_demo(qc);
            if (qd_out.empty()) {
                std::cout << r.trace.to_csv();
            } else {
                r.trace.write_csv(qd_out);
            }
            std::fprintf(stderr, "loftq beats nf4 on %d of %d seeds\n", r.wins, r.seeds);
        } else if (be->parsed()) {
            std::cout << bench(repeats).to_csv();
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
