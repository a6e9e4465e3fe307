// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <cmath>

#include "phymt/training.hpp"

namespace phymt::train {

// ---- losses

double loss_pre_supervised(const RealVector& lambda_hat, const RealVector& p_hat, const precoding::PowerParams& label,
                           RealVector* grad_lambda, RealVector* grad_p) {
    if (lambda_hat.size() != label.lambda.size() || p_hat.size() != label.p.size())
        fail(ErrorKind::kShape, "loss_pre_supervised: length mismatch");
    const auto k = static_cast<double>(lambda_hat.size());
    const RealVector el = lambda_hat - label.lambda;
    const RealVector ep = p_hat - label.p;
    if (grad_lambda) *grad_lambda = el / k;
    if (grad_p) *grad_p = ep / k;
    return (ep.squaredNorm() + el.squaredNorm()) / (2.0 * k);
}

namespace {

double negative_rate(const RealMatrix& positive, const ComplexMatrix& h, double sigma2, double p_max) {
    const auto params = precoding::scale_to_budget(positive.col(0), positive.col(1), p_max);
    return -precoding::sum_rate(h, precoding::structured_precoder(h, params, sigma2), sigma2);
}

}  // namespace

double loss_pre_unsupervised(const RealMatrix& positive, const ComplexMatrix& h, double sigma2, double p_max,
                             RealMatrix* grad, double step) {
    if (positive.rows() != h.cols() || positive.cols() != 2) fail(ErrorKind::kShape, "loss_pre_unsupervised: output shape");
    const double loss = negative_rate(positive, h, sigma2, p_max);
    if (grad) {
        grad->resize(positive.rows(), 2);
        RealMatrix probe = positive;
        for (Eigen::Index i = 0; i < probe.size(); ++i) {
            const double saved = probe.data()[i];
            // Keep the probe nonnegative; the one-sided case only arises at exact zeros.
            const double lo = std::max(0.0, saved - step);
            probe.data()[i] = saved + step;
            const double up = negative_rate(probe, h, sigma2, p_max);
            probe.data()[i] = lo;
            const double down = negative_rate(probe, h, sigma2, p_max);
            probe.data()[i] = saved;
            grad->data()[i] = (up - down) / (saved + step - lo);
        }
    }
    return loss;
}

double loss_det(const RealMatrix& x_hat, const RealMatrix& x_true, RealMatrix* grad) {
    if (x_hat.rows() != x_true.rows() || x_hat.cols() != x_true.cols()) fail(ErrorKind::kShape, "loss_det: shape mismatch");
    const double k = static_cast<double>(x_hat.cols()) / 2.0;
    const auto slots = static_cast<double>(x_hat.rows());
    const RealMatrix e = x_hat - x_true;
    if (grad) *grad = e / (k * slots);
    return e.squaredNorm() / (2.0 * k * slots);
}

double loss_cp(const RealMatrix& pred, const RealMatrix& truth, RealMatrix* grad) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) fail(ErrorKind::kShape, "loss_cp: shape mismatch");
    const auto n = static_cast<double>(pred.size());  // 2 M T2
    const RealMatrix e = pred - truth;
    if (grad) *grad = e * (2.0 / n);
    return e.squaredNorm() / n;
}

// ---- model

MultiTaskModel::MultiTaskModel(const nn::ModelConfig& c, std::uint64_t seed) : config(c) {
    config.validate();
    const SeededRng root(seed, 0);
    registry = nn::default_registry(c.vocab);
    SeededRng r1 = root.split(1), r2 = root.split(2), r3 = root.split(3), r4 = root.split(4), r5 = root.split(5),
              r6 = root.split(6), r7 = root.split(7), r8 = root.split(8);
    prompt = nn::PromptEmbedder(c.vocab, c.d_model(), r1);
    backbone = nn::Backbone(c.backbone, r2);
    enc_cp = nn::EncoderCp(c, r3);
    enc_det = nn::EncoderDet(c, r4);
    enc_pre = nn::EncoderPre(c, r5);
    dec_cp = nn::DecoderCp(c, r6);
    dec_det = nn::DecoderDet(c, r7);
    dec_pre = nn::DecoderPre(c, r8);
    for (const auto& t : registry) {
        if (static_cast<int>(t.tokens.size()) + c.l0 + 1 > c.backbone.max_positions)
            fail(ErrorKind::kValidation, "model: prompt plus data tokens exceed max_positions");
    }
}

const nn::TaskSpec& MultiTaskModel::spec(TaskId t) const {
    for (const auto& s : registry) {
        if (s.task == t) return s;
    }
    fail(ErrorKind::kValidation, std::string("task not registered: ") + nn::to_string(t));
}

ParamList MultiTaskModel::trainable(TaskId t) {
    ParamList all;
    if (use_prompt) prompt.collect(all);
    backbone.collect_adapters(all);
    switch (t) {
        case TaskId::kCp:
            enc_cp.collect(all);
            dec_cp.collect(all);
            break;
        case TaskId::kDet:
            enc_det.collect(all);
            dec_det.collect(all);
            break;
        case TaskId::kPre:
            enc_pre.collect(all);
            dec_pre.collect(all);
            break;
    }
    ParamList out;
    for (Param* p : all) {
        if (p->trainable) out.push_back(p);
    }
    return out;
}

ParamList MultiTaskModel::all_params() {
    ParamList out;
    prompt.collect(out);
    ParamList bb;
    backbone.collect(bb);
    for (Param* p : bb) {
        bool quantized = false;
        for (nn::Linear* l : backbone.linears()) quantized = quantized || (l->quant && &l->weight == p);
        if (!quantized) out.push_back(p);
    }
    backbone.collect_adapters(out);
    enc_cp.collect(out);
    enc_det.collect(out);
    enc_pre.collect(out);
    dec_cp.collect(out);
    dec_det.collect(out);
    dec_pre.collect(out);
    return out;
}

void MultiTaskModel::prepare_finetune(nn::QuantMode mode, std::uint64_t seed) {
    backbone.freeze();
    SeededRng rng(seed, 0x10a);
    backbone.attach_adapters(lora_rank, lora_sigma, rng);
    backbone.quantize(mode);
    quant = mode;
}

RealMatrix MultiTaskModel::prompt_tokens(TaskId t) const {
    const auto& ids = spec(t).tokens;
    if (use_prompt) return prompt.forward(ids);
    return RealMatrix::Zero(static_cast<Eigen::Index>(ids.size()), config.d_model());
}

RealMatrix MultiTaskModel::run_backbone(TaskId t, const RealMatrix& data, nn::Backbone::Cache* cache) const {
    const RealMatrix p = prompt_tokens(t);
    RealMatrix x(p.rows() + data.rows(), data.cols());
    x.topRows(p.rows()) = p;
    x.bottomRows(data.rows()) = data;
    const RealMatrix out = backbone.forward(x, cache);
    return out.bottomRows(data.rows());
}

RealMatrix MultiTaskModel::backward_backbone(TaskId t, const RealMatrix& d_out, Eigen::Index n_data,
                                             const nn::Backbone::Cache& cache) {
    const auto& ids = spec(t).tokens;
    const auto n_prompt = static_cast<Eigen::Index>(ids.size());
    RealMatrix d = RealMatrix::Zero(n_prompt + n_data, d_out.cols());
    d.bottomRows(n_data) = d_out;
    const RealMatrix dx = backbone.backward(d, cache);
    if (use_prompt) prompt.backward(ids, dx.topRows(n_prompt));
    return dx.bottomRows(n_data);
}

RealMatrix MultiTaskModel::predict_cp(const RealMatrix& history) const {
    const auto enc = enc_cp.forward(history, nullptr);
    return dec_cp.forward(run_backbone(TaskId::kCp, enc.tokens, nullptr), enc.stats, nullptr);
}

RealMatrix MultiTaskModel::predict_det(const RealMatrix& h_tokens, const RealMatrix& y_tokens) const {
    return dec_det.forward(run_backbone(TaskId::kDet, enc_det.forward(h_tokens, y_tokens, nullptr), nullptr), nullptr);
}

nn::DecoderPre::Output MultiTaskModel::predict_pre(const RealMatrix& h_tokens, double budget) const {
    return dec_pre.forward(run_backbone(TaskId::kPre, enc_pre.forward(h_tokens, nullptr), nullptr), budget, nullptr);
}

double MultiTaskModel::cp_sample(const CpItem& s, bool backward) {
    nn::EncoderCp::Cache ce;
    nn::Backbone::Cache cb;
    nn::DecoderCp::Cache cd;
    const auto enc = enc_cp.forward(s.history, backward ? &ce : nullptr);
    const RealMatrix xo = run_backbone(TaskId::kCp, enc.tokens, backward ? &cb : nullptr);
    const RealMatrix pred = dec_cp.forward(xo, enc.stats, backward ? &cd : nullptr);
    RealMatrix g;
    const double loss = loss_cp(pred, s.future, backward ? &g : nullptr);
    if (backward) {
        const RealMatrix dxo = dec_cp.backward(g, cd);
        enc_cp.backward(backward_backbone(TaskId::kCp, dxo, enc.tokens.rows(), cb), ce);
    }
    return loss;
}

double MultiTaskModel::det_sample(const DetItem& s, bool backward) {
    nn::EncoderDet::Cache ce;
    nn::Backbone::Cache cb;
    nn::DecoderDet::Cache cd;
    const RealMatrix tokens = enc_det.forward(s.h_tokens, s.y_tokens, backward ? &ce : nullptr);
    const RealMatrix xo = run_backbone(TaskId::kDet, tokens, backward ? &cb : nullptr);
    const RealMatrix x_hat = dec_det.forward(xo, backward ? &cd : nullptr);
    RealMatrix g;
    const double loss = loss_det(x_hat, s.x_true, backward ? &g : nullptr);
    if (backward) {
        const RealMatrix dxo = dec_det.backward(g, cd);
        enc_det.backward(backward_backbone(TaskId::kDet, dxo, tokens.rows(), cb), ce);
    }
    return loss;
}

double MultiTaskModel::pre_sample(const PreItem& s, bool supervised, bool backward) {
    nn::EncoderPre::Cache ce;
    nn::Backbone::Cache cb;
    nn::DecoderPre::Cache cd;
    const RealMatrix tokens = enc_pre.forward(s.h_tokens, backward ? &ce : nullptr);
    const RealMatrix xo = run_backbone(TaskId::kPre, tokens, backward ? &cb : nullptr);
    const auto out = dec_pre.forward(xo, s.p_max, backward ? &cd : nullptr);
    double loss = 0.0;
    RealMatrix dxo;
    if (supervised) {
        RealVector gl, gp;
        loss = loss_pre_supervised(out.params.lambda, out.params.p, s.label, backward ? &gl : nullptr, backward ? &gp : nullptr);
        if (backward) dxo = dec_pre.backward_scaled(gl, gp, s.p_max, cd);
    } else {
        RealMatrix g;
        loss = loss_pre_unsupervised(out.positive, s.h, s.sigma2, s.p_max, backward ? &g : nullptr);
        if (backward) dxo = dec_pre.backward_positive(g, cd);
    }
    if (backward) enc_pre.backward(backward_backbone(TaskId::kPre, dxo, tokens.rows(), cb), ce);
    return loss;
}

double MultiTaskModel::quantized_storage_ratio() const {
    double packed = 0.0, half = 0.0;
    for (nn::Linear* l : const_cast<nn::Backbone&>(backbone).linears()) {
        if (!l->quant) continue;
        packed += static_cast<double>(lora::pack_nibbles(*l->quant).size());
        half += 2.0 * static_cast<double>(l->quant->indices.size());
    }
    if (half == 0.0) fail(ErrorKind::kMissingData, "quantized_storage_ratio: no quantized matrices");
    return packed / half;
}

void MultiTaskModel::save(const std::filesystem::path& path) const {
    auto& self = const_cast<MultiTaskModel&>(*this);
    nlohmann::json reg = nlohmann::json::array();
    for (const auto& t : registry) {
        reg.push_back({{"task", nn::to_string(t.task)}, {"identifier", t.identifier}, {"description", t.description}, {"instruction", t.instruction}});
    }
    bool adapters = false;
    std::vector<std::pair<std::string, const lora::QuantizedMatrix*>> quantized;
    for (nn::Linear* l : self.backbone.linears()) {
        adapters = adapters || l->adapter.has_value();
        if (l->quant) quantized.emplace_back(l->weight.name, &*l->quant);
    }
    const nlohmann::json manifest = {{"model", config},
                                     {"registry", reg},
                                     {"use_prompt", use_prompt},
                                     {"quant", nn::to_string(quant)},
                                     {"lora_rank", lora_rank},
                                     {"lora_sigma", lora_sigma},
                                     {"p_max", p_max},
                                     {"sigma2", sigma2},
                                     {"adapters", adapters},
                                     {"frozen", !backbone.pos.trainable}};
    nn::write_checkpoint(path, manifest, self.all_params(), quantized);
}

MultiTaskModel MultiTaskModel::load(const std::filesystem::path& path) {
    const nn::CheckpointData ck = nn::read_checkpoint(path);
    const auto& m = ck.manifest;
    MultiTaskModel model(m.at("model").get<nn::ModelConfig>(), 0);
    model.use_prompt = m.at("use_prompt").get<bool>();
    model.quant = nn::parse_quant_mode(m.at("quant").get<std::string>());
    model.lora_rank = m.at("lora_rank").get<int>();
    model.lora_sigma = m.at("lora_sigma").get<double>();
    model.p_max = m.at("p_max").get<double>();
    model.sigma2 = m.at("sigma2").get<double>();
    model.registry.clear();
    for (const auto& e : m.at("registry")) {
        nn::TaskSpec t{nn::parse_task(e.at("task").get<std::string>()), e.at("identifier").get<std::string>(),
                       e.at("description").get<std::string>(), e.at("instruction").get<std::string>(), {}};
        t.tokens = nn::tokenize(t.prompt(), model.config.vocab);
        model.registry.push_back(std::move(t));
    }
    if (m.at("frozen").get<bool>()) model.backbone.freeze();
    if (m.at("adapters").get<bool>()) {
        SeededRng rng(0);
        model.backbone.attach_adapters(model.lora_rank, model.lora_sigma, rng);
    }
    const auto& qlist = m.at("quantized");
    for (std::size_t i = 0; i < qlist.size(); ++i) {
        const auto name = qlist[i].at("name").get<std::string>();
        bool found = false;
        for (nn::Linear* l : model.backbone.linears()) {
            if (l->weight.name != name) continue;
            l->quant = ck.quantized[i];
            l->weight.value = lora::nf4_dequantize(*l->quant);
            found = true;
        }
        if (!found) fail(ErrorKind::kCorruptFile, "checkpoint: unknown quantized matrix " + name);
    }
    const ParamList params = model.all_params();
    const auto& plist = m.at("params");
    if (plist.size() != params.size()) fail(ErrorKind::kCorruptFile, "checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (plist[i].at("name").get<std::string>() != params[i]->name || ck.values[i].rows() != params[i]->value.rows() ||
            ck.values[i].cols() != params[i]->value.cols())
            fail(ErrorKind::kCorruptFile, "checkpoint: parameter mismatch at " + params[i]->name);
        params[i]->value = ck.values[i];
    }
    return model;
}

// ---- backbone pre-training

double pretrain_backbone(nn::Backbone& bb, int steps, std::uint64_t seed, double lr) {
    const int d = bb.config.d_model;
    const int n = std::min(32, bb.config.max_positions);
    SeededRng rng(seed, 0xb0b);
    nn::Linear head(d, d, rng, "pretrain.head");
    ParamList params;
    bb.collect(params);
    head.collect(params);
    ParamList live;
    for (Param* p : params) {
        if (p->trainable) live.push_back(p);
    }
    Optimizer opt(lr, 0.9, 1.0);
    constexpr int kBatch = 4;
    double last = 0.0;
    for (int step = 0; step < steps; ++step) {
        zero_grads(live);
        double loss = 0.0;
        for (int b = 0; b < kBatch; ++b) {
            const double a = rng.uniform(0.5, 0.95);
            const double s = std::sqrt(1.0 - a * a);
            RealMatrix x(n, d);
            x.row(0) = randn(rng, 1, d);
            for (int t = 1; t < n; ++t) x.row(t) = a * x.row(t - 1) + s * randn(rng, 1, d);
            nn::Backbone::Cache cb;
            nn::Linear::Cache ch;
            const RealMatrix h = bb.forward(x.topRows(n - 1), &cb);
            const RealMatrix pred = head.forward(h, &ch);
            const RealMatrix e = pred - x.bottomRows(n - 1);
            const double scale = 1.0 / (static_cast<double>(e.size()) * kBatch);
            loss += e.squaredNorm() * scale;
            bb.backward(head.backward(2.0 * scale * e, ch), cb);
        }
        if (!std::isfinite(loss)) fail(ErrorKind::kNumericalFailure, "pretrain_backbone: non-finite loss at step " + std::to_string(step));
        opt.step(live);
        last = loss;
    }
    return last;
}

}  // namespace phymt::train
