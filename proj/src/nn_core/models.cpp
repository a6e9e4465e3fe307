// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <cmath>
#include <cstring>
#include <sstream>

#include "phymt/nn_core.hpp"

namespace phymt::nn {

namespace {

void check_finite(const RealMatrix& x, const char* where) {
    if (!x.allFinite()) fail(ErrorKind::kNumericalFailure, std::string(where) + ": non-finite activation");
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
}

}  // namespace

// ---- configs

void BackboneConfig::validate() const {
    if (depth < 0 || d_model < 1 || heads < 1 || ffn < 1 || max_positions < 1)
        fail(ErrorKind::kValidation, "backbone: sizes must be positive");
    if (d_model % heads != 0) fail(ErrorKind::kValidation, "backbone: d_model must be divisible by heads");
}

void to_json(nlohmann::json& j, const BackboneConfig& c) {
    j = {{"depth", c.depth}, {"d_model", c.d_model}, {"heads", c.heads}, {"ffn", c.ffn}, {"max_positions", c.max_positions}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
    c.depth = j.value("depth", c.depth);
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.ffn = j.value("ffn", c.ffn);
    c.max_positions = j.value("max_positions", c.max_positions);
}

void ModelConfig::validate() const {
    backbone.validate();
    if (n_t < 1 || users < 1 || subcarriers < 1 || t1 < 1 || t2 < 1 || l0 < 1 || patch < 1 || hidden < 1 || vocab < 1)
        fail(ErrorKind::kValidation, "model: sizes must be positive");
    if ((2 * n_t) % encoder_heads != 0) fail(ErrorKind::kValidation, "model: 2 N_T must be divisible by encoder_heads");
    if ((patch * 2 * subcarriers) % se_reduction != 0) fail(ErrorKind::kValidation, "model: patch width must be divisible by se_reduction");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"n_t", c.n_t},
         {"users", c.users},
         {"subcarriers", c.subcarriers},
         {"t1", c.t1},
         {"t2", c.t2},
         {"l0", c.l0},
         {"patch", c.patch},
         {"se_blocks", c.se_blocks},
         {"se_reduction", c.se_reduction},
         {"encoder_blocks", c.encoder_blocks},
         {"encoder_heads", c.encoder_heads},
         {"hidden", c.hidden},
         {"vocab", c.vocab},
         {"backbone", c.backbone}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.n_t = j.value("n_t", c.n_t);
    c.users = j.value("users", c.users);
    c.subcarriers = j.value("subcarriers", c.subcarriers);
    c.t1 = j.value("t1", c.t1);
    c.t2 = j.value("t2", c.t2);
    c.l0 = j.value("l0", c.l0);
    c.patch = j.value("patch", c.patch);
    c.se_blocks = j.value("se_blocks", c.se_blocks);
    c.se_reduction = j.value("se_reduction", c.se_reduction);
    c.encoder_blocks = j.value("encoder_blocks", c.encoder_blocks);
    c.encoder_heads = j.value("encoder_heads", c.encoder_heads);
    c.hidden = j.value("hidden", c.hidden);
    c.vocab = j.value("vocab", c.vocab);
    if (j.contains("backbone")) c.backbone = j.at("backbone").get<BackboneConfig>();
}

QuantMode parse_quant_mode(const std::string& s) {
    if (s == "none") return QuantMode::kNone;
    if (s == "nf4") return QuantMode::kNf4;
    if (s == "loftq") return QuantMode::kLoftq;
    fail(ErrorKind::kValidation, "unknown quantization mode '" + s + "'");
}

const char* to_string(QuantMode m) {
    switch (m) {
        case QuantMode::kNone: return "none";
        case QuantMode::kNf4: return "nf4";
        case QuantMode::kLoftq: return "loftq";
    }
    return "?";
}

// ---- Backbone

Backbone::Backbone(const BackboneConfig& c, SeededRng& rng) : config(c) {
    config.validate();
    pos = Param("backbone.pos", randn(rng, c.max_positions, c.d_model) * 0.02);
    for (int i = 0; i < c.depth; ++i)
        blocks.emplace_back(c.d_model, c.heads, c.ffn, rng, "backbone.block" + std::to_string(i));
}

RealMatrix Backbone::forward(const RealMatrix& x, Cache* cache) const {
    if (x.cols() != config.d_model) fail(ErrorKind::kShape, "backbone: input width");
    if (blocks.empty()) return x;
    if (x.rows() > config.max_positions) fail(ErrorKind::kShape, "backbone: too many tokens");
    RealMatrix h = x + pos.value.topRows(x.rows());
    if (cache) cache->blocks.resize(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) h = blocks[i].forward(h, cache ? &cache->blocks[i] : nullptr);
    check_finite(h, "backbone");
    return h;
}

RealMatrix Backbone::backward(const RealMatrix& dy, const Cache& cache) {
    if (blocks.empty()) return dy;
    RealMatrix d = dy;
    for (std::size_t i = blocks.size(); i-- > 0;) d = blocks[i].backward(d, cache.blocks[i]);
    if (pos.trainable) pos.grad.topRows(d.rows()) += d;
    return d;
}

void Backbone::collect(ParamList& out) {
    out.push_back(&pos);
    for (auto& b : blocks) b.collect(out);
}

void Backbone::collect_adapters(ParamList& out) {
    for (Linear* l : linears()) {
        if (l->adapter) {
            out.push_back(&l->adapter->a);
            out.push_back(&l->adapter->b);
        }
    }
}

void Backbone::freeze() {
    ParamList ps;
    collect(ps);
    for (Param* p : ps) {
        p->trainable = false;
        p->grad.resize(0, 0);
    }
}

std::vector<Linear*> Backbone::linears() {
    std::vector<Linear*> out;
    for (auto& b : blocks) {
        out.insert(out.end(), {&b.attn.q, &b.attn.k, &b.attn.v, &b.attn.o, &b.mlp.fc1, &b.mlp.fc2});
    }
    return out;
}

void Backbone::attach_adapters(int rank, double sigma_init, SeededRng& rng) {
    for (auto& b : blocks) {
        for (Linear* l : {&b.attn.q, &b.attn.v}) {
            l->adapter = lora::lora_init(l->out(), l->in(), rank, sigma_init, rng, l->weight.name + ".lora");
        }
    }
}

void Backbone::quantize(QuantMode mode, int bits, int loftq_iters) {
    if (mode == QuantMode::kNone) return;
    for (Linear* l : linears()) {
        if (mode == QuantMode::kLoftq && l->adapter) {
            lora::LoftqResult r = lora::loftq_init(l->weight.value, l->adapter->rank, bits, loftq_iters);
            l->adapter->a.value = r.a;
            l->adapter->b.value = r.b;
            l->quant = std::move(r.q);
        } else {
            l->quant = lora::nf4_quantize(l->weight.value, bits);
        }
        l->weight.value = lora::nf4_dequantize(*l->quant);
    }
}

std::uint64_t Backbone::fingerprint() const {
    std::uint64_t h = kFnvOffset;
    auto& self = const_cast<Backbone&>(*this);
    ParamList ps;
    self.collect(ps);
    for (const Param* p : ps) fnv_bytes(h, p->value.data(), sizeof(double) * static_cast<std::size_t>(p->size()));
    for (Linear* l : self.linears()) {
        if (l->quant) {
            fnv_bytes(h, l->quant->indices.data(), l->quant->indices.size());
            fnv_bytes(h, &l->quant->sigma, sizeof(double));
        }
    }
    return h;
}

// ---- encoders

EncoderPre::EncoderPre(const ModelConfig& c, SeededRng& rng) {
    const int w = 2 * c.n_t;
    for (int i = 0; i < c.encoder_blocks; ++i)
        blocks.emplace_back(w, c.encoder_heads, 4 * w, rng, "enc_pre.block" + std::to_string(i));
    proj = Linear(w, c.d_model(), rng, "enc_pre.proj");
}

RealMatrix EncoderPre::forward(const RealMatrix& h, Cache* cache) const {
    if (!h.allFinite()) fail(ErrorKind::kInvalidInput, "encoder_pre: non-finite input");
    RealMatrix x = h;
    if (cache) cache->blocks.resize(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) x = blocks[i].forward(x, cache ? &cache->blocks[i] : nullptr);
    return proj.forward(x, cache ? &cache->proj : nullptr);
}

RealMatrix EncoderPre::backward(const RealMatrix& dy, const Cache& cache) {
    RealMatrix d = proj.backward(dy, cache.proj);
    for (std::size_t i = blocks.size(); i-- > 0;) d = blocks[i].backward(d, cache.blocks[i]);
    return d;
}

void EncoderPre::collect(ParamList& out) {
    for (auto& b : blocks) b.collect(out);
    proj.collect(out);
}

EncoderDet::EncoderDet(const ModelConfig& c, SeededRng& rng)
    : users(c.users),
      channel_mlp(c.users * 2 * c.n_t, c.hidden, c.d_model(), rng, "enc_det.channel"),
      signal_mlp(2 * c.n_t, c.hidden, c.d_model(), rng, "enc_det.signal"),
      proj(c.d_model(), c.d_model(), rng, "enc_det.proj") {}

RealMatrix EncoderDet::forward(const RealMatrix& h, const RealMatrix& y, Cache* cache) const {
    if (h.rows() != users || h.cols() != y.cols()) fail(ErrorKind::kShape, "encoder_det: input shapes");
    if (!h.allFinite() || !y.allFinite()) fail(ErrorKind::kInvalidInput, "encoder_det: non-finite input");
    const RealMatrix flat = Eigen::Map<const RealMatrix>(h.data(), 1, h.size());
    const RealMatrix ch = channel_mlp.forward(flat, cache ? &cache->channel : nullptr);
    const RealMatrix sig = signal_mlp.forward(y, cache ? &cache->signal : nullptr);
    RealMatrix tokens(1 + y.rows(), ch.cols());
    tokens.row(0) = ch.row(0);
    tokens.bottomRows(y.rows()) = sig;
    if (cache) cache->slots = y.rows();
    return proj.forward(tokens, cache ? &cache->proj : nullptr);
}

std::pair<RealMatrix, RealMatrix> EncoderDet::backward(const RealMatrix& dy, const Cache& cache) {
    const RealMatrix dt = proj.backward(dy, cache.proj);
    const RealMatrix dflat = channel_mlp.backward(dt.topRows(1), cache.channel);
    RealMatrix dh = Eigen::Map<const RealMatrix>(dflat.data(), users, dflat.size() / users);
    RealMatrix dsig = signal_mlp.backward(dt.bottomRows(cache.slots), cache.signal);
    return {std::move(dh), std::move(dsig)};
}

void EncoderDet::collect(ParamList& out) {
    channel_mlp.collect(out);
    signal_mlp.collect(out);
    proj.collect(out);
}

SeBlock::SeBlock(int channels, int reduction, SeededRng& rng, const std::string& name)
    : down(channels, channels / reduction, rng, name + ".down"), up(channels / reduction, channels, rng, name + ".up") {}

RealMatrix SeBlock::forward(const RealMatrix& x, Cache* cache) const {
    const RealMatrix squeeze = x.colwise().mean();
    RealMatrix pre = down.forward(squeeze, cache ? &cache->cd : nullptr);
    RealMatrix gate = sigmoid(up.forward(gelu(pre), cache ? &cache->cu : nullptr));
    RealMatrix y = x.array().rowwise() * gate.row(0).array();
    if (cache) {
        cache->x = x;
        cache->pre = std::move(pre);
        cache->gate = std::move(gate);
    }
    return y;
}

RealMatrix SeBlock::backward(const RealMatrix& dy, const Cache& cache) {
    RealMatrix dx = dy.array().rowwise() * cache.gate.row(0).array();
    const RealMatrix dgate = (dy.array() * cache.x.array()).colwise().sum();
    const RealMatrix du = dgate.array() * cache.gate.array() * (1.0 - cache.gate.array());
    const RealMatrix dz = up.backward(du, cache.cu);
    const RealMatrix ds = down.backward(gelu_backward(cache.pre, dz), cache.cd);
    dx.rowwise() += ds.row(0) / static_cast<double>(dy.rows());
    return dx;
}

void SeBlock::collect(ParamList& out) {
    down.collect(out);
    up.collect(out);
}

EncoderCp::EncoderCp(const ModelConfig& c, SeededRng& rng) : patch(c.patch) {
    const int channels = c.patch * 2 * c.subcarriers;
    for (int i = 0; i < c.se_blocks; ++i) blocks.emplace_back(channels, c.se_reduction, rng, "enc_cp.se" + std::to_string(i));
    proj = Linear(channels, c.d_model(), rng, "enc_cp.proj");
    pos = Param("enc_cp.pos", randn(rng, c.cp_patches(), c.d_model()) * 0.02);
}

EncoderCp::Output EncoderCp::forward(const RealMatrix& x, Cache* cache) const {
    prediction::Normalized n = prediction::normalize(x);
    return {forward_normalized(n.x, cache), n.stats};
}

RealMatrix EncoderCp::forward_normalized(const RealMatrix& xn, Cache* cache) const {
    RealMatrix p = prediction::patchify(xn, patch);
    if (p.rows() > pos.value.rows() || p.cols() != proj.in()) fail(ErrorKind::kShape, "encoder_cp: input shape");
    if (cache) cache->blocks.resize(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) p = blocks[i].forward(p, cache ? &cache->blocks[i] : nullptr);
    RealMatrix y = proj.forward(p, cache ? &cache->proj : nullptr);
    y += pos.value.topRows(y.rows());
    check_finite(y, "encoder_cp");
    return y;
}

RealMatrix EncoderCp::backward(const RealMatrix& dy, const Cache& cache) {
    if (pos.trainable) pos.grad.topRows(dy.rows()) += dy;
    RealMatrix d = proj.backward(dy, cache.proj);
    for (std::size_t i = blocks.size(); i-- > 0;) d = blocks[i].backward(d, cache.blocks[i]);
    return d;
}

void EncoderCp::collect(ParamList& out) {
    for (auto& b : blocks) b.collect(out);
    proj.collect(out);
    out.push_back(&pos);
}

// ---- decoders

DecoderPre::DecoderPre(const ModelConfig& c, SeededRng& rng) : mlp(c.d_model(), c.hidden, 2, rng, "dec_pre.mlp") {}

DecoderPre::Output DecoderPre::forward(const RealMatrix& tokens, double p_max, Cache* cache) const {
    RealMatrix raw = mlp.forward(tokens, cache ? &cache->mlp : nullptr);
    RealMatrix positive = softplus(raw);
    Output out;
    out.params = precoding::scale_to_budget(positive.col(0), positive.col(1), p_max);
    out.positive = positive;
    if (cache) {
        cache->raw = std::move(raw);
        cache->pos = std::move(positive);
    }
    return out;
}

RealVector scale_backward(const RealVector& v, const RealVector& ds, double p_max) {
    const double total = v.sum();
    const double inner = ds.dot(v);
    return (p_max / total) * ds.array() - p_max * inner / (total * total);
}

RealMatrix DecoderPre::backward_positive(const RealMatrix& dpos, const Cache& cache) {
    const RealMatrix draw = dpos.array() * sigmoid(cache.raw).array();
    return mlp.backward(draw, cache.mlp);
}

RealMatrix DecoderPre::backward_scaled(const RealVector& dlambda, const RealVector& dp, double p_max, const Cache& cache) {
    RealMatrix dpos(cache.pos.rows(), 2);
    dpos.col(0) = scale_backward(cache.pos.col(0), dlambda, p_max);
    dpos.col(1) = scale_backward(cache.pos.col(1), dp, p_max);
    return backward_positive(dpos, cache);
}

void DecoderPre::collect(ParamList& out) { mlp.collect(out); }

DecoderDet::DecoderDet(const ModelConfig& c, SeededRng& rng)
    : users(c.users), mlp(c.d_model(), c.hidden, 2 * c.users, rng, "dec_det.mlp") {}

RealMatrix DecoderDet::forward(const RealMatrix& tokens, Cache* cache) const {
    if (tokens.rows() < 2) fail(ErrorKind::kShape, "decoder_det: need the channel token and at least one slot");
    if (cache) cache->tokens = tokens.rows();
    return mlp.forward(tokens.bottomRows(tokens.rows() - 1), cache ? &cache->mlp : nullptr);
}

RealMatrix DecoderDet::backward(const RealMatrix& dy, const Cache& cache) {
    RealMatrix d = RealMatrix::Zero(cache.tokens, mlp.fc1.in());
    d.bottomRows(cache.tokens - 1) = mlp.backward(dy, cache.mlp);
    return d;
}

void DecoderDet::collect(ParamList& out) { mlp.collect(out); }

DecoderCp::DecoderCp(const ModelConfig& c, SeededRng& rng)
    : t2(c.t2), width(2 * c.subcarriers), mlp(c.cp_patches() * c.d_model(), c.hidden, c.t2 * 2 * c.subcarriers, rng, "dec_cp.mlp") {}

RealMatrix DecoderCp::forward(const RealMatrix& tokens, const prediction::NormStats& stats, Cache* cache) const {
    if (tokens.size() != mlp.fc1.in()) fail(ErrorKind::kShape, "decoder_cp: token count");
    const RealMatrix flat = Eigen::Map<const RealMatrix>(tokens.data(), 1, tokens.size());
    const RealMatrix z = mlp.forward(flat, cache ? &cache->mlp : nullptr);
    if (cache) {
        cache->tokens = tokens.rows();
        cache->sigma = stats.sigma;
    }
    const RealMatrix shaped = Eigen::Map<const RealMatrix>(z.data(), t2, width);
    return prediction::denormalize(shaped, stats);
}

RealMatrix DecoderCp::backward(const RealMatrix& dy, const Cache& cache) {
    const RealMatrix dz = Eigen::Map<const RealMatrix>(dy.data(), 1, dy.size()) * cache.sigma;
    const RealMatrix dflat = mlp.backward(dz, cache.mlp);
    return Eigen::Map<const RealMatrix>(dflat.data(), cache.tokens, dflat.size() / cache.tokens);
}

void DecoderCp::collect(ParamList& out) { mlp.collect(out); }

std::vector<std::array<double, 2>> as_complex_pairs(const RealMatrix& x, int t, int m) {
    if (x.rows() != t || x.cols() != 2 * m) fail(ErrorKind::kShape, "as_complex_pairs: shape");
    std::vector<std::array<double, 2>> out;
    out.reserve(static_cast<std::size_t>(t * m));
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < m; ++j) out.push_back({x(i, j), x(i, m + j)});
    return out;
}

// ---- prompts

const char* to_string(TaskId t) {
    switch (t) {
        case TaskId::kCp: return "cp";
        case TaskId::kDet: return "det";
        case TaskId::kPre: return "pre";
    }
    return "?";
}

TaskId parse_task(const std::string& s) {
    if (s == "cp") return TaskId::kCp;
    if (s == "det") return TaskId::kDet;
    if (s == "pre") return TaskId::kPre;
    fail(ErrorKind::kValidation, "unknown task '" + s + "'");
}

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = kFnvOffset;
    fnv_bytes(h, s.data(), s.size());
    return h;
}

std::vector<int> tokenize(const std::string& text, int vocab) {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(static_cast<int>(fnv1a64(w) % static_cast<std::uint64_t>(vocab)));
    return ids;
}

std::vector<TaskSpec> default_registry(int vocab) {
    std::vector<TaskSpec> reg = {
        {TaskId::kCp, "<|cp|>", "forecast upcoming channel coefficients of one antenna from noisy past slots", "-> predict", {}},
        {TaskId::kDet, "<|det|>", "recover uplink user symbols from several received slots", "-> detect", {}},
        {TaskId::kPre, "<|pre|>", "pick downlink beam weights and powers for all users", "-> precode", {}},
    };
    for (auto& t : reg) t.tokens = tokenize(t.prompt(), vocab);
    return reg;
}

PromptEmbedder::PromptEmbedder(int vocab, int d, SeededRng& rng) : table("prompt.table", randn(rng, vocab, d) * 0.02) {}

RealMatrix PromptEmbedder::forward(const std::vector<int>& ids) const {
    if (ids.empty()) fail(ErrorKind::kInvalidInput, "embed_prompt: empty prompt");
    RealMatrix out(static_cast<Eigen::Index>(ids.size()), table.value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.value.row(ids[i]);
    return out;
}

void PromptEmbedder::backward(const std::vector<int>& ids, const RealMatrix& dy) {
    if (!table.trainable) return;
    for (std::size_t i = 0; i < ids.size(); ++i) table.grad.row(ids[i]) += dy.row(static_cast<Eigen::Index>(i));
}

void PromptEmbedder::collect(ParamList& out) { out.push_back(&table); }

}  // namespace phymt::nn
