// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <cmath>
#include <limits>

#include "phymt/nn_core.hpp"

namespace phymt::nn {

namespace {

// Central differences at step 1e-5 carry about 1e-10 of roundoff, so
// gradients below this floor are compared in absolute terms.
constexpr double kRelFloor = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

void check_finite(const RealMatrix& x, const char* where) {
    if (!x.allFinite()) fail(ErrorKind::kNumericalFailure, std::string(where) + ": non-finite activation");
}

RealMatrix xavier(int out, int in, SeededRng& rng) {
    const double limit = std::sqrt(6.0 / (in + out));
    RealMatrix w(out, in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
    return w;
}

}  // namespace

RealMatrix gelu(const RealMatrix& x) {
    return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v))); });
}

RealMatrix gelu_backward(const RealMatrix& x, const RealMatrix& dy) {
    RealMatrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        const double t = std::tanh(kGeluC * (v + 0.044715 * v * v * v));
        const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
        out.data()[i] = dy.data()[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
    return out;
}

RealMatrix softplus(const RealMatrix& x) {
    return x.unaryExpr([](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); });
}

RealMatrix sigmoid(const RealMatrix& x) {
    return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

RealMatrix channel_tokens(const ComplexMatrix& h) {
    const Eigen::Index n = h.rows();
    RealMatrix out(h.cols(), 2 * n);
    for (Eigen::Index k = 0; k < h.cols(); ++k) {
        for (Eigen::Index i = 0; i < n; ++i) {
            out(k, i) = h(i, k).real();
            out(k, n + i) = h(i, k).imag();
        }
    }
    return out;
}

RealMatrix signal_tokens(const ComplexMatrix& y) { return channel_tokens(y); }

// ---- Linear

Linear::Linear(int in, int out, SeededRng& rng, const std::string& name)
    : weight(name + ".weight", xavier(out, in, rng)), bias(name + ".bias", RealMatrix::Zero(1, out)) {}

RealMatrix Linear::forward(const RealMatrix& x, Cache* cache) const {
    if (x.cols() != in()) fail(ErrorKind::kShape, weight.name + ": input width " + std::to_string(x.cols()));
    RealMatrix y = adapter ? lora::lora_forward(weight.value, *adapter, x) : RealMatrix(x * weight.value.transpose());
    y.rowwise() += bias.value.row(0);
    if (cache) cache->x = x;
    return y;
}

RealMatrix Linear::backward(const RealMatrix& dy, const Cache& cache) {
    if (dy.cols() != out() || dy.rows() != cache.x.rows()) fail(ErrorKind::kShape, weight.name + ": gradient shape");
    if (weight.trainable) weight.grad.noalias() += dy.transpose() * cache.x;
    if (bias.trainable) bias.grad.row(0) += dy.colwise().sum();
    if (adapter) return lora::lora_backward(weight.value, *adapter, cache.x, dy);
    return dy * weight.value;
}

void Linear::collect(ParamList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

// ---- LayerNorm

LayerNorm::LayerNorm(int d, const std::string& name)
    : gamma(name + ".gamma", RealMatrix::Ones(1, d)), beta(name + ".beta", RealMatrix::Zero(1, d)) {}

RealMatrix LayerNorm::forward(const RealMatrix& x, Cache* cache) const {
    if (x.cols() != gamma.value.cols()) fail(ErrorKind::kShape, gamma.name + ": input width");
    const auto d = static_cast<double>(x.cols());
    RealMatrix xhat(x.rows(), x.cols());
    RealVector rstd(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).sum() / d;
        const double var = (x.row(r).array() - mu).square().sum() / d;
        rstd(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (x.row(r).array() - mu) * rstd(r);
    }
    RealMatrix y = xhat.array().rowwise() * gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

RealMatrix LayerNorm::backward(const RealMatrix& dy, const Cache& cache) {
    const RealMatrix& xhat = cache.xhat;
    if (gamma.trainable) gamma.grad.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
    if (beta.trainable) beta.grad.row(0) += dy.colwise().sum();
    const RealMatrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    const auto d = static_cast<double>(dy.cols());
    RealMatrix dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double m1 = dxhat.row(r).sum() / d;
        const double m2 = dxhat.row(r).dot(xhat.row(r)) / d;
        dx.row(r) = cache.rstd(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
    }
    return dx;
}

void LayerNorm::collect(ParamList& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

// ---- Mlp

Mlp::Mlp(int in, int hidden, int out, SeededRng& rng, const std::string& name)
    : fc1(in, hidden, rng, name + ".fc1"), fc2(hidden, out, rng, name + ".fc2") {}

RealMatrix Mlp::forward(const RealMatrix& x, Cache* cache) const {
    RealMatrix pre = fc1.forward(x, cache ? &cache->c1 : nullptr);
    RealMatrix y = fc2.forward(gelu(pre), cache ? &cache->c2 : nullptr);
    if (cache) cache->pre = std::move(pre);
    check_finite(y, "mlp");
    return y;
}

RealMatrix Mlp::backward(const RealMatrix& dy, const Cache& cache) {
    const RealMatrix dh = fc2.backward(dy, cache.c2);
    return fc1.backward(gelu_backward(cache.pre, dh), cache.c1);
}

void Mlp::collect(ParamList& out) {
    fc1.collect(out);
    fc2.collect(out);
}

// ---- Attention

Attention::Attention(int d, int heads_, bool causal_, SeededRng& rng, const std::string& name)
    : q(d, d, rng, name + ".q"),
      k(d, d, rng, name + ".k"),
      v(d, d, rng, name + ".v"),
      o(d, d, rng, name + ".o"),
      heads(heads_),
      causal(causal_) {
    if (heads < 1 || d % heads != 0) fail(ErrorKind::kInvalidInput, name + ": width not divisible by heads");
}

RealMatrix Attention::forward(const RealMatrix& x, Cache* cache) const {
    const Eigen::Index n = x.rows();
    const int d = q.out();
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    RealMatrix qm = q.forward(x, cache ? &cache->cq : nullptr);
    RealMatrix km = k.forward(x, cache ? &cache->ck : nullptr);
    RealMatrix vm = v.forward(x, cache ? &cache->cv : nullptr);
    RealMatrix concat(n, d);
    if (cache) cache->probs.assign(static_cast<std::size_t>(heads), RealMatrix());
    for (int h = 0; h < heads; ++h) {
        RealMatrix s = qm.middleCols(h * dh, dh) * km.middleCols(h * dh, dh).transpose() * scale;
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::Index visible = causal ? i + 1 : n;
            const double mx = s.row(i).head(visible).maxCoeff();
            double total = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                const double e = j < visible ? std::exp(s(i, j) - mx) : 0.0;
                s(i, j) = e;
                total += e;
            }
            s.row(i) /= total;
        }
        concat.middleCols(h * dh, dh) = s * vm.middleCols(h * dh, dh);
        if (cache) cache->probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    RealMatrix y = o.forward(concat, cache ? &cache->co : nullptr);
    check_finite(y, "attention");
    if (cache) {
        cache->qm = std::move(qm);
        cache->km = std::move(km);
        cache->vm = std::move(vm);
    }
    return y;
}

RealMatrix Attention::backward(const RealMatrix& dy, const Cache& cache) {
    const Eigen::Index n = dy.rows();
    const int d = q.out();
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const RealMatrix dconcat = o.backward(dy, cache.co);
    RealMatrix dq(n, d), dk(n, d), dv(n, d);
    for (int h = 0; h < heads; ++h) {
        const RealMatrix& p = cache.probs[static_cast<std::size_t>(h)];
        const auto doh = dconcat.middleCols(h * dh, dh);
        const RealMatrix dp = doh * cache.vm.middleCols(h * dh, dh).transpose();
        dv.middleCols(h * dh, dh) = p.transpose() * doh;
        RealMatrix ds(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double inner = dp.row(i).dot(p.row(i));
            ds.row(i) = p.row(i).array() * (dp.row(i).array() - inner);
        }
        dq.middleCols(h * dh, dh) = ds * cache.km.middleCols(h * dh, dh) * scale;
        dk.middleCols(h * dh, dh) = ds.transpose() * cache.qm.middleCols(h * dh, dh) * scale;
    }
    RealMatrix dx = q.backward(dq, cache.cq);
    dx += k.backward(dk, cache.ck);
    dx += v.backward(dv, cache.cv);
    return dx;
}

void Attention::collect(ParamList& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
}

// ---- Blocks

EncoderBlock::EncoderBlock(int d, int heads, int hidden, SeededRng& rng, const std::string& name)
    : attn(d, heads, false, rng, name + ".attn"),
      ln1(d, name + ".ln1"),
      mlp(d, hidden, d, rng, name + ".mlp"),
      ln2(d, name + ".ln2") {}

RealMatrix EncoderBlock::forward(const RealMatrix& x, Cache* cache) const {
    const RealMatrix a = attn.forward(x, cache ? &cache->attn : nullptr);
    const RealMatrix x1 = ln1.forward(a + x, cache ? &cache->ln1 : nullptr);
    const RealMatrix m = mlp.forward(x1, cache ? &cache->mlp : nullptr);
    return ln2.forward(m + x1, cache ? &cache->ln2 : nullptr);
}

RealMatrix EncoderBlock::backward(const RealMatrix& dy, const Cache& cache) {
    const RealMatrix d2 = ln2.backward(dy, cache.ln2);
    const RealMatrix dx1 = d2 + mlp.backward(d2, cache.mlp);
    const RealMatrix d1 = ln1.backward(dx1, cache.ln1);
    return d1 + attn.backward(d1, cache.attn);
}

void EncoderBlock::collect(ParamList& out) {
    attn.collect(out);
    ln1.collect(out);
    mlp.collect(out);
    ln2.collect(out);
}

DecoderBlock::DecoderBlock(int d, int heads, int hidden, SeededRng& rng, const std::string& name)
    : ln1(d, name + ".ln1"),
      attn(d, heads, true, rng, name + ".attn"),
      ln2(d, name + ".ln2"),
      mlp(d, hidden, d, rng, name + ".mlp") {}

RealMatrix DecoderBlock::forward(const RealMatrix& x, Cache* cache) const {
    const RealMatrix x1 = x + attn.forward(ln1.forward(x, cache ? &cache->ln1 : nullptr), cache ? &cache->attn : nullptr);
    return x1 + mlp.forward(ln2.forward(x1, cache ? &cache->ln2 : nullptr), cache ? &cache->mlp : nullptr);
}

RealMatrix DecoderBlock::backward(const RealMatrix& dy, const Cache& cache) {
    const RealMatrix dx1 = dy + ln2.backward(mlp.backward(dy, cache.mlp), cache.ln2);
    return dx1 + ln1.backward(attn.backward(dx1, cache.attn), cache.ln1);
}

void DecoderBlock::collect(ParamList& out) {
    ln1.collect(out);
    attn.collect(out);
    ln2.collect(out);
    mlp.collect(out);
}

// ---- grad check

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
    return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const std::function<double()>& loss, const std::function<void()>& backward,
                           const ParamList& params, SeededRng& rng, int samples, double step) {
    std::vector<std::pair<Param*, Eigen::Index>> coords;
    Eigen::Index total = 0;
    for (Param* p : params) {
        if (p->trainable) total += p->size();
    }
    GradCheckResult res;
    if (total == 0) return res;

    backward();
    auto coordinate = [&](Eigen::Index flat) {
        for (Param* p : params) {
            if (!p->trainable) continue;
            if (flat < p->size()) return std::make_pair(p, flat);
            flat -= p->size();
        }
        return std::make_pair(static_cast<Param*>(nullptr), Eigen::Index{0});
    };
    if (total <= samples) {
        for (Eigen::Index i = 0; i < total; ++i) coords.push_back(coordinate(i));
    } else {
        for (int i = 0; i < samples; ++i) coords.push_back(coordinate(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(total)))));
    }
    for (const auto& [p, idx] : coords) {
        double& w = p->value.data()[idx];
        const double saved = w;
        w = saved + step;
        const double up = loss();
        w = saved - step;
        const double down = loss();
        w = saved;
        const double numeric = (up - down) / (2.0 * step);
        res.max_rel_error = std::max(res.max_rel_error, relative_error(p->grad.data()[idx], numeric));
        ++res.checked;
    }
    return res;
}

}  // namespace phymt::nn
