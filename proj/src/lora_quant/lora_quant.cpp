// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "phymt/lora_quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/special_functions/erf.hpp>

namespace phymt::lora {

LoraAdapter lora_init(int d_out, int d_in, int r, double sigma_init, SeededRng& rng, const std::string& name) {
    if (r < 1 || r > std::min(d_out, d_in)) fail(ErrorKind::kInvalidRank, "lora_init: rank out of range");
    if (!(sigma_init >= 0.0)) fail(ErrorKind::kInvalidInput, "lora_init: negative sigma");
    LoraAdapter ad;
    ad.rank = r;
    ad.a = Param(name + ".A", randn(rng, d_out, r) * sigma_init);
    ad.b = Param(name + ".B", RealMatrix::Zero(d_in, r));
    return ad;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) fail(ErrorKind::kInvalidInput, "normal_quantile: p outside (0, 1)");
    return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
}

namespace {

void check_bits(int bits) {
    if (bits < 2 || bits > 8) fail(ErrorKind::kInvalidInput, "nf4: bits must be in [2, 8]");
}

}  // namespace

QuantizedMatrix nf4_quantize_with_scale(const RealMatrix& w, double sigma, int bits) {
    check_bits(bits);
    if (!w.allFinite()) fail(ErrorKind::kInvalidInput, "nf4_quantize: non-finite weight");
    if (!(sigma >= 0.0)) fail(ErrorKind::kInvalidInput, "nf4_quantize: negative scale");
    QuantizedMatrix q;
    q.rows = w.rows();
    q.cols = w.cols();
    q.bits = bits;
    q.sigma = sigma;
    q.indices.resize(static_cast<std::size_t>(w.size()));
    const int levels = q.levels();
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        int idx = 1 << (bits - 1);
        if (sigma > 0.0) {
            // nearbyint follows the default round-to-nearest-even mode.
            idx = static_cast<int>(std::nearbyint(levels * normal_cdf(w.data()[i] / sigma)));
            idx = std::clamp(idx, 0, levels);
        }
        q.indices[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(idx);
    }
    return q;
}

QuantizedMatrix nf4_quantize(const RealMatrix& w, int bits) {
    if (w.size() == 0) fail(ErrorKind::kInvalidInput, "nf4_quantize: empty matrix");
    const double mu = w.mean();
    const double sigma = std::sqrt((w.array() - mu).square().mean());
    return nf4_quantize_with_scale(w, sigma, bits);
}

double nf4_level(int q, int bits) {
    check_bits(bits);
    const int levels = (1 << bits) - 1;
    if (q < 0 || q > levels) fail(ErrorKind::kInvalidInput, "nf4_level: index out of range");
    // Mirror the lower half so the codebook is exactly odd-symmetric.
    if (2 * q > levels) return -nf4_level(levels - q, bits);
    const double delta = 1.0 / (4.0 * levels);
    const double u = std::clamp(static_cast<double>(q) / levels, delta, 1.0 - delta);
    return normal_quantile(u);
}

RealMatrix nf4_dequantize(const QuantizedMatrix& q) {
    if (static_cast<Eigen::Index>(q.indices.size()) != q.rows * q.cols) fail(ErrorKind::kShape, "nf4_dequantize: index count");
    std::vector<double> table(static_cast<std::size_t>(q.levels() + 1));
    for (int i = 0; i <= q.levels(); ++i) table[static_cast<std::size_t>(i)] = q.sigma * nf4_level(i, q.bits);
    RealMatrix out(q.rows, q.cols);
    if (q.sigma == 0.0) {
        out.setZero();
        return out;
    }
    for (std::size_t i = 0; i < q.indices.size(); ++i) {
        const int idx = q.indices[i];
        if (idx > q.levels()) fail(ErrorKind::kInvalidInput, "nf4_dequantize: index out of range");
        out.data()[i] = table[static_cast<std::size_t>(idx)];
    }
    return out;
}

std::vector<std::uint8_t> pack_nibbles(const QuantizedMatrix& q) {
    if (q.bits != 4) fail(ErrorKind::kInvalidInput, "pack_nibbles: requires 4-bit indices");
    std::vector<std::uint8_t> out((q.indices.size() + 1) / 2, 0);
    for (std::size_t i = 0; i < q.indices.size(); ++i) {
        const auto v = static_cast<std::uint8_t>(q.indices[i] & 0x0F);
        out[i / 2] |= (i % 2 == 0) ? v : static_cast<std::uint8_t>(v << 4);
    }
    return out;
}

QuantizedMatrix unpack_nibbles(const std::vector<std::uint8_t>& packed, Eigen::Index rows, Eigen::Index cols,
                               double sigma) {
    const auto count = static_cast<std::size_t>(rows * cols);
    if (packed.size() != (count + 1) / 2) fail(ErrorKind::kCorruptFile, "unpack_nibbles: byte count mismatch");
    QuantizedMatrix q;
    q.rows = rows;
    q.cols = cols;
    q.bits = 4;
    q.sigma = sigma;
    q.indices.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint8_t byte = packed[i / 2];
        q.indices[i] = (i % 2 == 0) ? (byte & 0x0F) : (byte >> 4);
    }
    return q;
}

namespace {

void check_adapter(Eigen::Index rows, Eigen::Index cols, const LoraAdapter& ad, Eigen::Index x_cols) {
    if (ad.a.value.rows() != rows || ad.b.value.rows() != cols || ad.a.value.cols() != ad.b.value.cols())
        fail(ErrorKind::kShape, "lora: adapter does not match base");
    if (x_cols != cols) fail(ErrorKind::kShape, "lora: input width does not match base");
}

}  // namespace

RealMatrix lora_forward(const RealMatrix& base, const LoraAdapter& ad, const RealMatrix& x) {
    check_adapter(base.rows(), base.cols(), ad, x.cols());
    const RealMatrix xb = x * ad.b.value;
    return x * base.transpose() + xb * ad.a.value.transpose();
}

RealMatrix lora_forward(const QuantizedMatrix& base, const LoraAdapter& ad, const RealMatrix& x) {
    return lora_forward(nf4_dequantize(base), ad, x);
}

RealMatrix lora_backward(const RealMatrix& base, LoraAdapter& ad, const RealMatrix& x, const RealMatrix& dy) {
    check_adapter(base.rows(), base.cols(), ad, x.cols());
    if (dy.rows() != x.rows() || dy.cols() != base.rows()) fail(ErrorKind::kShape, "lora_backward: dy shape");
    const RealMatrix xb = x * ad.b.value;        // n x r
    const RealMatrix dya = dy * ad.a.value;      // n x r
    ad.a.grad += dy.transpose() * xb;
    ad.b.grad += x.transpose() * dya;
    return dy * base + dya * ad.b.value.transpose();
}

LoftqResult loftq_init(const RealMatrix& w, int r, int bits, int iters) {
    const auto d_out = w.rows();
    const auto d_in = w.cols();
    if (r < 1 || r > std::min(d_out, d_in)) fail(ErrorKind::kInvalidRank, "loftq_init: rank out of range");
    if (iters < 1) fail(ErrorKind::kInvalidInput, "loftq_init: iters must be >= 1");

    LoftqResult res;
    const QuantizedMatrix naive = nf4_quantize(w, bits);
    res.naive_error = (w - nf4_dequantize(naive)).norm();

    RealMatrix a = RealMatrix::Zero(d_out, r);
    RealMatrix b = RealMatrix::Zero(d_in, r);
    double best = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= iters; ++it) {
        const RealMatrix low = a * b.transpose();
        QuantizedMatrix q = nf4_quantize(w - low, bits);
        const RealMatrix residual = w - nf4_dequantize(q);
        res.pre_svd.push_back((residual - low).norm());

        const SvdResult<double> f = svd(residual);
        const RealVector root = f.s.head(r).cwiseSqrt();
        a = f.u.leftCols(r) * root.asDiagonal();
        b = f.v.leftCols(r) * root.asDiagonal();
        const double post = (residual - a * b.transpose()).norm();
        res.post_svd.push_back(post);
        if (post < best) {
            best = post;
            res.best_iteration = it;
            res.q = std::move(q);
            res.a = a;
            res.b = b;
        }
    }
    res.error = best;
    return res;
}

RealMatrix merge_adapters(const QuantizedMatrix& q, const LoraAdapter& ad) {
    if (ad.a.value.rows() != q.rows || ad.b.value.rows() != q.cols) fail(ErrorKind::kShape, "merge_adapters: shape mismatch");
    return nf4_dequantize(q) + ad.a.value * ad.b.value.transpose();
}

}  // namespace phymt::lora
