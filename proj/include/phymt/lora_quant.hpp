// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <vector>

#include "phymt/numerics.hpp"
#include "phymt/param.hpp"

namespace phymt::lora {

/// Low-rank update W + A B^T for a d_out x d_in weight: A is d_out x r, B is d_in x r.
struct LoraAdapter {
    Param a;
    Param b;
    int rank = 0;

    Eigen::Index d_out() const { return a.value.rows(); }
    Eigen::Index d_in() const { return b.value.rows(); }
    Eigen::Index parameter_count() const { return a.size() + b.size(); }
};

/// A ~ N(0, sigma_init^2), B = 0. Throws kInvalidRank unless 1 <= r <= min(d_out, d_in).
LoraAdapter lora_init(int d_out, int d_in, int r, double sigma_init, SeededRng& rng, const std::string& name = "lora");

/// Per-matrix NormalFloat code: indices in [0, 2^bits - 1] and one scale.
struct QuantizedMatrix {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    int bits = 4;
    double sigma = 0.0;
    std::vector<std::uint8_t> indices;  // row-major

    int levels() const { return (1 << bits) - 1; }
};

/// Standard normal CDF and its inverse.
double normal_cdf(double x);
double normal_quantile(double p);

/// sigma = population standard deviation of W; index = round-half-even(L * Phi(w / sigma)),
/// L = 2^bits - 1. A zero sigma maps every entry to 2^(bits-1).
QuantizedMatrix nf4_quantize(const RealMatrix& w, int bits = 4);
/// Same rule with a caller-supplied scale.
QuantizedMatrix nf4_quantize_with_scale(const RealMatrix& w, double sigma, int bits = 4);

/// Reconstruction level of index q for unit scale. The clamp margin is
/// 1 / (4L), which keeps the end levels strictly inside their rounding cells.
double nf4_level(int q, int bits = 4);
RealMatrix nf4_dequantize(const QuantizedMatrix& q);

/// Two indices per byte, low nibble first. Requires bits == 4.
std::vector<std::uint8_t> pack_nibbles(const QuantizedMatrix& q);
QuantizedMatrix unpack_nibbles(const std::vector<std::uint8_t>& packed, Eigen::Index rows, Eigen::Index cols,
                               double sigma);

/// Y = X W^T + (X B) A^T for row-vector inputs X (n x d_in).
RealMatrix lora_forward(const RealMatrix& base, const LoraAdapter& ad, const RealMatrix& x);
RealMatrix lora_forward(const QuantizedMatrix& base, const LoraAdapter& ad, const RealMatrix& x);

/// Accumulates dL/dA and dL/dB into the adapter and returns dL/dX. The base is
/// treated as frozen.
RealMatrix lora_backward(const RealMatrix& base, LoraAdapter& ad, const RealMatrix& x, const RealMatrix& dy);

struct LoftqResult {
    QuantizedMatrix q;
    RealMatrix a;                     // d_out x r
    RealMatrix b;                     // d_in x r
    std::vector<double> pre_svd;      // ||W - Q_i - A_{i-1} B_{i-1}^T||_F
    std::vector<double> post_svd;     // ||W - Q_i - A_i B_i^T||_F
    int best_iteration = 0;           // 1-based
    double error = 0.0;               // post_svd at best_iteration
    double naive_error = 0.0;         // ||W - deq(nf4(W))||_F
};

/// Alternating quantization and rank-r SVD fit of the residual. Returns the
/// iterate with the smallest post-SVD error.
LoftqResult loftq_init(const RealMatrix& w, int r, int bits = 4, int iters = 5);

/// deq(Q) + A B^T.
RealMatrix merge_adapters(const QuantizedMatrix& q, const LoraAdapter& ad);

}  // namespace phymt::lora
