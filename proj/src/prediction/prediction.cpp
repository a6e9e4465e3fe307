// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "phymt/prediction.hpp"

#include <algorithm>
#include <cmath>

namespace phymt::prediction {

Normalized normalize(const RealMatrix& x) {
    if (x.size() == 0 || !x.allFinite()) fail(ErrorKind::kInvalidInput, "normalize: empty or non-finite input");
    const double mu = x.mean();
    const double var = (x.array() - mu).square().mean();
    const double sigma = std::sqrt(var);
    // Rounding leaves sigma near 1e-17 * |x| for a constant input.
    if (!(sigma > 1e-12 * x.cwiseAbs().maxCoeff())) fail(ErrorKind::kDegenerateStats, "normalize: input is constant");
    return {((x.array() - mu) / sigma).matrix(), {mu, sigma}};
}

RealMatrix denormalize(const RealMatrix& x, const NormStats& stats) {
    return (x.array() * stats.sigma + stats.mu).matrix();
}

RealMatrix patchify(const RealMatrix& x, int n) {
    if (n < 1) fail(ErrorKind::kInvalidInput, "patchify: patch size must be >= 1");
    const Eigen::Index rows = x.rows();
    const Eigen::Index cols = x.cols();
    const Eigen::Index patches = (rows + n - 1) / n;
    RealMatrix out = RealMatrix::Zero(patches, n * cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        out.block(r / n, (r % n) * cols, 1, cols) = x.row(r);
    }
    return out;
}

double nmse_db(const RealMatrix& pred, const RealMatrix& truth) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) fail(ErrorKind::kShape, "nmse_db: shape mismatch");
    const double denom = truth.squaredNorm();
    if (!(denom > 0.0)) fail(ErrorKind::kInvalidInput, "nmse_db: zero reference");
    const double num = (pred - truth).squaredNorm();
    if (num <= 0.0) return kNmseFloorDb;
    return std::max(kNmseFloorDb, 10.0 * std::log10(num / denom));
}

RealMatrix ar_predict(const RealMatrix& history, int order, int horizon) {
    const Eigen::Index t1 = history.rows();
    if (order < 1 || t1 <= order) fail(ErrorKind::kInvalidInput, "ar_predict: need history longer than the order");
    if (horizon < 1) fail(ErrorKind::kInvalidInput, "ar_predict: horizon must be >= 1");
    constexpr double kRidge = 1e-6;
    RealMatrix out(horizon, history.cols());
    const Eigen::Index n = t1 - order;
    for (Eigen::Index c = 0; c < history.cols(); ++c) {
        const auto col = history.col(c);
        if (col.maxCoeff() == col.minCoeff()) {
            out.col(c).setConstant(col(0));
            continue;
        }
        RealMatrix design(n, order);
        RealMatrix target(n, 1);
        for (Eigen::Index t = order; t < t1; ++t) {
            for (int i = 0; i < order; ++i) design(t - order, i) = col(t - 1 - i);
            target(t - order, 0) = col(t);
        }
        RealMatrix normal = design.transpose() * design;
        normal.diagonal().array() += kRidge;
        RealMatrix coeff;
        try {
            coeff = solve_hermitian(normal, RealMatrix(design.transpose() * target));
        } catch (const Error&) {
            fail(ErrorKind::kNumericalFailure, "ar_predict: ill-conditioned design matrix");
        }
        if (!coeff.allFinite()) fail(ErrorKind::kNumericalFailure, "ar_predict: non-finite coefficients");

        std::vector<double> series(static_cast<std::size_t>(t1));
        for (Eigen::Index t = 0; t < t1; ++t) series[static_cast<std::size_t>(t)] = col(t);
        for (int s = 0; s < horizon; ++s) {
            double next = 0.0;
            for (int i = 0; i < order; ++i) next += coeff(i, 0) * series[series.size() - 1 - static_cast<std::size_t>(i)];
            series.push_back(next);
            out(s, c) = next;
        }
    }
    return out;
}

RealMatrix antenna_rows(const chan::CsiSequence& seq, int antenna, int first, int count) {
    if (first < 0 || first + count > seq.slot_count()) fail(ErrorKind::kInvalidInput, "antenna_rows: slot range out of bounds");
    const Eigen::Index m = seq.slots.front().cols();
    RealMatrix out(count, 2 * m);
    for (int t = 0; t < count; ++t) {
        const auto row = seq.slots[static_cast<std::size_t>(first + t)].row(antenna);
        out.block(t, 0, 1, m) = row.real();
        out.block(t, m, 1, m) = row.imag();
    }
    return out;
}

CpSample make_cp_sample(const chan::CsiSequence& seq, int antenna, int t1, int t2, double snr_db, double velocity_mps,
                        SeededRng& rng) {
    if (seq.slot_count() < t1 + t2) fail(ErrorKind::kInvalidInput, "make_cp_sample: sequence shorter than T1 + T2");
    const Eigen::Index m = seq.slots.front().cols();
    ComplexMatrix clean(t1, m);
    for (int t = 0; t < t1; ++t) clean.row(t) = seq.slots[static_cast<std::size_t>(t)].row(antenna);
    const ComplexMatrix noisy = chan::add_awgn(clean, snr_db, rng);
    CpSample s;
    s.history.resize(t1, 2 * m);
    s.history.leftCols(m) = noisy.real();
    s.history.rightCols(m) = noisy.imag();
    s.future = antenna_rows(seq, antenna, t1, t2);
    s.velocity_mps = velocity_mps;
    s.snr_db = snr_db;
    return s;
}

}  // namespace phymt::prediction
