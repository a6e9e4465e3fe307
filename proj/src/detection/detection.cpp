// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "phymt/detection.hpp"

#include <bit>
#include <cmath>
#include <limits>

namespace phymt::detection {

Constellation Constellation::qam(int order) {
    int bits = 0;
    while ((1 << bits) < order) ++bits;
    if (order < 4 || (1 << bits) != order || bits % 2 != 0) fail(ErrorKind::kInvalidInput, "qam: order must be 4, 16, 64, ...");
    Constellation c;
    c.order = order;
    c.bits_per_axis = bits / 2;
    const int side = 1 << c.bits_per_axis;
    c.scale = 1.0 / std::sqrt(2.0 * (order - 1) / 3.0);
    c.points.assign(static_cast<std::size_t>(order), Complex{});
    for (int ix = 0; ix < side; ++ix) {
        for (int iq = 0; iq < side; ++iq) {
            const int gray_i = ix ^ (ix >> 1);
            const int gray_q = iq ^ (iq >> 1);
            const int label = (gray_i << c.bits_per_axis) | gray_q;
            const double re = (2 * ix - (side - 1)) * c.scale;
            const double im = (2 * iq - (side - 1)) * c.scale;
            c.points[static_cast<std::size_t>(label)] = Complex(re, im);
        }
    }
    return c;
}

int Constellation::nearest(Complex x) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < order; ++i) {
        const double d = std::norm(x - points[static_cast<std::size_t>(i)]);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

ComplexVector qam_modulate(const std::vector<int>& indices, const Constellation& c) {
    ComplexVector out(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx < 0 || idx >= c.order) fail(ErrorKind::kInvalidInput, "qam_modulate: symbol index out of range");
        out(static_cast<Eigen::Index>(i)) = c.points[static_cast<std::size_t>(idx)];
    }
    return out;
}

double noise_variance(const ComplexMatrix& h, double snr_db) {
    return static_cast<double>(h.cols()) * h.cwiseAbs2().mean() / std::pow(10.0, snr_db / 10.0);
}

DetectionSample make_detection_sample(const ComplexMatrix& h, int slots, const Constellation& c, double snr_db,
                                      SeededRng& rng) {
    if (slots < 1) fail(ErrorKind::kInvalidInput, "make_detection_sample: slots must be >= 1");
    DetectionSample s;
    s.h = h;
    s.snr_db = snr_db;
    s.sigma2 = noise_variance(h, snr_db);
    const Eigen::Index k_users = h.cols();
    s.x.resize(k_users, slots);
    s.indices.resize(static_cast<std::size_t>(k_users * slots));
    for (int l = 0; l < slots; ++l) {
        for (Eigen::Index k = 0; k < k_users; ++k) {
            const int idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.order)));
            s.indices[static_cast<std::size_t>(l * k_users + k)] = idx;
            s.x(k, l) = c.points[static_cast<std::size_t>(idx)];
        }
    }
    s.y = h * s.x;
    const double std_dev = std::sqrt(s.sigma2);
    for (Eigen::Index i = 0; i < s.y.size(); ++i) s.y.data()[i] += std_dev * rng.cnormal();
    return s;
}

ComplexMatrix lmmse_detect(const ComplexMatrix& h, const ComplexMatrix& y, double sigma2) {
    if (h.rows() != y.rows()) fail(ErrorKind::kShape, "lmmse_detect: channel and observation rows differ");
    if (sigma2 < 0) fail(ErrorKind::kInvalidInput, "lmmse_detect: negative noise variance");
    ComplexMatrix gram = h.adjoint() * h;
    gram.diagonal().array() += sigma2;
    return solve_hermitian(gram, ComplexMatrix(h.adjoint() * y));
}

std::vector<int> ml_detect(const ComplexMatrix& h, const ComplexVector& y, const Constellation& c) {
    const auto k_users = static_cast<int>(h.cols());
    if (h.rows() != y.size()) fail(ErrorKind::kShape, "ml_detect: channel and observation rows differ");
    const double log_count = k_users * std::log2(static_cast<double>(c.order));
    if (log_count > 20.0) fail(ErrorKind::kCapacity, "ml_detect: P^K exceeds 2^20 candidates");

    // Column contributions h_k * s for each user and symbol.
    std::vector<ComplexMatrix> contrib(static_cast<std::size_t>(k_users));
    for (int k = 0; k < k_users; ++k) {
        contrib[static_cast<std::size_t>(k)] = h.col(k) * Eigen::Map<const ComplexVector>(c.points.data(), c.order).transpose();
    }
    std::vector<int> idx(static_cast<std::size_t>(k_users), 0);
    std::vector<int> best = idx;
    double best_d = std::numeric_limits<double>::infinity();
    ComplexVector r(h.rows());
    while (true) {
        r = y;
        for (int k = 0; k < k_users; ++k) r -= contrib[static_cast<std::size_t>(k)].col(idx[static_cast<std::size_t>(k)]);
        const double d = r.squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = idx;
        }
        // Odometer with the last user fastest: lexicographic order.
        int pos = k_users - 1;
        while (pos >= 0 && ++idx[static_cast<std::size_t>(pos)] == c.order) {
            idx[static_cast<std::size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
    }
    return best;
}

DemodResult hard_demod_ser(const ComplexMatrix& soft, const std::vector<int>& truth, const Constellation& c) {
    if (static_cast<std::size_t>(soft.size()) != truth.size()) fail(ErrorKind::kShape, "hard_demod_ser: size mismatch");
    DemodResult out;
    out.indices.resize(truth.size());
    std::size_t errors = 0;
    // soft is K x L; truth is stored column by column.
    for (Eigen::Index l = 0; l < soft.cols(); ++l) {
        for (Eigen::Index k = 0; k < soft.rows(); ++k) {
            const auto pos = static_cast<std::size_t>(l * soft.rows() + k);
            out.indices[pos] = c.nearest(soft(k, l));
            if (out.indices[pos] != truth[pos]) ++errors;
        }
    }
    out.ser = truth.empty() ? 0.0 : static_cast<double>(errors) / static_cast<double>(truth.size());
    return out;
}

int bit_distance(int a, int b) { return std::popcount(static_cast<unsigned>(a ^ b)); }

}  // namespace phymt::detection
