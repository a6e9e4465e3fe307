// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <vector>

#include "phymt/numerics.hpp"

namespace phymt::detection {

/// Square QAM with independent Gray coding on the I and Q axes.
///
/// `points[i]` is the constellation point carrying bit label `i`, so symbol
/// indices and labels coincide. Points have unit average energy.
struct Constellation {
    int order = 0;
    int bits_per_axis = 0;
    double scale = 0.0;  // grid spacing multiplier, 1/sqrt(2(P-1)/3)
    std::vector<Complex> points;

    static Constellation qam(int order);

    /// Label of the nearest point (minimum Euclidean distance).
    int nearest(Complex x) const;
};

ComplexVector qam_modulate(const std::vector<int>& indices, const Constellation& c);

/// One uplink observation block: the channel is fixed across the L0 slots,
/// symbols and noise are drawn independently per slot.
struct DetectionSample {
    ComplexMatrix h;             // N_T x K
    ComplexMatrix y;             // N_T x L0, one received vector per column
    ComplexMatrix x;             // K x L0
    std::vector<int> indices;    // K * L0, column-major over slots
    double sigma2 = 0.0;
    double snr_db = 0.0;
};

/// Noise variance for a received SNR: sigma2 = K * mean|h|^2 / 10^(snr/10),
/// i.e. the per-antenna received signal power over noise.
double noise_variance(const ComplexMatrix& h, double snr_db);

DetectionSample make_detection_sample(const ComplexMatrix& h, int slots, const Constellation& c, double snr_db,
                                      SeededRng& rng);

/// (H^H H + sigma2 I)^{-1} H^H y for each column of y.
ComplexMatrix lmmse_detect(const ComplexMatrix& h, const ComplexMatrix& y, double sigma2);

/// Exhaustive search over all P^K symbol vectors for one received vector.
/// Ties resolve to the lowest lexicographic index vector. Throws kCapacity
/// when P^K exceeds 2^20.
std::vector<int> ml_detect(const ComplexMatrix& h, const ComplexVector& y, const Constellation& c);

struct DemodResult {
    std::vector<int> indices;
    double ser = 0.0;
};

/// Nearest-point decisions on soft estimates (column-major over slots) and
/// the fraction that differ from `truth`.
DemodResult hard_demod_ser(const ComplexMatrix& soft, const std::vector<int>& truth, const Constellation& c);

/// Hamming distance between two labels.
int bit_distance(int a, int b);

}  // namespace phymt::detection
