// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include "phymt/channel_sim.hpp"
#include "phymt/numerics.hpp"

namespace phymt::prediction {

inline constexpr double kNmseFloorDb = -300.0;

/// One antenna's CSI history and target: rows are slots, the first M
/// columns hold real parts and the next M imaginary parts.
struct CpSample {
    RealMatrix history;  // T1 x 2M, noisy
    RealMatrix future;   // T2 x 2M, clean
    double velocity_mps = 0.0;
    double snr_db = 0.0;
};

struct NormStats {
    double mu = 0.0;
    double sigma = 1.0;
};

struct Normalized {
    RealMatrix x;
    NormStats stats;
};

/// Zero mean, unit population standard deviation over all entries.
/// Throws kDegenerateStats for a constant input.
Normalized normalize(const RealMatrix& x);
RealMatrix denormalize(const RealMatrix& x, const NormStats& stats);

/// Groups N consecutive rows into one row of width N * cols; the last
/// patch is zero padded when N does not divide the row count.
RealMatrix patchify(const RealMatrix& x, int n);

/// 10 log10(sum |pred - truth|^2 / sum |truth|^2), floored at -300 dB.
double nmse_db(const RealMatrix& pred, const RealMatrix& truth);

/// Per-column AR(order) least squares (ridge 1e-6) with a recursive forecast.
/// Constant columns are forecast as the constant.
RealMatrix ar_predict(const RealMatrix& history, int order, int horizon);

/// Rows [first, first + count) of one antenna, real/imag stacked.
RealMatrix antenna_rows(const chan::CsiSequence& seq, int antenna, int first, int count);

/// History from slots [0, t1) with AWGN at `snr_db`, future from [t1, t1 + t2).
CpSample make_cp_sample(const chan::CsiSequence& seq, int antenna, int t1, int t2, double snr_db, double velocity_mps,
                        SeededRng& rng);

}  // namespace phymt::prediction
