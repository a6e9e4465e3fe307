// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <vector>

#include "phymt/numerics.hpp"

namespace phymt::precoding {

/// Downlink beamformers, one column per user. Channels use the same layout:
/// H is N_T x K with h_k in column k.
struct PrecoderSet {
    ComplexMatrix w;
    double p_max = 0.0;

    double total_power() const { return w.squaredNorm(); }
};

/// The 2K scalars of the optimal beamformer structure.
struct PowerParams {
    RealVector lambda;
    RealVector p;
    double p_max = 0.0;
};

double sinr(const ComplexMatrix& h, const PrecoderSet& w, double sigma2, int k);
double sum_rate(const ComplexMatrix& h, const PrecoderSet& w, double sigma2);

/// w_k = sqrt(p_k) * normalize((I + sum_j lambda_j / sigma2 h_j h_j^H)^{-1} h_k).
PrecoderSet structured_precoder(const ComplexMatrix& h, const PowerParams& params, double sigma2);

/// Rescales both vectors to sum to p_max. Throws kDegenerateOutput on a zero vector.
PowerParams scale_to_budget(const RealVector& lambda_hat, const RealVector& p_hat, double p_max);

/// Pseudo-inverse directions with equal per-user power p_max / K.
PrecoderSet zf_precoder(const ComplexMatrix& h, double p_max, double sigma2);

/// MRT directions with equal power; the WMMSE starting point.
PrecoderSet mrt_precoder(const ComplexMatrix& h, double p_max);

struct WmmseResult {
    PrecoderSet precoder;
    std::vector<double> rate_trace;  // sum rate after each iteration
};

/// Weighted-MMSE alternating optimization. The transmit-filter step solves
/// the power multiplier by bisection so that the budget is met exactly
/// whenever it is active.
WmmseResult wmmse_precoder(const ComplexMatrix& h, double p_max, double sigma2, int iters = 20);

enum class FitStart {
    kLeastSquares,  // stationarity least-squares estimate projected on the simplex
    kZero,          // lambda = 0, projected on the simplex (uniform)
};

struct FitOptions {
    FitStart start = FitStart::kLeastSquares;
    int max_iters = 500;
    double rel_tol = 1e-8;
    double min_rate_ratio = 0.99;
};

struct PowerFit {
    PowerParams params;
    double objective = 0.0;        // phase-aligned sum_k ||w_hat_k - w_k||^2
    double rate = 0.0;             // sum rate of the reconstructed precoder
    double reference_rate = 0.0;   // sum rate of the fitted precoder
    int iterations = 0;
    bool label_quality_ok = true;  // rate >= min_rate_ratio * reference_rate
};

/// Extracts (lambda, p) labels from a precoder: p_k = ||w_k||^2 rescaled to
/// p_max, lambda by projected gradient with step halving on the simplex.
PowerFit fit_power_params(const PrecoderSet& w_ref, const ComplexMatrix& h, double sigma2, double p_max,
                          const FitOptions& options = {});

/// Objective and gradient used by the fit; exposed for testing.
double fit_objective(const ComplexMatrix& h, const RealVector& lambda, const RealVector& p, const ComplexMatrix& w_ref,
                     double sigma2, RealVector* grad);

/// Euclidean projection onto {x >= 0, sum x = total}.
RealVector project_simplex(const RealVector& x, double total);

}  // namespace phymt::precoding
