// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "phymt/precoding.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace phymt::precoding {

namespace {

void check_shapes(const ComplexMatrix& h, const PrecoderSet& w) {
    if (h.rows() != w.w.rows() || h.cols() != w.w.cols()) fail(ErrorKind::kShape, "precoder and channel shapes disagree");
}

ComplexMatrix identity(Eigen::Index n) { return ComplexMatrix::Identity(n, n); }

}  // namespace

double sinr(const ComplexMatrix& h, const PrecoderSet& w, double sigma2, int k) {
    check_shapes(h, w);
    if (k < 0 || k >= h.cols()) fail(ErrorKind::kInvalidInput, "sinr: user index out of range");
    const ComplexVector gains = h.col(k).adjoint() * w.w;  // h_k^H w_j for all j
    double interference = 0.0;
    for (Eigen::Index j = 0; j < gains.size(); ++j) {
        if (j != k) interference += std::norm(gains(j));
    }
    return std::norm(gains(k)) / (interference + sigma2);
}

double sum_rate(const ComplexMatrix& h, const PrecoderSet& w, double sigma2) {
    check_shapes(h, w);
    const ComplexMatrix g = h.adjoint() * w.w;
    double rate = 0.0;
    for (Eigen::Index k = 0; k < g.rows(); ++k) {
        double interference = 0.0;
        for (Eigen::Index j = 0; j < g.cols(); ++j) {
            if (j != k) interference += std::norm(g(k, j));
        }
        rate += std::log2(1.0 + std::norm(g(k, k)) / (interference + sigma2));
    }
    return rate;
}

PrecoderSet structured_precoder(const ComplexMatrix& h, const PowerParams& params, double sigma2) {
    const Eigen::Index k_users = h.cols();
    if (params.lambda.size() != k_users || params.p.size() != k_users) fail(ErrorKind::kShape, "structured_precoder: parameter count");
    if ((params.lambda.array() < 0).any() || (params.p.array() < 0).any()) {
        fail(ErrorKind::kInvalidInput, "structured_precoder: lambda and p must be nonnegative");
    }
    ComplexMatrix a = identity(h.rows());
    a.noalias() += h * (params.lambda / sigma2).cast<Complex>().asDiagonal() * h.adjoint();
    const ComplexMatrix v = solve_hermitian(a, h);
    PrecoderSet out{ComplexMatrix(h.rows(), k_users), params.p_max};
    for (Eigen::Index k = 0; k < k_users; ++k) {
        const double n = v.col(k).norm();
        if (!(n > 0.0) || !std::isfinite(n)) fail(ErrorKind::kSingularSystem, "structured_precoder: zero beam direction");
        out.w.col(k) = std::sqrt(params.p(k)) * v.col(k) / n;
    }
    return out;
}

PowerParams scale_to_budget(const RealVector& lambda_hat, const RealVector& p_hat, double p_max) {
    if (lambda_hat.size() != p_hat.size()) fail(ErrorKind::kShape, "scale_to_budget: length mismatch");
    if ((lambda_hat.array() < 0).any() || (p_hat.array() < 0).any()) fail(ErrorKind::kInvalidInput, "scale_to_budget: negative entry");
    const double l1 = lambda_hat.sum();
    const double p1 = p_hat.sum();
    if (!(l1 > 0.0) || !(p1 > 0.0)) fail(ErrorKind::kDegenerateOutput, "scale_to_budget: all-zero vector");
    return PowerParams{lambda_hat * (p_max / l1), p_hat * (p_max / p1), p_max};
}

PrecoderSet mrt_precoder(const ComplexMatrix& h, double p_max) {
    const Eigen::Index k_users = h.cols();
    PrecoderSet out{ComplexMatrix(h.rows(), k_users), p_max};
    const double per_user = std::sqrt(p_max / static_cast<double>(k_users));
    for (Eigen::Index k = 0; k < k_users; ++k) {
        const double n = h.col(k).norm();
        if (!(n > 0.0)) fail(ErrorKind::kInvalidInput, "mrt_precoder: zero channel");
        out.w.col(k) = per_user * h.col(k) / n;
    }
    return out;
}

PrecoderSet zf_precoder(const ComplexMatrix& h, double p_max, double /*sigma2*/) {
    const Eigen::Index k_users = h.cols();
    if (k_users > h.rows()) fail(ErrorKind::kSingularSystem, "zf_precoder: more users than antennas");
    const ComplexMatrix gram = h.adjoint() * h;
    const ComplexMatrix dirs = h * solve_hermitian(gram, identity(k_users));
    PrecoderSet out{ComplexMatrix(h.rows(), k_users), p_max};
    const double per_user = std::sqrt(p_max / static_cast<double>(k_users));
    for (Eigen::Index k = 0; k < k_users; ++k) {
        out.w.col(k) = per_user * dirs.col(k) / dirs.col(k).norm();
    }
    return out;
}

WmmseResult wmmse_precoder(const ComplexMatrix& h, double p_max, double sigma2, int iters) {
    if (iters < 1) fail(ErrorKind::kInvalidInput, "wmmse_precoder: iters must be >= 1");
    const Eigen::Index n = h.rows();
    const Eigen::Index k_users = h.cols();
    WmmseResult result{mrt_precoder(h, p_max), {}};
    result.rate_trace.reserve(static_cast<std::size_t>(iters));

    ComplexVector u(k_users);
    RealVector weight(k_users);
    for (int it = 0; it < iters; ++it) {
        const ComplexMatrix g = h.adjoint() * result.precoder.w;
        for (Eigen::Index k = 0; k < k_users; ++k) {
            const double received = g.row(k).squaredNorm() + sigma2;
            u(k) = g(k, k) / received;
            const double mse = 1.0 - std::norm(g(k, k)) / received;
            weight(k) = 1.0 / std::max(mse, 1e-300);
        }
        ComplexMatrix cov = ComplexMatrix::Zero(n, n);
        ComplexMatrix rhs(n, k_users);
        for (Eigen::Index k = 0; k < k_users; ++k) {
            cov.noalias() += (weight(k) * std::norm(u(k))) * h.col(k) * h.col(k).adjoint();
            rhs.col(k) = (weight(k) * u(k)) * h.col(k);
        }
        auto filter = [&](double nu) {
            ComplexMatrix a = cov;
            a.diagonal().array() += nu;
            return solve_hermitian(a, rhs);
        };
        const double scale = std::max(cov.diagonal().real().mean(), 1e-300);
        double nu_lo = 1e-12 * scale;
        ComplexMatrix w_lo = filter(nu_lo);
        ComplexMatrix w_next;
        if (w_lo.squaredNorm() <= p_max) {
            w_next = std::move(w_lo);
        } else {
            // ||(C + nu I)^{-1} B|| <= ||B|| / nu brackets the multiplier.
            double nu_hi = rhs.norm() / std::sqrt(p_max);
            if (!std::isfinite(nu_hi) || !(nu_hi > nu_lo)) fail(ErrorKind::kNumericalFailure, "wmmse: cannot bracket power multiplier");
            ComplexMatrix w_hi = filter(nu_hi);
            if (w_hi.squaredNorm() > p_max * (1 + 1e-12)) fail(ErrorKind::kNumericalFailure, "wmmse: cannot bracket power multiplier");
            for (int b = 0; b < 200 && (nu_hi - nu_lo) > 1e-15 * nu_hi; ++b) {
                const double mid = 0.5 * (nu_lo + nu_hi);
                ComplexMatrix w_mid = filter(mid);
                if (w_mid.squaredNorm() > p_max) {
                    nu_lo = mid;
                } else {
                    nu_hi = mid;
                    w_hi = std::move(w_mid);
                }
            }
            w_next = std::move(w_hi);
            w_next *= std::sqrt(p_max / w_next.squaredNorm());
        }
        result.precoder.w = std::move(w_next);
        result.rate_trace.push_back(sum_rate(h, result.precoder, sigma2));
    }
    return result;
}

RealVector project_simplex(const RealVector& x, double total) {
    const Eigen::Index n = x.size();
    std::vector<double> sorted(x.data(), x.data() + n);
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double cumulative = 0.0;
    double theta = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        cumulative += sorted[static_cast<std::size_t>(i)];
        const double t = (cumulative - total) / static_cast<double>(i + 1);
        if (sorted[static_cast<std::size_t>(i)] - t > 0) theta = t;
    }
    return (x.array() - theta).max(0.0).matrix();
}

double fit_objective(const ComplexMatrix& h, const RealVector& lambda, const RealVector& p, const ComplexMatrix& w_ref,
                     double sigma2, RealVector* grad) {
    const Eigen::Index k_users = h.cols();
    ComplexMatrix a = identity(h.rows());
    a.noalias() += h * (lambda / sigma2).cast<Complex>().asDiagonal() * h.adjoint();
    const ComplexMatrix v = solve_hermitian(a, h);
    const ComplexMatrix hv = h.adjoint() * v;      // (j, k) = h_j^H v_k
    const ComplexMatrix wv = w_ref.adjoint() * v;  // (k, j) = w_k^H v_j
    const ComplexMatrix vv = v.adjoint() * v;      // (k, j) = v_k^H v_j

    double f = 0.0;
    if (grad) grad->setZero(k_users);
    for (Eigen::Index k = 0; k < k_users; ++k) {
        const double nk = v.col(k).norm();
        const double sp = std::sqrt(p(k));
        const Complex ck = sp * wv(k, k) / nk;
        const double mag = std::abs(ck);
        f += p(k) + w_ref.col(k).squaredNorm() - 2.0 * mag;
        if (!grad || mag == 0.0) continue;
        for (Eigen::Index j = 0; j < k_users; ++j) {
            const Complex hjvk = hv(j, k);
            const Complex d_wv = -(hjvk * wv(k, j)) / sigma2;          // w_k^H dv_k
            const double d_n = -std::real(hjvk * vv(k, j)) / (sigma2 * nk);
            const Complex d_c = sp * (d_wv / nk - wv(k, k) * d_n / (nk * nk));
            (*grad)(j) += -2.0 * std::real(std::conj(ck) * d_c) / mag;
        }
    }
    return f;
}

namespace {

// Least-squares estimate of lambda from the stationarity relation
// w_k + sum_j (lambda_j / sigma2) (h_j^H w_k) h_j = c_k h_k.
RealVector stationarity_estimate(const ComplexMatrix& h, const ComplexMatrix& w, double sigma2) {
    const Eigen::Index n = h.rows();
    const Eigen::Index k_users = h.cols();
    const Eigen::Index vars = 3 * k_users;
    RealMatrix design = RealMatrix::Zero(2 * n * k_users, vars);
    RealMatrix target(2 * n * k_users, 1);
    const ComplexMatrix hw = h.adjoint() * w;  // (j, k) = h_j^H w_k
    for (Eigen::Index k = 0; k < k_users; ++k) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::Index re = 2 * (k * n + i);
            const Eigen::Index im = re + 1;
            for (Eigen::Index j = 0; j < k_users; ++j) {
                const Complex coeff = hw(j, k) * h(i, j) / sigma2;
                design(re, j) = coeff.real();
                design(im, j) = coeff.imag();
            }
            // -c_k h_k with c_k = a + i b
            design(re, k_users + 2 * k) = -h(i, k).real();
            design(im, k_users + 2 * k) = -h(i, k).imag();
            design(re, k_users + 2 * k + 1) = h(i, k).imag();
            design(im, k_users + 2 * k + 1) = -h(i, k).real();
            target(re, 0) = -w(i, k).real();
            target(im, 0) = -w(i, k).imag();
        }
    }
    RealMatrix normal = design.transpose() * design;
    normal.diagonal().array() += 1e-12 * std::max(normal.diagonal().maxCoeff(), 1e-300);
    const RealMatrix sol = solve_hermitian(normal, RealMatrix(design.transpose() * target));
    return sol.col(0).head(k_users);
}

}  // namespace

PowerFit fit_power_params(const PrecoderSet& w_ref, const ComplexMatrix& h, double sigma2, double p_max,
                          const FitOptions& options) {
    check_shapes(h, w_ref);
    const Eigen::Index k_users = h.cols();
    const double total = w_ref.total_power();
    if (!(total > 0.0)) fail(ErrorKind::kInvalidInput, "fit_power_params: zero precoder");

    PowerFit fit;
    fit.params.p_max = p_max;
    fit.params.p.resize(k_users);
    for (Eigen::Index k = 0; k < k_users; ++k) fit.params.p(k) = w_ref.w.col(k).squaredNorm() * p_max / total;
    const ComplexMatrix target = w_ref.w * std::sqrt(p_max / total);

    RealVector lambda = options.start == FitStart::kLeastSquares ? stationarity_estimate(h, target, sigma2)
                                                                 : RealVector(RealVector::Zero(k_users));
    lambda = project_simplex(lambda, p_max);

    RealVector grad;
    double f = fit_objective(h, lambda, fit.params.p, target, sigma2, &grad);
    double step = p_max / std::max(grad.norm(), 1e-300) * 0.1;
    int it = 0;
    bool converged = false;
    while (it < options.max_iters && !converged) {
        bool accepted = false;
        for (int halving = 0; halving < 60 && !accepted; ++halving) {
            const RealVector trial = project_simplex(lambda - step * grad, p_max);
            RealVector trial_grad;
            const double ft = fit_objective(h, trial, fit.params.p, target, sigma2, &trial_grad);
            if (ft < f) {
                converged = (f - ft) / std::max(std::abs(f), 1e-300) < options.rel_tol;
                lambda = trial;
                f = ft;
                grad = trial_grad;
                step *= 2.0;
                accepted = true;
            } else {
                step *= 0.5;
            }
        }
        if (!accepted) break;
        ++it;
    }
    fit.iterations = it;
    fit.params.lambda = lambda;
    fit.objective = f;
    fit.rate = sum_rate(h, structured_precoder(h, fit.params, sigma2), sigma2);
    fit.reference_rate = sum_rate(h, w_ref, sigma2);
    fit.label_quality_ok = fit.rate >= options.min_rate_ratio * fit.reference_rate;
    return fit;
}

}  // namespace phymt::precoding
