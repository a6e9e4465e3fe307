// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "phymt/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace phymt {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::kInvalidInput: return "invalid input";
        case ErrorKind::kSingularSystem: return "singular system";
        case ErrorKind::kNumericalFailure: return "numerical failure";
        case ErrorKind::kShape: return "shape error";
        case ErrorKind::kFormat: return "format error";
        case ErrorKind::kCorruptFile: return "corrupt file";
        case ErrorKind::kIo: return "i/o error";
        case ErrorKind::kCapacity: return "capacity error";
        case ErrorKind::kDegenerateOutput: return "degenerate output";
        case ErrorKind::kDegenerateStats: return "degenerate statistics";
        case ErrorKind::kInvalidRank: return "invalid rank";
        case ErrorKind::kMissingData: return "missing data";
        case ErrorKind::kValidation: return "validation error";
    }
    return "error";
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
    std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
    for (auto& s : s_) s = splitmix64(x);
}

std::uint64_t SeededRng::next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t SeededRng::below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
        r = next_u64();
    } while (r >= limit);
    return r % n;
}

double SeededRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

Complex SeededRng::cnormal() {
    const double re = normal();
    const double im = normal();
    return {re * M_SQRT1_2, im * M_SQRT1_2};
}

SeededRng SeededRng::split(std::uint64_t stream) const {
    std::uint64_t x = seed_ ^ rotl(stream_ + 0x632BE59BD9B4E019ULL, 17);
    return SeededRng(splitmix64(x), stream);
}

ComplexMatrix crandn(SeededRng& rng, Eigen::Index rows, Eigen::Index cols) {
    if (rows < 1 || cols < 1) fail(ErrorKind::kInvalidInput, "crandn: rows and cols must be >= 1");
    ComplexMatrix out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = rng.cnormal();
    return out;
}

RealMatrix randn(SeededRng& rng, Eigen::Index rows, Eigen::Index cols) {
    if (rows < 1 || cols < 1) fail(ErrorKind::kInvalidInput, "randn: rows and cols must be >= 1");
    RealMatrix out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = rng.normal();
    return out;
}

namespace {

template <typename T>
double magnitude(const T& x) {
    return std::abs(x);
}

template <typename T>
T unit_phase(const T& x) {
    if constexpr (std::is_same_v<T, double>) {
        return x < 0 ? -1.0 : 1.0;
    } else {
        const double r = std::abs(x);
        return r > 0 ? x / r : T(1.0);
    }
}

template <typename T>
T conjugate(const T& x) {
    if constexpr (std::is_same_v<T, double>) {
        return x;
    } else {
        return std::conj(x);
    }
}

template <typename T>
using ColMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// Tall case: rows >= cols.
template <typename T>
SvdResult<T> jacobi_svd_tall(ColMatrix<T> a) {
    const Eigen::Index m = a.rows();
    const Eigen::Index n = a.cols();
    ColMatrix<T> v = ColMatrix<T>::Identity(n, n);
    constexpr double kTol = 1e-15;
    constexpr int kMaxSweeps = 80;

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (Eigen::Index p = 0; p + 1 < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double alpha = a.col(p).squaredNorm();
                const double beta = a.col(q).squaredNorm();
                const T gamma = a.col(p).dot(a.col(q));  // a_p^H a_q
                const double g = magnitude(gamma);
                if (g == 0.0 || g <= kTol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const T phase_conj = conjugate(unit_phase(gamma));
                const double zeta = (beta - alpha) / (2.0 * g);
                const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (Eigen::Index i = 0; i < m; ++i) {
                    const T ap = a(i, p);
                    const T bq = a(i, q) * phase_conj;
                    a(i, p) = c * ap - s * bq;
                    a(i, q) = s * ap + c * bq;
                }
                for (Eigen::Index i = 0; i < n; ++i) {
                    const T vp = v(i, p);
                    const T vq = v(i, q) * phase_conj;
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> norms(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) norms[static_cast<std::size_t>(j)] = a.col(j).norm();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
        return norms[static_cast<std::size_t>(x)] > norms[static_cast<std::size_t>(y)];
    });

    SvdResult<T> out;
    out.u.resize(m, n);
    out.v.resize(n, n);
    out.s.resize(n);
    const double s_max = n > 0 ? norms[static_cast<std::size_t>(order[0])] : 0.0;
    std::vector<bool> defined(static_cast<std::size_t>(n), false);
    for (Eigen::Index j = 0; j < n; ++j) {
        const Eigen::Index src = order[static_cast<std::size_t>(j)];
        const double sj = norms[static_cast<std::size_t>(src)];
        out.s(j) = sj;
        out.v.col(j) = v.col(src);
        if (sj > 0.0 && sj > 1e-13 * s_max) {
            out.u.col(j) = a.col(src) / sj;
            defined[static_cast<std::size_t>(j)] = true;
        }
    }
    // Complete the left basis where singular values vanish.
    Eigen::Index probe = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (defined[static_cast<std::size_t>(j)]) continue;
        while (true) {
            if (probe >= m) fail(ErrorKind::kNumericalFailure, "svd: cannot complete left basis");
            Eigen::Matrix<T, Eigen::Dynamic, 1> cand = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(m);
            cand(probe++) = T(1.0);
            for (int pass = 0; pass < 2; ++pass) {
                for (Eigen::Index k = 0; k < n; ++k) {
                    if (k == j || !defined[static_cast<std::size_t>(k)]) continue;
                    const T proj = out.u.col(k).dot(cand);
                    cand -= proj * out.u.col(k);
                }
            }
            const double nrm = cand.norm();
            if (nrm > 0.5) {
                out.u.col(j) = cand / nrm;
                defined[static_cast<std::size_t>(j)] = true;
                break;
            }
        }
    }
    return out;
}

template <typename T>
void apply_phase_convention(SvdResult<T>& r) {
    for (Eigen::Index j = 0; j < r.u.cols(); ++j) {
        for (Eigen::Index i = 0; i < r.u.rows(); ++i) {
            const T x = r.u(i, j);
            if (magnitude(x) > 1e-12) {
                const T fix = conjugate(unit_phase(x));
                r.u.col(j) *= fix;
                r.v.col(j) *= fix;
                r.u(i, j) = T(magnitude(r.u(i, j)));
                break;
            }
        }
    }
}

template <typename T>
SvdResult<T> svd_impl(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& m) {
    if (m.rows() < 1 || m.cols() < 1) fail(ErrorKind::kInvalidInput, "svd: empty matrix");
    if (!m.allFinite()) fail(ErrorKind::kInvalidInput, "svd: non-finite entry");
    SvdResult<T> r;
    if (m.rows() >= m.cols()) {
        r = jacobi_svd_tall<T>(ColMatrix<T>(m));
    } else {
        SvdResult<T> t = jacobi_svd_tall<T>(ColMatrix<T>(m.adjoint()));
        r.u = std::move(t.v);
        r.v = std::move(t.u);
        r.s = std::move(t.s);
    }
    apply_phase_convention(r);
    return r;
}

template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cholesky_solve(
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& a,
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& b) {
    const Eigen::Index n = a.rows();
    if (a.cols() != n || b.rows() != n) fail(ErrorKind::kShape, "solve_hermitian: shape mismatch");
    if (!a.allFinite() || !b.allFinite()) fail(ErrorKind::kInvalidInput, "solve_hermitian: non-finite entry");
    double diag_scale = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) diag_scale = std::max(diag_scale, magnitude(a(i, i)));

    ColMatrix<T> l = ColMatrix<T>::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double d = std::real(a(j, j));
        for (Eigen::Index k = 0; k < j; ++k) d -= std::norm(l(j, k));
        if (!(d > 1e-14 * diag_scale)) fail(ErrorKind::kSingularSystem, "solve_hermitian: matrix not positive definite");
        const double ljj = std::sqrt(d);
        l(j, j) = T(ljj);
        for (Eigen::Index i = j + 1; i < n; ++i) {
            T sum = a(i, j);
            for (Eigen::Index k = 0; k < j; ++k) sum -= l(i, k) * conjugate(l(j, k));
            l(i, j) = sum / ljj;
        }
    }
    // L Y = B, then L^H X = Y.
    ColMatrix<T> x(b);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        for (Eigen::Index i = 0; i < n; ++i) {
            T sum = x(i, c);
            for (Eigen::Index k = 0; k < i; ++k) sum -= l(i, k) * x(k, c);
            x(i, c) = sum / l(i, i);
        }
        for (Eigen::Index i = n - 1; i >= 0; --i) {
            T sum = x(i, c);
            for (Eigen::Index k = i + 1; k < n; ++k) sum -= conjugate(l(k, i)) * x(k, c);
            x(i, c) = sum / l(i, i);
        }
    }
    return x;
}

}  // namespace

SvdResult<Complex> svd(const ComplexMatrix& m) { return svd_impl<Complex>(m); }
SvdResult<double> svd(const RealMatrix& m) { return svd_impl<double>(m); }

ComplexMatrix solve_hermitian(const ComplexMatrix& a, const ComplexMatrix& b) { return cholesky_solve<Complex>(a, b); }
RealMatrix solve_hermitian(const RealMatrix& a, const RealMatrix& b) { return cholesky_solve<double>(a, b); }

}  // namespace phymt
