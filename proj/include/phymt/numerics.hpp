// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "phymt/error.hpp"

namespace phymt {

using Complex = std::complex<double>;

// Row-major dense storage. Eigen provides storage and products only; the
// factorizations below are implemented here.
using ComplexMatrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RealMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ComplexVector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

/// xoshiro256** seeded through splitmix64.
///
/// The state is derived as splitmix64 applied four times to
/// `seed ^ (0x9E3779B97F4A7C15 * (stream + 1))`. Gaussian draws use the
/// polar-free Box-Muller form on two 53-bit uniforms, so sequences are
/// reproducible on any IEEE-754 platform with a correctly rounded libm.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0, std::uint64_t stream = 0);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n);
    double normal();
    /// Circularly-symmetric complex Gaussian with unit variance.
    Complex cnormal();

    /// Independent generator for sub-task `stream`; does not advance this one.
    SeededRng split(std::uint64_t stream) const;

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

template <typename Scalar>
struct SvdResult {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Matrix u;          // rows x d, orthonormal columns
    RealVector s;      // d, descending
    Matrix v;          // cols x d, orthonormal columns
};

/// Thin SVD by one-sided (Hestenes) Jacobi rotations, d = min(rows, cols).
///
/// M = U diag(S) V^H. The first nonzero entry of every left singular vector
/// is real and nonnegative. Throws kInvalidInput on non-finite entries.
SvdResult<Complex> svd(const ComplexMatrix& m);
SvdResult<double> svd(const RealMatrix& m);

/// Solves A X = B for Hermitian positive-definite A via Cholesky.
/// Throws kSingularSystem when a pivot is not positive.
ComplexMatrix solve_hermitian(const ComplexMatrix& a, const ComplexMatrix& b);
RealMatrix solve_hermitian(const RealMatrix& a, const RealMatrix& b);

/// rows x cols matrix of i.i.d. CN(0, 1) entries.
ComplexMatrix crandn(SeededRng& rng, Eigen::Index rows, Eigen::Index cols);
RealMatrix randn(SeededRng& rng, Eigen::Index rows, Eigen::Index cols);

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

}  // namespace phymt
