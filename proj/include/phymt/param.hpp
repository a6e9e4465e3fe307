// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <string>
#include <vector>

#include "phymt/numerics.hpp"

namespace phymt {

/// A named weight with its gradient accumulator.
struct Param {
    std::string name;
    RealMatrix value;
    RealMatrix grad;
    bool trainable = true;

    Param() = default;
    Param(std::string n, RealMatrix v) : name(std::move(n)), value(std::move(v)), grad(RealMatrix::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
    Eigen::Index size() const { return value.size(); }
};

using ParamList = std::vector<Param*>;

inline void zero_grads(const ParamList& params) {
    for (Param* p : params) p->zero_grad();
}

}  // namespace phymt
