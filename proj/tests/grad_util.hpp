// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include "phymt/nn_core.hpp"

namespace phymt::testing {

/// Grad check of a layer-like object under the loss sum(Y .* R) for a fixed
/// random R, covering its parameters and its input.
template <typename Module>
nn::GradCheckResult check_layer(Module& m, const RealMatrix& x0, SeededRng& rng, int samples = 400) {
    Param input("input", x0);
    ParamList params;
    m.collect(params);
    params.push_back(&input);
    typename Module::Cache probe;
    const RealMatrix y0 = m.forward(x0, &probe);
    const RealMatrix r = randn(rng, y0.rows(), y0.cols());
    auto loss = [&] { return m.forward(input.value, nullptr).cwiseProduct(r).sum(); };
    auto backward = [&] {
        zero_grads(params);
        typename Module::Cache c;
        m.forward(input.value, &c);
        input.grad = m.backward(r, c);
    };
    return nn::grad_check(loss, backward, params, rng, samples);
}

}  // namespace phymt::testing
