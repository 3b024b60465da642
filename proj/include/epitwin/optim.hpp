// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "epitwin/weights.hpp"

namespace epitwin::nn {

enum class Algorithm { Adam, Nadam };

Algorithm algorithm_from_string(const std::string& s);
const char* to_string(Algorithm a);

struct OptimConfig {
    Algorithm algorithm = Algorithm::Adam;
    double learning_rate = 1.0e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1.0e-7;

    void validate() const;
};

/// One Adam / Nadam update of every trainable entry that has a gradient.
/// Entries without a gradient are left alone (moments included). The store's
/// step counter is incremented once.
void optimizer_step(WeightStore& store, const Gradients& grads, const OptimConfig& config);

}  // namespace epitwin::nn
