// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// Feed-forward one-step predictor over a flattened window of latent vectors.

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "epitwin/autodiff.hpp"
#include "epitwin/optim.hpp"
#include "epitwin/weights.hpp"

namespace epitwin::nn {

struct FfnHyper {
    int window = 8;
    int hidden = 64;
    int hidden_layers = 2;
    int epochs = 500;
    int batch_size = 32;
    double train_fraction = 0.9;
    OptimConfig optim{};
    std::uint64_t seed = 1;
};

struct FfnModel {
    WeightStore store;
    int window = 0;
    int components = 0;
    int hidden_layers = 0;
    std::vector<double> train_loss;
    std::vector<double> test_loss;

    bool trained() const;
};

/// Untrained network (Glorot weights, identity scalers).
FfnModel make_ffn(int window, int components, int hidden, int hidden_layers, std::uint64_t seed);
/// Rebuilds the structural fields from a loaded store.
FfnModel ffn_from_store(WeightStore store);

/// Scaled forward pass on the tape: x [B, N*M] -> [B, M].
Var ffn_forward(Tape& t, const FfnModel& model, Var x, bool trainable = true);

FfnModel train_ffn(const Eigen::MatrixXd& latents, const FfnHyper& hyper);
/// window: N x M latent rows, oldest first. Throws if untrained or misshaped.
Eigen::RowVectorXd ffn_predict(const FfnModel& model, const Eigen::MatrixXd& window);

}  // namespace epitwin::nn
