// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// LSTM cell, bidirectional one-step predictor over latent windows and its
// free-running rollout.

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "epitwin/autodiff.hpp"
#include "epitwin/layers.hpp"
#include "epitwin/optim.hpp"
#include "epitwin/weights.hpp"

namespace epitwin::lstm {

/// Gate blocks are stacked along the last axis in the order i, f, o, c.
struct LstmCellWeights {
    nn::Tensor wx;  ///< [input, 4H]
    nn::Tensor wh;  ///< [H, 4H]
    nn::Tensor b;   ///< [4H]
    int hidden = 0;
};

struct CellState {
    Eigen::RowVectorXd h;
    Eigen::RowVectorXd c;
};

/// One step for a single sample.
CellState lstm_cell_forward(const Eigen::RowVectorXd& x, const CellState& prev, const LstmCellWeights& w);

/// Tape version over a batch: x [B, in], h/c [B, H]. Returns (h, c).
std::pair<nn::Var, nn::Var> lstm_cell(nn::Tape& t, nn::Var x, nn::Var h, nn::Var c, nn::Var wx, nn::Var wh, nn::Var b, int hidden);

struct BdlstmHyper {
    int window = 8;
    int hidden = 64;
    double dropout = 0.5;
    int epochs = 500;
    int batch_size = 32;
    double train_fraction = 0.9;
    nn::OptimConfig optim{nn::Algorithm::Nadam, 1.0e-3, 0.9, 0.999, 1.0e-7};
    /// Latents are mapped per component onto [scale_lo, scale_hi].
    double scale_lo = 0.05;
    double scale_hi = 0.95;
    std::uint64_t seed = 1;
};

struct BdlstmModel {
    nn::WeightStore store;
    int window = 0;
    int components = 0;
    int hidden = 0;
    std::vector<double> train_loss;
    std::vector<double> test_loss;

    LstmCellWeights cell(bool backward) const;
    nn::AffineScaler scaler() const;
    bool trained() const;
};

BdlstmModel make_bdlstm(int window, int components, int hidden, std::uint64_t seed);
BdlstmModel bdlstm_from_store(nn::WeightStore store);

/// Scaled-space forward over a batch. `windows` is [B, N, M] already scaled.
/// With a dropout mask ([B, 2H], entries 0 or 1/keep) the head sees the masked
/// concatenation.
nn::Var bdlstm_tape(nn::Tape& t, const BdlstmModel& model, const nn::Tensor& windows, const nn::Tensor* dropout_mask,
                    bool trainable = true);

/// Final hidden states of the forward and backward passes for one scaled
/// window (N x M), without the head.
std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> bdlstm_states(const BdlstmModel& model, const Eigen::MatrixXd& scaled_window);

/// One-step prediction in latent units. window: N x M, oldest first.
Eigen::RowVectorXd bdlstm_forward(const BdlstmModel& model, const Eigen::MatrixXd& window);

BdlstmModel train_bdlstm(const Eigen::MatrixXd& latents, const BdlstmHyper& hyper);

/// Autoregressive rollout. Returns the initial window followed by n_levels
/// predictions ((N + n_levels) x M).
Eigen::MatrixXd rollout_free(const BdlstmModel& model, const Eigen::MatrixXd& initial_window, int n_levels);

}  // namespace epitwin::lstm
