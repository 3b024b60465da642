// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// DCGAN-style generator/discriminator over windows of latent vectors, latent
// inversion against known rows and the predictive rollout built on it.

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "epitwin/assimilation.hpp"
#include "epitwin/autodiff.hpp"
#include "epitwin/layers.hpp"
#include "epitwin/optim.hpp"
#include "epitwin/weights.hpp"

namespace epitwin::gan {

struct GanHyper {
    int latent = 100;
    int rows = 9;         ///< window length N (multiple of 3)
    int components = 15;  ///< M (multiple of 3)
    int g_channels = 64;  ///< channels after the dense projection
    int g_mid = 32;       ///< channels after the first transposed conv
    int d_channels1 = 16;
    int d_channels2 = 32;
    int iterations = 5000;
    int batch_size = 256;
    double dropout = 0.3;
    double bn_eps = 1.0e-3;
    double bn_momentum = 0.99;
    nn::OptimConfig optim{nn::Algorithm::Adam, 1.0e-3, 0.9, 0.999, 1.0e-7};
    std::uint64_t seed = 1;

    void validate() const;
};

struct GanModel {
    nn::WeightStore gen;
    nn::WeightStore disc;
    GanHyper hyper;
    std::vector<double> d_loss;
    std::vector<double> g_loss;

    /// Per-component map from latent units to the generator's [-1, 1] range.
    nn::AffineScaler scaler() const;
};

GanModel make_gan(const GanHyper& hyper);
/// Restores the structural fields from two loaded stores.
GanModel gan_from_stores(nn::WeightStore gen, nn::WeightStore disc);

/// Batch-norm statistics produced by a training-mode generator pass.
struct BnBatch {
    std::vector<double> mean0, var0, mean1, var1;
};

/// z [B, L] -> [B, N, M] in scaled units. Training mode uses batch statistics
/// (and reports them through `stats`), inference mode the running ones.
nn::Var generator_tape(nn::Tape& t, const GanModel& model, nn::Var z, bool training, bool trainable, BnBatch* stats = nullptr);
/// y [B, N, M] scaled -> logits [B, 1]. `masks` holds one dropout mask per
/// conv block (empty for inference).
nn::Var discriminator_tape(nn::Tape& t, const GanModel& model, nn::Var y, const std::vector<nn::Tensor>& masks, bool trainable);
/// Dropout masks for a batch (entries 0 or 1/keep).
std::vector<nn::Tensor> discriminator_masks(const GanModel& model, int batch, Rng& rng);

/// Inference-mode generator output in latent units (N x M).
Eigen::MatrixXd generator_forward(const GanModel& model, const Eigen::VectorXd& z);
/// Probability that the window (latent units) is real.
double discriminator_forward(const GanModel& model, const Eigen::MatrixXd& window);

/// Adversarial training on stride-1 windows drawn from all levels.
GanModel train_gan(const Eigen::MatrixXd& latents, const GanHyper& hyper);

struct LatentOptSettings {
    double learning_rate = 0.01;
    int max_steps = 2000;
    int patience = 50;
    double rel_tol = 1.0e-6;
    int restarts = 5;
};

struct LatentOptResult {
    Eigen::VectorXd z;
    std::vector<double> loss;  ///< objective per step, starting at z_init
    double initial_loss = 0.0;
    double final_loss = 0.0;   ///< objective at the returned z
};

/// Weighted mismatch sum_j (x_j - G(z)_j)^T W (x_j - G(z)_j) over the first
/// N-1 generator rows, in latent units.
double latent_objective(const GanModel& model, const Eigen::MatrixXd& known, const Eigen::MatrixXd& w_alpha, const Eigen::VectorXd& z);

/// Adam on z through the frozen generator. Returns the best z seen, so the
/// final objective never exceeds the initial one.
LatentOptResult optimize_latent(const GanModel& model, const Eigen::MatrixXd& known, const Eigen::MatrixXd& w_alpha,
                                const Eigen::VectorXd& z_init, const LatentOptSettings& settings = {});

struct GanRollout {
    Eigen::MatrixXd series;  ///< seed rows followed by predictions
    std::vector<double> final_losses;
    std::vector<int> steps;
};

/// Seeds with truth rows [start - (N-1), start) and predicts n_levels rows
/// with no further truth access. The first level takes the best of
/// `settings.restarts` random starts; later levels warm-start from the
/// previous optimum.
GanRollout rollout_predictive_gan(const GanModel& model, const Eigen::MatrixXd& truth, int start_level, int n_levels,
                                  const Eigen::MatrixXd& w_alpha, const LatentOptSettings& settings, std::uint64_t seed,
                                  assim::AccessLog* log = nullptr);

}  // namespace epitwin::gan
