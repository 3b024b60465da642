// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// Best linear unbiased estimate of a prediction window given an observation,
// and the prediction/correction rollout built on it.

#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace epitwin::assim {

struct BlueStats {
    Eigen::VectorXd u_mean;  ///< mean prediction window
    Eigen::VectorXd v_mean;  ///< mean observation
    Eigen::MatrixXd c_uv;    ///< cross-covariance, dim_u x dim_v
    Eigen::MatrixXd c;       ///< observation covariance, dim_v x dim_v
    double ridge = 0.0;

    /// Stats from known moments (no estimation).
    static BlueStats from_moments(Eigen::VectorXd u_mean, Eigen::VectorXd v_mean, Eigen::MatrixXd c_uv, Eigen::MatrixXd c,
                                  double ridge);
    void validate() const;
};

/// Sample means and unbiased (n - 1) covariances over paired rows. The ridge
/// is ridge_factor * trace(C) / dim, or ridge_factor itself when C vanishes.
BlueStats estimate_stats(const Eigen::MatrixXd& u_history, const Eigen::MatrixXd& v_history, double ridge_factor = 1.0e-8);

/// u_mean + C_uv (C + ridge I)^-1 (v - v_mean), via Cholesky. Throws
/// DomainError when the factorisation fails.
Eigen::VectorXd blue_correct(const Eigen::VectorXd& u_p, const BlueStats& stats, const Eigen::VectorXd& v);

/// Maps an N x M window (oldest first) to the next latent row.
using Predictor = std::function<Eigen::RowVectorXd(const Eigen::MatrixXd&)>;

/// Prediction-window history over the training levels: for each window start
/// k with k + N < train_levels, u_p = [truth rows k..k+N-1, predictor(those)]
/// flattened row-major and v = truth row k+N.
BlueStats estimate_rollout_stats(const Predictor& predictor, const Eigen::MatrixXd& truth, int window, int train_levels,
                                 double ridge_factor = 1.0e-8);

/// Truth rows read by a rollout, in access order.
struct AccessLog {
    std::vector<int> levels;
};

/// Starts from truth rows [start - N, start) and corrects every prediction
/// against the truth row of the level being predicted. Returns the initial
/// window followed by n_levels corrected rows.
Eigen::MatrixXd rollout_corrected(const Predictor& predictor, const BlueStats& stats, const Eigen::MatrixXd& truth, int window,
                                  int start_level, int n_levels, AccessLog* log = nullptr);

}  // namespace epitwin::assim
