// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// Building blocks shared by the surrogate networks: initialisation, dense
// layers, per-component scalers, sliding windows and gradient checking.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epitwin/autodiff.hpp"
#include "epitwin/random.hpp"
#include "epitwin/weights.hpp"

namespace epitwin::nn {

/// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng);

/// Registers `<prefix>.w` [in, out] (Glorot) and `<prefix>.b` [out] (zeros).
void add_dense(WeightStore& store, const std::string& prefix, int in, int out, Rng& rng);
/// act(x W + b) on the tape.
Var dense(Tape& t, const WeightStore& store, const std::string& prefix, Var x, Activation act, bool trainable = true);
/// Plain evaluation: x [B, in] -> act(x W + b).
Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b, Activation act);

/// y = (x - offset) / scale per component.
struct AffineScaler {
    Eigen::VectorXd offset;
    Eigen::VectorXd scale;

    /// Maps each column's [min, max] onto [lo, hi]. Constant columns map to
    /// the midpoint with unit scale.
    static AffineScaler minmax(const Eigen::MatrixXd& rows, double lo, double hi);
    /// Zero mean, unit standard deviation per column (unit scale if constant).
    static AffineScaler standard(const Eigen::MatrixXd& rows);

    Eigen::RowVectorXd forward(const Eigen::RowVectorXd& x) const;
    Eigen::RowVectorXd inverse(const Eigen::RowVectorXd& y) const;
    Eigen::MatrixXd forward_rows(const Eigen::MatrixXd& x) const;
    Eigen::MatrixXd inverse_rows(const Eigen::MatrixXd& y) const;

    void save(WeightStore& store, const std::string& prefix) const;
    static AffineScaler load(const WeightStore& store, const std::string& prefix);
};

/// Sliding windows over a levels x M series: input rows k..k+N-1, target row
/// k+N, for k = 0 .. levels-N-1.
struct WindowSet {
    std::vector<Eigen::MatrixXd> inputs;  ///< each N x M
    std::vector<Eigen::RowVectorXd> targets;
    int train_count = 0;  ///< first train_count windows form the training split

    int size() const { return static_cast<int>(inputs.size()); }
};
WindowSet make_windows(const Eigen::MatrixXd& series, int window, double train_fraction);

/// Mini-batch index lists for one epoch, shuffled by `rng`.
std::vector<std::vector<int>> epoch_batches(int count, int batch_size, Rng& rng);

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
};

/// Central differences over every trainable entry (or at most `max_per_param`
/// evenly spaced entries of each). `loss` must be deterministic. `order` is 2
/// or 4; the fourth-order stencil tolerates a wider h, which keeps round-off
/// below the tolerance for tiny gradient entries.
GradCheckResult grad_check(WeightStore& store, const std::function<Var(Tape&, const WeightStore&)>& loss, double h = 1.0e-6,
                           std::size_t max_per_param = 0, int order = 2);
/// Same, for the gradient with respect to an input tensor.
GradCheckResult grad_check_input(const Tensor& x, const std::function<Var(Tape&, Var)>& loss, double h = 1.0e-6, int order = 2);

/// Worker cap from EPITWIN_THREADS (default: hardware concurrency, min 1).
int worker_threads();

}  // namespace epitwin::nn
