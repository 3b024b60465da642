// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// Snapshot matrices and a truncated PCA basis (POD) over flattened state
// vectors.

#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epitwin/seirs.hpp"

namespace epitwin::rom {

enum class Normalization { None, PerCompartment };

const char* to_string(Normalization mode);
Normalization normalization_from_string(const std::string& s);

/// Rows are flattened StateFields; column = field * cells + cell.
struct SnapshotMatrix {
    Eigen::MatrixXd data;
    std::vector<double> times;
    int stride = 1;
    int cells = 0;

    int levels() const { return static_cast<int>(data.rows()); }
    int vars() const { return static_cast<int>(data.cols()); }
    seirs::StateField row_state(int row) const;
};

/// Samples steps 0, stride, 2*stride, ... strictly before the last recorded
/// step. A series of n_steps + 1 states therefore gives ceil(n_steps / stride)
/// rows. A single-state series gives one row.
SnapshotMatrix build_snapshots(const std::vector<seirs::StateField>& series, int stride);

struct RomBasis {
    Normalization mode = Normalization::None;
    int cells = 0;
    /// Affine pre-scaling per variable (mean 0 / std 1 under None).
    Eigen::VectorXd scale_mean;
    Eigen::VectorXd scale_std;
    /// Per-variable centre of the scaled data.
    Eigen::VectorXd center;
    Eigen::MatrixXd basis;  ///< vars x M, orthonormal columns
    Eigen::VectorXd singular_values;
    /// Sum of all squared singular values of the centred data.
    double total_energy = 0.0;

    int components() const { return static_cast<int>(basis.cols()); }
    int vars() const { return static_cast<int>(basis.rows()); }
    /// s_i^2 / total_energy for the retained components.
    Eigen::VectorXd explained_fractions() const;
    double explained_variance() const { return explained_fractions().sum(); }
};

RomBasis fit_pca(const SnapshotMatrix& snapshots, int m, Normalization mode);
/// Same, on a raw rows x vars matrix. `cells` is only used for the
/// per-compartment grouping (vars must equal 8 * cells in that mode).
RomBasis fit_pca(const Eigen::MatrixXd& data, int cells, int m, Normalization mode);

Eigen::VectorXd project(const RomBasis& basis, const Eigen::VectorXd& state_row);
Eigen::VectorXd reconstruct(const RomBasis& basis, const Eigen::VectorXd& latent);
/// Row-wise versions (levels x vars <-> levels x M).
Eigen::MatrixXd project_rows(const RomBasis& basis, const Eigen::MatrixXd& rows);
Eigen::MatrixXd reconstruct_rows(const RomBasis& basis, const Eigen::MatrixXd& latents);

/// diag(W_alpha) = singular values.
Eigen::MatrixXd pc_weight_matrix(const RomBasis& basis);

struct LatentSeries {
    Eigen::MatrixXd coeffs;  ///< levels x M
    std::string basis_id;
};

/// Thin SVD by one-sided Jacobi: a = u diag(s) v^T with s sorted descending.
struct Svd {
    Eigen::MatrixXd u;
    Eigen::VectorXd s;
    Eigen::MatrixXd v;
};
Svd jacobi_svd(const Eigen::MatrixXd& a);

}  // namespace epitwin::rom
