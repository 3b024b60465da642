// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/rom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "epitwin/errors.hpp"

namespace epitwin::rom {

const char* to_string(Normalization mode) { return mode == Normalization::None ? "none" : "per-compartment"; }

Normalization normalization_from_string(const std::string& s) {
    if (s == "none") return Normalization::None;
    if (s == "per-compartment") return Normalization::PerCompartment;
    throw DomainError(fmt::format("unknown normalization mode '{}' (expected none or per-compartment)", s));
}

seirs::StateField SnapshotMatrix::row_state(int row) const {
    if (row < 0 || row >= levels()) throw ShapeError(fmt::format("snapshot row {} out of range [0, {})", row, levels()));
    seirs::StateField s(cells, times[static_cast<std::size_t>(row)]);
    for (int v = 0; v < vars(); ++v) s.values[static_cast<std::size_t>(v)] = data(row, v);
    return s;
}

SnapshotMatrix build_snapshots(const std::vector<seirs::StateField>& series, int stride) {
    if (series.empty()) throw ShapeError("build_snapshots: empty series");
    if (stride < 1) throw DomainError("build_snapshots: stride must be >= 1");
    const int n_steps = static_cast<int>(series.size()) - 1;
    const int rows = n_steps == 0 ? 1 : (n_steps + stride - 1) / stride;
    const int cells = series.front().cells;
    const int vars = seirs::kFields * cells;

    SnapshotMatrix snap;
    snap.stride = stride;
    snap.cells = cells;
    snap.data.resize(rows, vars);
    for (int r = 0; r < rows; ++r) {
        const seirs::StateField& s = series[static_cast<std::size_t>(r * stride)];
        if (s.cells != cells) throw ShapeError("build_snapshots: inconsistent cell counts in series");
        for (int v = 0; v < vars; ++v) snap.data(r, v) = s.values[static_cast<std::size_t>(v)];
        snap.times.push_back(s.time);
    }
    return snap;
}

// -----------------------------------------------------------------------------

namespace {

/// One-sided Jacobi on the columns of b (rows >= cols assumed by the caller).
/// On return b's columns are mutually orthogonal and v accumulates the
/// rotations, so b_in = b_out v^T.
void orthogonalize_columns(Eigen::MatrixXd& b, Eigen::MatrixXd& v) {
    const Eigen::Index n = b.cols();
    v = Eigen::MatrixXd::Identity(n, n);
    constexpr double tol = 1.0e-14;
    // Pairs whose inner product is at rounding level of the whole matrix are
    // left alone; rank-deficient inputs otherwise rotate noise forever.
    const double floor = 1.0e-30 * b.squaredNorm();
    for (int sweep = 0; sweep < 80; ++sweep) {
        bool rotated = false;
        for (Eigen::Index p = 0; p + 1 < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double alpha = b.col(p).squaredNorm();
                const double beta = b.col(q).squaredNorm();
                const double gamma = b.col(p).dot(b.col(q));
                if (std::abs(gamma) <= floor || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (Eigen::Index i = 0; i < b.rows(); ++i) {
                    const double bp = b(i, p), bq = b(i, q);
                    b(i, p) = c * bp - s * bq;
                    b(i, q) = s * bp + c * bq;
                }
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) return;
    }
    throw ConvergenceError("jacobi_svd: no convergence in 80 sweeps", 80, 0.0);
}

}  // namespace

Svd jacobi_svd(const Eigen::MatrixXd& a) {
    const bool transpose = a.rows() < a.cols();
    Eigen::MatrixXd b = transpose ? Eigen::MatrixXd(a.transpose()) : a;
    Eigen::MatrixXd w;
    orthogonalize_columns(b, w);

    const Eigen::Index k = b.cols();
    Eigen::VectorXd norms(k);
    for (Eigen::Index j = 0; j < k; ++j) norms[j] = b.col(j).norm();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return norms[x] > norms[y]; });

    Eigen::MatrixXd left(b.rows(), k), right(w.rows(), k);
    Svd out;
    out.s.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const Eigen::Index src = order[static_cast<std::size_t>(j)];
        out.s[j] = norms[src];
        left.col(j) = norms[src] > 0.0 ? Eigen::VectorXd(b.col(src) / norms[src]) : Eigen::VectorXd::Zero(b.rows());
        right.col(j) = w.col(src);
    }
    if (transpose) {
        out.u = std::move(right);
        out.v = std::move(left);
    } else {
        out.u = std::move(left);
        out.v = std::move(right);
    }
    return out;
}

// -----------------------------------------------------------------------------

Eigen::VectorXd RomBasis::explained_fractions() const {
    if (!(total_energy > 0.0)) return Eigen::VectorXd::Zero(singular_values.size());
    return singular_values.array().square() / total_energy;
}

RomBasis fit_pca(const SnapshotMatrix& snapshots, int m, Normalization mode) {
    return fit_pca(snapshots.data, snapshots.cells, m, mode);
}

RomBasis fit_pca(const Eigen::MatrixXd& data, int cells, int m, Normalization mode) {
    const Eigen::Index rows = data.rows();
    const Eigen::Index vars = data.cols();
    if (rows < 2) throw ShapeError("fit_pca: need at least 2 rows");
    if (m < 1 || m > std::min(rows, vars)) {
        throw ShapeError(fmt::format("fit_pca: M = {} outside [1, min(rows, vars) = {}]", m, std::min(rows, vars)));
    }

    RomBasis basis;
    basis.mode = mode;
    basis.cells = cells;
    basis.scale_mean = Eigen::VectorXd::Zero(vars);
    basis.scale_std = Eigen::VectorXd::Ones(vars);

    if (mode == Normalization::PerCompartment) {
        if (vars != seirs::kFields * cells) {
            throw ShapeError(fmt::format("fit_pca: per-compartment mode needs 8 x {} vars, got {}", cells, vars));
        }
        for (int f = 0; f < seirs::kFields; ++f) {
            const auto block = data.middleCols(f * cells, cells);
            const double count = static_cast<double>(block.size());
            const double mean = block.sum() / count;
            const double var = (block.array() - mean).square().sum() / count;
            if (!(var > 0.0)) {
                throw DomainError(fmt::format("fit_pca: field {} has zero variance; per-compartment normalization undefined",
                                              seirs::field_label(f)));
            }
            basis.scale_mean.segment(f * cells, cells).setConstant(mean);
            basis.scale_std.segment(f * cells, cells).setConstant(std::sqrt(var));
        }
    }

    Eigen::MatrixXd x = (data.rowwise() - basis.scale_mean.transpose()).array().rowwise() / basis.scale_std.transpose().array();
    basis.center = x.colwise().mean().transpose();
    x.rowwise() -= basis.center.transpose();

    const Svd svd = jacobi_svd(x);
    basis.total_energy = svd.s.squaredNorm();
    basis.singular_values = svd.s.head(m);
    basis.basis = svd.v.leftCols(m);
    for (int j = 0; j < m; ++j) {
        Eigen::Index at = 0;
        basis.basis.col(j).cwiseAbs().maxCoeff(&at);
        if (basis.basis(at, j) < 0.0) basis.basis.col(j) *= -1.0;
    }
    return basis;
}

Eigen::VectorXd project(const RomBasis& basis, const Eigen::VectorXd& state_row) {
    if (state_row.size() != basis.vars()) {
        throw ShapeError(fmt::format("project: state has {} values, basis expects {}", state_row.size(), basis.vars()));
    }
    const Eigen::VectorXd scaled = (state_row - basis.scale_mean).cwiseQuotient(basis.scale_std) - basis.center;
    return basis.basis.transpose() * scaled;
}

Eigen::VectorXd reconstruct(const RomBasis& basis, const Eigen::VectorXd& latent) {
    if (latent.size() != basis.components()) {
        throw ShapeError(fmt::format("reconstruct: latent has {} values, basis has {} components", latent.size(),
                                     basis.components()));
    }
    return (basis.basis * latent + basis.center).cwiseProduct(basis.scale_std) + basis.scale_mean;
}

Eigen::MatrixXd project_rows(const RomBasis& basis, const Eigen::MatrixXd& rows) {
    if (rows.cols() != basis.vars()) throw ShapeError("project_rows: column count does not match the basis");
    Eigen::MatrixXd scaled = (rows.rowwise() - basis.scale_mean.transpose()).array().rowwise() / basis.scale_std.transpose().array();
    scaled.rowwise() -= basis.center.transpose();
    return scaled * basis.basis;
}

Eigen::MatrixXd reconstruct_rows(const RomBasis& basis, const Eigen::MatrixXd& latents) {
    if (latents.cols() != basis.components()) throw ShapeError("reconstruct_rows: latent width does not match the basis");
    Eigen::MatrixXd x = latents * basis.basis.transpose();
    x.rowwise() += basis.center.transpose();
    x = x.array().rowwise() * basis.scale_std.transpose().array();
    x.rowwise() += basis.scale_mean.transpose();
    return x;
}

Eigen::MatrixXd pc_weight_matrix(const RomBasis& basis) {
    const Eigen::Index m = basis.singular_values.size();
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) w(i, i) = basis.singular_values[i];
    return w;
}

}  // namespace epitwin::rom
