// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// R0 as the reciprocal of the dominant eigenvalue of the linearised steady
// system. The operators are scaled by 1/sigma so the residual is dimensionless.

#include <cmath>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <fmt/format.h>

#include "epitwin/errors.hpp"
#include "epitwin/seirs.hpp"

namespace epitwin::seirs {

namespace {

constexpr int kS = 0, kE = 1, kI = 2, kR = 3;

struct EigenOperators {
    Eigen::SparseMatrix<double> a;
    Eigen::SparseMatrix<double> b;
    std::vector<int> active;
};

EigenOperators assemble(const ModelParams& p, const GridSpec& grid) {
    EigenOperators ops;
    std::vector<int> slot(static_cast<std::size_t>(grid.cells()), -1);
    for (int cell = 0; cell < grid.cells(); ++cell) {
        if (grid.active(cell)) {
            slot[static_cast<std::size_t>(cell)] = static_cast<int>(ops.active.size());
            ops.active.push_back(cell);
        }
    }
    const int n = static_cast<int>(ops.active.size());
    const int dim = kFields * n;
    const double scale = 1.0 / p.sigma;
    auto idx = [n](int c, int g, int s) { return field_index(c, g) * n + s; };

    std::vector<Eigen::Triplet<double>> ta, tb;
    const double inv_h2[3] = {1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()), 1.0 / (grid.dz() * grid.dz())};

    for (int s = 0; s < n; ++s) {
        const int cell = ops.active[static_cast<std::size_t>(s)];
        const int i = cell % grid.nx;
        const int j = (cell / grid.nx) % grid.ny;
        const int kk = cell / (grid.nx * grid.ny);
        const TransferCoeffs tc = transfer_coeffs_eigen(grid.region(cell), p);

        for (int c = 0; c < kCompartments; ++c) {
            for (int h = 0; h < kGroups; ++h) {
                const int row = idx(c, h, s);
                auto add = [&](int col, double v) { ta.emplace_back(row, col, v * scale); };

                // -div(k grad x)
                const auto k = diffusion_per_cell(p.k_eigen, c, h, grid);
                auto visit = [&](int ni, int nj, int nk, double w) {
                    if (ni < 0 || nj < 0 || nk < 0 || ni >= grid.nx || nj >= grid.ny || nk >= grid.nz) return;
                    const int nb = grid.cell_index(ni, nj, nk);
                    if (!grid.active(nb)) return;
                    const double ka = k[static_cast<std::size_t>(cell)];
                    const double kb = k[static_cast<std::size_t>(nb)];
                    const double kf = (ka > 0.0 && kb > 0.0) ? 2.0 * ka * kb / (ka + kb) : 0.0;
                    if (kf == 0.0) return;
                    add(row, kf * w);
                    add(idx(c, h, slot[static_cast<std::size_t>(nb)]), -kf * w);
                };
                visit(i - 1, j, kk, inv_h2[0]);
                visit(i + 1, j, kk, inv_h2[0]);
                visit(i, j - 1, kk, inv_h2[1]);
                visit(i, j + 1, kk, inv_h2[1]);
                visit(i, j, kk - 1, inv_h2[2]);
                visit(i, j, kk + 1, inv_h2[2]);

                for (int hp = 0; hp < kGroups; ++hp) add(idx(c, hp, s), tc(c, h, hp));
                add(row, p.death[c][h]);

                switch (c) {
                    case kS:
                        // -mu N_h + beta I - xi R (linearised infection)
                        for (int cc = 0; cc < kCompartments; ++cc) add(idx(cc, h, s), -p.birth[h]);
                        for (int hp = 0; hp < kGroups; ++hp) add(idx(kI, hp, s), p.beta(h, hp));
                        add(idx(kR, h, s), -p.immunity_loss[h]);
                        break;
                    case kE:
                        add(row, p.sigma);
                        for (int hp = 0; hp < kGroups; ++hp) add(idx(kI, hp, s), -p.beta(h, hp));
                        break;
                    case kI:
                        add(row, p.gamma(h));
                        tb.emplace_back(row, idx(kE, h, s), p.sigma * scale);
                        break;
                    default:
                        add(row, p.immunity_loss[h]);
                        add(idx(kI, h, s), -p.gamma(h));
                        break;
                }
            }
        }
    }
    ops.a.resize(dim, dim);
    ops.b.resize(dim, dim);
    ops.a.setFromTriplets(ta.begin(), ta.end());
    ops.b.setFromTriplets(tb.begin(), tb.end());
    ops.a.makeCompressed();
    ops.b.makeCompressed();
    return ops;
}

/// Norm over the E and I blocks only.
double ei_norm(const Eigen::VectorXd& x, int n) {
    return std::sqrt(x.segment(2 * n, 4 * n).squaredNorm());
}

}  // namespace

EigenResult solve_eigen(const ModelParams& params, const GridSpec& grid, const SolverSettings& settings) {
    grid.validate();
    params.validate();
    const EigenOperators ops = assemble(params, grid);
    const int n = static_cast<int>(ops.active.size());
    if (n == 0) throw DomainError("solve_eigen: grid has no active cells");

    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(ops.a);
    if (lu.info() != Eigen::Success) throw DomainError("solve_eigen: steady operator is singular");

    Eigen::VectorXd x = Eigen::VectorXd::Zero(ops.a.rows());
    x.segment(2 * n, 4 * n).setOnes();
    x /= ei_norm(x, n);

    double lambda0 = 0.0;
    double change = 0.0;
    int it = 0;
    bool converged = false;
    for (it = 1; it <= settings.eigen_max; ++it) {
        const Eigen::VectorXd y = lu.solve(ops.b * x);
        const double growth = ei_norm(y, n);
        if (!(growth > 0.0) || !std::isfinite(growth)) throw DomainError("solve_eigen: iterate vanished");
        const double next = 1.0 / growth;
        change = lambda0 == 0.0 ? 1.0 : std::abs(next - lambda0) / std::abs(next);
        lambda0 = next;
        x = y / growth;
        if (change <= settings.eigen_tol) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw ConvergenceError(fmt::format("inverse power iteration stagnated after {} sweeps (relative change {:.3e})",
                                           settings.eigen_max, change),
                               settings.eigen_max, change);
    }

    EigenResult result;
    result.lambda0 = lambda0;
    result.r0 = 1.0 / lambda0;
    result.iterations = it;
    result.residual_norm = (ops.a * x - lambda0 * (ops.b * x)).norm() / x.norm();
    result.mode = StateField(grid.cells(), 0.0);
    for (int f = 0; f < kFields; ++f) {
        for (int s = 0; s < n; ++s) result.mode.at(f, ops.active[static_cast<std::size_t>(s)]) = x[f * n + s];
    }
    return result;
}

}  // namespace epitwin::seirs
