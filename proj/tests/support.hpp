// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations shared by the unit tests and the acceptance run.
// Deliberately written as plain loops, independent of the library kernels.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epitwin/random.hpp"
#include "epitwin/seirs.hpp"

namespace test_support {

/// ||A x - lambda0 B x|| / ||x|| of the linearised steady problem, applied
/// cell by cell with apply_diffusion for the transport term.
inline double eigen_residual(const epitwin::seirs::ModelParams& p, const epitwin::seirs::GridSpec& g,
                             const epitwin::seirs::StateField& x, double lambda0) {
    using namespace epitwin::seirs;
    const int n = g.cells();
    std::vector<std::vector<double>> div(kFields);
    for (int c = 0; c < kCompartments; ++c) {
        for (int h = 0; h < kGroups; ++h) {
            const int f = field_index(c, h);
            div[static_cast<std::size_t>(f)] = apply_diffusion(x.field(f), diffusion_per_cell(p.k_eigen, c, h, g), g);
        }
    }
    double res2 = 0.0, norm2 = 0.0;
    for (int cell = 0; cell < n; ++cell) {
        if (!g.active(cell)) continue;
        const TransferCoeffs tc = transfer_coeffs_eigen(g.region(cell), p);
        auto X = [&](int c, int h) { return x.at(field_index(c, h), cell); };
        for (int c = 0; c < kCompartments; ++c) {
            for (int h = 0; h < kGroups; ++h) {
                const auto hs = static_cast<std::size_t>(h);
                double ax = -div[static_cast<std::size_t>(field_index(c, h))][static_cast<std::size_t>(cell)];
                for (int hp = 0; hp < kGroups; ++hp) ax += tc(c, h, hp) * X(c, hp);
                ax += p.death[static_cast<std::size_t>(c)][hs] * X(c, h);
                double bx = 0.0;
                double force = 0.0;
                for (int hp = 0; hp < kGroups; ++hp) force += p.beta(h, hp) * X(2, hp);
                switch (c) {
                    case 0:
                        ax += -p.birth[hs] * (X(0, h) + X(1, h) + X(2, h) + X(3, h)) + force - p.immunity_loss[hs] * X(3, h);
                        break;
                    case 1:
                        ax += p.sigma * X(1, h) - force;
                        break;
                    case 2:
                        ax += p.gamma(h) * X(2, h);
                        bx = p.sigma * X(1, h);
                        break;
                    default:
                        ax += p.immunity_loss[hs] * X(3, h) - p.gamma(h) * X(2, h);
                        break;
                }
                const double r = (ax - lambda0 * bx) / p.sigma;
                res2 += r * r;
                norm2 += X(c, h) * X(c, h);
            }
        }
    }
    return std::sqrt(res2) / std::sqrt(norm2);
}

// Scalar backward Euler for the classical system by Newton on the 4x4
// residual with a central-difference Jacobian.
inline epitwin::seirs::ClassicalState scalar_backward_euler(const epitwin::seirs::ClassicalState& old,
                                                           const epitwin::seirs::ClassicalParams& p, double dt) {
    auto residual = [&](const Eigen::Vector4d& x) {
        const auto f = epitwin::seirs::classical_rhs({x[0], x[1], x[2], x[3]}, p);
        return Eigen::Vector4d(x[0] - old.S - dt * f.S, x[1] - old.E - dt * f.E, x[2] - old.I - dt * f.I,
                               x[3] - old.R - dt * f.R);
    };
    Eigen::Vector4d x(old.S, old.E, old.I, old.R);
    for (int it = 0; it < 50; ++it) {
        const Eigen::Vector4d r = residual(x);
        if (r.norm() <= 1e-15 * x.norm()) break;
        Eigen::Matrix4d jac;
        for (int j = 0; j < 4; ++j) {
            const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
            Eigen::Vector4d xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            jac.col(j) = (residual(xp) - residual(xm)) / (2 * h);
        }
        x -= jac.partialPivLu().solve(r);
    }
    return {x[0], x[1], x[2], x[3]};
}

inline Eigen::MatrixXd random_matrix(int rows, int cols, epitwin::Rng& rng, double lo = -1.0, double hi = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
    }
    return m;
}

/// Fresh empty directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("epitwin_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace test_support
