// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "epitwin/errors.hpp"
#include "epitwin/seirs.hpp"

namespace epitwin::seirs {

namespace {

constexpr int kS = 0, kE = 1, kI = 2, kR = 3;

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double relative_change(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max(scale, std::abs(a[i]));
    }
    return scale > 0.0 ? diff / scale : diff;
}

}  // namespace

TransientSolver::TransientSolver(GridSpec grid, ModelParams params, SolverSettings settings)
    : grid_(std::move(grid)), params_(std::move(params)), settings_(settings) {
    grid_.validate();
    params_.validate();

    active_slot_.assign(static_cast<std::size_t>(grid_.cells()), -1);
    for (int cell = 0; cell < grid_.cells(); ++cell) {
        if (grid_.active(cell)) {
            active_slot_[static_cast<std::size_t>(cell)] = static_cast<int>(active_.size());
            active_.push_back(cell);
        }
    }

    const double inv_h2[3] = {1.0 / (grid_.dx() * grid_.dx()), 1.0 / (grid_.dy() * grid_.dy()),
                              1.0 / (grid_.dz() * grid_.dz())};
    for (int f = 0; f < kFields; ++f) {
        const auto k = diffusion_per_cell(params_.k_transient, f / kGroups, f % kGroups, grid_);
        Stencil& st = stencils_[static_cast<std::size_t>(f)];
        st.offsets.push_back(0);
        for (int cell : active_) {
            const int i = cell % grid_.nx;
            const int j = (cell / grid_.nx) % grid_.ny;
            const int kk = cell / (grid_.nx * grid_.ny);
            double sum = 0.0;
            auto visit = [&](int ni, int nj, int nk, double w) {
                if (ni < 0 || nj < 0 || nk < 0 || ni >= grid_.nx || nj >= grid_.ny || nk >= grid_.nz) return;
                const int nb = grid_.cell_index(ni, nj, nk);
                if (!grid_.active(nb)) return;
                const double a = k[static_cast<std::size_t>(cell)];
                const double b = k[static_cast<std::size_t>(nb)];
                const double kf = (a > 0.0 && b > 0.0) ? 2.0 * a * b / (a + b) : 0.0;
                if (kf == 0.0) return;
                st.entries.push_back({active_slot_[static_cast<std::size_t>(nb)], kf * w});
                sum += kf * w;
            };
            visit(i - 1, j, kk, inv_h2[0]);
            visit(i + 1, j, kk, inv_h2[0]);
            visit(i, j - 1, kk, inv_h2[1]);
            visit(i, j + 1, kk, inv_h2[1]);
            visit(i, j, kk - 1, inv_h2[2]);
            visit(i, j, kk + 1, inv_h2[2]);
            st.offsets.push_back(static_cast<int>(st.entries.size()));
            st.weight_sum.push_back(sum);
        }
    }
}

bool TransientSolver::fbgs(int field, std::span<const double> diag, std::span<const double> rhs,
                           std::vector<double>& x) const {
    const Stencil& st = stencils_[static_cast<std::size_t>(field)];
    const int n = static_cast<int>(x.size());
    auto relax = [&](int s) {
        double acc = rhs[static_cast<std::size_t>(s)];
        for (int e = st.offsets[static_cast<std::size_t>(s)]; e < st.offsets[static_cast<std::size_t>(s) + 1]; ++e) {
            const Neighbour& nb = st.entries[static_cast<std::size_t>(e)];
            acc += nb.weight * x[static_cast<std::size_t>(nb.cell)];
        }
        const double v = acc / diag[static_cast<std::size_t>(s)];
        const double d = std::abs(v - x[static_cast<std::size_t>(s)]);
        x[static_cast<std::size_t>(s)] = v;
        return d;
    };
    for (int sweep = 0; sweep < settings_.fbgs_max; ++sweep) {
        double change = 0.0;
        for (int s = 0; s < n; ++s) change = std::max(change, relax(s));
        for (int s = n - 1; s >= 0; --s) change = std::max(change, relax(s));
        const double scale = max_abs(x);
        if (change <= settings_.fbgs_tol * scale || change == 0.0) return true;
    }
    return false;
}

StateField TransientSolver::step(const StateField& state) const {
    if (state.cells != grid_.cells()) throw ShapeError("TransientSolver::step: state does not match the grid");
    const ModelParams& p = params_;
    const std::size_t n = active_.size();
    const double inv_dt = 1.0 / p.dt;
    const double t_new = state.time + p.dt;

    // Working copies over active cells only; blocked cells are never touched.
    std::array<std::vector<double>, kFields> old_x, x;
    for (int f = 0; f < kFields; ++f) {
        auto& o = old_x[static_cast<std::size_t>(f)];
        o.resize(n);
        for (std::size_t s = 0; s < n; ++s) o[s] = state.at(f, active_[s]);
        x[static_cast<std::size_t>(f)] = o;
    }

    std::vector<TransferCoeffs> transfer(n);
    std::array<std::vector<double>, kGroups> infection;  // sum_h' beta_hh' I_h' / N_h
    for (auto& v : infection) v.resize(n);
    std::vector<double> diag(n), rhs(n);

    // Picard map G: evaluate the nonlinear coefficients at `x`, then solve the
    // resulting linear system by block FBGS. Relaxed with Aitken's factor
    // because the lagged group forcing can make plain Picard oscillate.
    auto picard_map = [&](const std::array<std::vector<double>, kFields>& at) {
        for (std::size_t s = 0; s < n; ++s) {
            double group_n[kGroups];
            for (int g = 0; g < kGroups; ++g) {
                group_n[g] = 0.0;
                for (int c = 0; c < kCompartments; ++c) group_n[g] += at[static_cast<std::size_t>(field_index(c, g))][s];
            }
            for (int h = 0; h < kGroups; ++h) {
                double force = 0.0;
                for (int hp = 0; hp < kGroups; ++hp) force += p.beta(h, hp) * at[static_cast<std::size_t>(field_index(kI, hp))][s];
                infection[static_cast<std::size_t>(h)][s] = group_n[h] > 0.0 ? force / group_n[h] : 0.0;
            }
            transfer[s] = transfer_coeffs_transient(grid_.region(active_[s]), group_n[0], t_new, p);
        }

        auto y = at;
        auto Y = [&](int c, int g) -> const std::vector<double>& { return y[static_cast<std::size_t>(field_index(c, g))]; };
        double block_change = 0.0;
        for (int block = 0; block < settings_.block_max; ++block) {
            block_change = 0.0;
            for (int c = 0; c < kCompartments; ++c) {
                for (int h = 0; h < kGroups; ++h) {
                    const int hp = 1 - h;
                    const int f = field_index(c, h);
                    const auto& wsum = stencils_[static_cast<std::size_t>(f)].weight_sum;
                    const double death = p.death[c][h];
                    const double gam = p.gamma(h);
                    const double xi = p.immunity_loss[h];
                    const double mu = p.birth[h];
                    for (std::size_t s = 0; s < n; ++s) {
                        const TransferCoeffs& tc = transfer[s];
                        double loss = death + tc(c, h, h);
                        double source = -tc(c, h, hp) * Y(c, hp)[s];
                        switch (c) {
                            case kS:
                                loss += infection[static_cast<std::size_t>(h)][s] - mu;
                                source += xi * Y(kR, h)[s] + mu * (Y(kE, h)[s] + Y(kI, h)[s] + Y(kR, h)[s]);
                                break;
                            case kE:
                                loss += p.sigma;
                                source += infection[static_cast<std::size_t>(h)][s] * Y(kS, h)[s];
                                break;
                            case kI:
                                loss += gam;
                                source += p.sigma * Y(kE, h)[s];
                                break;
                            default:
                                loss += xi;
                                source += gam * Y(kI, h)[s];
                                break;
                        }
                        diag[s] = inv_dt + loss + wsum[s];
                        rhs[s] = old_x[static_cast<std::size_t>(f)][s] * inv_dt + source;
                    }
                    auto& yf = y[static_cast<std::size_t>(f)];
                    const auto before = yf;
                    if (!fbgs(f, diag, rhs, yf)) {
                        throw ConvergenceError(fmt::format("FBGS did not converge for field {} in {} sweeps",
                                                           field_label(f), settings_.fbgs_max),
                                               settings_.fbgs_max, relative_change(yf, before));
                    }
                    block_change = std::max(block_change, relative_change(yf, before));
                }
            }
            if (block_change <= settings_.block_tol) return y;
        }
        throw ConvergenceError(fmt::format("block FBGS did not converge in {} iterations (change {:.3e})",
                                           settings_.block_max, block_change),
                               settings_.block_max, block_change);
    };

    double picard_change = 0.0;
    double omega = 1.0;
    std::vector<double> residual, previous_residual;
    int picard = 0;
    bool converged = false;
    for (picard = 1; picard <= settings_.picard_max; ++picard) {
        auto g = picard_map(x);
        picard_change = 0.0;
        for (int f = 0; f < kFields; ++f) {
            picard_change = std::max(picard_change, relative_change(g[static_cast<std::size_t>(f)], x[static_cast<std::size_t>(f)]));
        }
        if (picard_change <= settings_.picard_tol) {
            x = std::move(g);
            converged = true;
            break;
        }
        residual.clear();
        for (int f = 0; f < kFields; ++f) {
            for (std::size_t s = 0; s < n; ++s) residual.push_back(g[static_cast<std::size_t>(f)][s] - x[static_cast<std::size_t>(f)][s]);
        }
        if (!previous_residual.empty()) {
            double num = 0.0, den = 0.0;
            for (std::size_t i = 0; i < residual.size(); ++i) {
                const double d = residual[i] - previous_residual[i];
                num += previous_residual[i] * d;
                den += d * d;
            }
            if (den > 0.0) omega = std::clamp(-omega * num / den, 0.02, 1.0);
        }
        std::size_t i = 0;
        for (int f = 0; f < kFields; ++f) {
            for (std::size_t s = 0; s < n; ++s, ++i) x[static_cast<std::size_t>(f)][s] += omega * residual[i];
        }
        previous_residual.swap(residual);
    }
    if (!converged) {
        throw ConvergenceError(fmt::format("Picard iteration did not converge in {} iterations (change {:.3e})",
                                           settings_.picard_max, picard_change),
                               settings_.picard_max, picard_change);
    }
    last_picard_ = picard;

    StateField next = state;
    next.time = t_new;
    for (int f = 0; f < kFields; ++f) {
        for (std::size_t s = 0; s < n; ++s) next.at(f, active_[s]) = x[static_cast<std::size_t>(f)][s];
    }
    return next;
}

}  // namespace epitwin::seirs
