// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/seirs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "epitwin/errors.hpp"

namespace epitwin::seirs {

const char* compartment_name(int c) {
    static constexpr const char* names[] = {"S", "E", "I", "R"};
    return names[c];
}

const char* group_name(int g) { return g == 0 ? "H" : "M"; }

std::string field_label(int field) {
    return fmt::format("{}-{}", group_name(field % kGroups), compartment_name(field / kGroups));
}

// -----------------------------------------------------------------------------

void GridSpec::validate() const {
    if (nx < 1 || ny < 1 || nz < 1) {
        throw DomainError(fmt::format("grid dimensions must be >= 1 (got {}x{}x{})", nx, ny, nz));
    }
    if (!(length > 0.0) || !std::isfinite(length)) throw DomainError("grid length must be positive");
    if (region_map.size() != static_cast<std::size_t>(cells())) {
        throw DomainError(fmt::format("region map has {} entries, grid has {} cells", region_map.size(), cells()));
    }
    for (std::size_t i = 0; i < region_map.size(); ++i) {
        const int r = region_map[i];
        if (r < kRegionBlocked || r > kRegionTravel) {
            throw DomainError(fmt::format("cell {} has region id {} (expected 1, 2 or 3)", i, r));
        }
    }
}

GridSpec GridSpec::cross_default() {
    // 5x5 blocks of 2x2 cells. Row 0 is the bottom of the domain.
    static constexpr int blocks[5][5] = {
        {1, 1, 3, 1, 1},
        {1, 1, 3, 1, 1},
        {3, 3, 2, 3, 3},
        {1, 1, 3, 1, 1},
        {1, 1, 3, 1, 1},
    };
    GridSpec g;
    g.region_map.assign(100, kRegionTravel);
    for (int j = 0; j < 10; ++j) {
        for (int i = 0; i < 10; ++i) g.region_map[static_cast<std::size_t>(g.cell_index(i, j))] = blocks[j / 2][i / 2];
    }
    return g;
}

GridSpec GridSpec::single_cell(int region) { return uniform(1, 1, 1, 1.0e5, region); }

GridSpec GridSpec::uniform(int nx, int ny, int nz, double length, int region) {
    GridSpec g;
    g.nx = nx;
    g.ny = ny;
    g.nz = nz;
    g.length = length;
    g.region_map.assign(static_cast<std::size_t>(nx * ny * nz), region);
    return g;
}

// -----------------------------------------------------------------------------

double ModelParams::beta(int h, int hp) const {
    if (h != hp) return 0.0;
    return gamma(h) * r0_group[static_cast<std::size_t>(h)];
}

ModelParams ModelParams::defaults(double domain_length) {
    ModelParams p;
    const double mu = 1.0 / (60.0 * 365.0 * p.t_one_day);
    p.birth = {mu, mu};
    for (auto& d : p.death) d = {mu, mu};
    const double k = 2.5 * domain_length * domain_length / p.t_one_day;
    p.set_uniform_diffusion(k, 0.05 * k);
    // People in the Home group stay put; only the transfer terms move them.
    for (int c = 0; c < kCompartments; ++c) {
        p.k_transient[c][0] = {0.0, 0.0, 0.0};
        p.k_eigen[c][0] = {0.0, 0.0, 0.0};
    }
    return p;
}

void ModelParams::set_uniform_diffusion(double k_transient_value, double k_eigen_value) {
    for (int c = 0; c < kCompartments; ++c) {
        for (int g = 0; g < kGroups; ++g) {
            k_transient[c][g] = {0.0, k_transient_value, k_transient_value};
            k_eigen[c][g] = {0.0, k_eigen_value, k_eigen_value};
        }
    }
}

void ModelParams::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw DomainError(what);
    };
    auto nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
    require(t_one_day > 0.0 && std::isfinite(t_one_day), "t_one_day must be positive");
    require(nonneg(sigma), "sigma must be >= 0");
    for (int g = 0; g < kGroups; ++g) {
        require(infection_duration[g] > 0.0 && std::isfinite(infection_duration[g]), "infection durations must be positive");
        require(nonneg(r0_group[g]), "group R0 must be >= 0");
        require(nonneg(immunity_loss[g]), "immunity loss rates must be >= 0");
        require(nonneg(birth[g]), "birth rates must be >= 0");
        for (int c = 0; c < kCompartments; ++c) {
            require(nonneg(death[c][g]), "death rates must be >= 0");
            for (int r = 0; r < 3; ++r) {
                require(nonneg(k_transient[c][g][r]) && nonneg(k_eigen[c][g][r]), "diffusion coefficients must be >= 0");
            }
            require(k_transient[c][g][0] == 0.0 && k_eigen[c][g][0] == 0.0, "diffusion must be zero in region 1");
        }
    }
    require(nonneg(lambda_hh_home) && nonneg(mobile_hold_rate), "transfer rates must be >= 0");
    require(nonneg(home_aim_base) && nonneg(home_aim_swing) && nonneg(home_exit_factor), "home aim parameters must be >= 0");
    require(nonneg(r_ratio), "r_ratio must be >= 0");
    require(epsilon > 0.0 && std::isfinite(epsilon), "epsilon must be positive");
    require(eigen_home_region >= kRegionBlocked && eigen_home_region <= kRegionTravel, "eigen_home_region must be 1, 2 or 3");
    require(dt > 0.0 && std::isfinite(dt), "dt must be positive");
    require(n_steps >= 0, "n_steps must be >= 0");
}

// -----------------------------------------------------------------------------

double StateField::total() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
}

double StateField::group_total(int g, int cell) const {
    double s = 0.0;
    for (int c = 0; c < kCompartments; ++c) s += at(field_index(c, g), cell);
    return s;
}

// -----------------------------------------------------------------------------

ClassicalState classical_rhs(const ClassicalState& x, const ClassicalParams& p) {
    for (double v : {x.S, x.E, x.I, x.R, p.beta, p.sigma, p.gamma, p.xi, p.mu, p.nu}) {
        if (!std::isfinite(v)) throw DomainError("classical_rhs: non-finite input");
    }
    const double n = x.S + x.E + x.I + x.R;
    if (!(n > 0.0)) throw DomainError("classical_rhs: total population must be positive");
    const double infection = p.beta * x.S * x.I / n;
    return {
        p.mu * n - infection + p.xi * x.R - p.nu * x.S,
        infection - p.sigma * x.E - p.nu * x.E,
        p.sigma * x.E - p.gamma * x.I - p.nu * x.I,
        p.gamma * x.I - p.xi * x.R - p.nu * x.R,
    };
}

double r_day(double t, double t_one_day) { return 0.5 * std::sin(2.0 * std::numbers::pi * t / t_one_day) + 0.5; }

TransferCoeffs transfer_coeffs_transient(int region, double n_home, double t, const ModelParams& p) {
    double aim = 0.0;
    double rate = 0.0;
    if (region == kRegionHome) {
        aim = p.home_aim_base + p.home_aim_swing * (1.0 - r_day(t, p.t_one_day));
        rate = p.lambda_hh_home;
    }
    const double force = (n_home - aim) / std::max({p.epsilon, n_home, aim});
    const double h2m = force >= 0.0 ? 1.0 : 0.0;  // 0.5 + 0.5 sign(F), sign(0) = +1

    const double hh = p.home_exit_factor * rate * h2m * force;
    const double mm = -rate * (1.0 - h2m) * force;
    const double hm = rate * (1.0 - h2m) * force;
    const double mh = -p.home_exit_factor * rate * h2m * force;

    TransferCoeffs tc;
    for (int c = 0; c < kCompartments; ++c) {
        tc(c, 0, 0) = hh;
        tc(c, 1, 1) = mm;
        tc(c, 0, 1) = hm;
        tc(c, 1, 0) = mh;
    }
    return tc;
}

TransferCoeffs transfer_coeffs_eigen(int region, const ModelParams& p) {
    if (!(p.epsilon > 0.0)) throw DomainError("transfer_coeffs_eigen: epsilon must be positive");
    const double r_switch = region == p.eigen_home_region ? 1.0 : 0.0;
    const double lam_hh = r_switch / p.t_one_day;
    const double lam_mm = p.mobile_hold_rate * (1.0 - r_switch);

    TransferCoeffs tc;
    const int S = 0, E = 1, I = 2, R = 3;
    for (int c : {S, R}) {
        tc(c, 0, 0) = 1.0 / p.epsilon;
        tc(c, 1, 1) = 1.0 / p.epsilon;
    }
    for (int c : {E, I}) {
        tc(c, 0, 0) = lam_hh + lam_mm;
        tc(c, 1, 1) = lam_hh * p.r_ratio;
    }
    for (int c = 0; c < kCompartments; ++c) {
        tc(c, 0, 1) = -lam_hh * p.r_ratio;
        tc(c, 1, 0) = -lam_hh;
    }
    return tc;
}

// -----------------------------------------------------------------------------

namespace {

double face_k(double a, double b) { return (a > 0.0 && b > 0.0) ? 2.0 * a * b / (a + b) : 0.0; }

}  // namespace

std::vector<double> diffusion_per_cell(const ModelParams::Diffusion& k, int compartment, int group, const GridSpec& grid) {
    std::vector<double> out(static_cast<std::size_t>(grid.cells()));
    for (int cell = 0; cell < grid.cells(); ++cell) {
        out[static_cast<std::size_t>(cell)] = k[compartment][group][grid.region(cell) - 1];
    }
    return out;
}

std::vector<double> apply_diffusion(std::span<const double> u, std::span<const double> k, const GridSpec& grid) {
    const auto n = static_cast<std::size_t>(grid.cells());
    if (u.size() != n || k.size() != n) throw ShapeError("apply_diffusion: field and k must match the grid");

    std::vector<double> out(n, 0.0);
    const double inv_h2[3] = {1.0 / (grid.dx() * grid.dx()), 1.0 / (grid.dy() * grid.dy()), 1.0 / (grid.dz() * grid.dz())};
    for (int kk = 0; kk < grid.nz; ++kk) {
        for (int j = 0; j < grid.ny; ++j) {
            for (int i = 0; i < grid.nx; ++i) {
                const int c = grid.cell_index(i, j, kk);
                if (!grid.active(c)) continue;
                double acc = 0.0;
                auto visit = [&](int ni, int nj, int nk, double w) {
                    if (ni < 0 || nj < 0 || nk < 0 || ni >= grid.nx || nj >= grid.ny || nk >= grid.nz) return;
                    const int nb = grid.cell_index(ni, nj, nk);
                    if (!grid.active(nb)) return;
                    acc += face_k(k[static_cast<std::size_t>(c)], k[static_cast<std::size_t>(nb)]) * w *
                           (u[static_cast<std::size_t>(nb)] - u[static_cast<std::size_t>(c)]);
                };
                visit(i - 1, j, kk, inv_h2[0]);
                visit(i + 1, j, kk, inv_h2[0]);
                visit(i, j - 1, kk, inv_h2[1]);
                visit(i, j + 1, kk, inv_h2[1]);
                visit(i, j, kk - 1, inv_h2[2]);
                visit(i, j, kk + 1, inv_h2[2]);
                out[static_cast<std::size_t>(c)] = acc;
            }
        }
    }
    return out;
}

// -----------------------------------------------------------------------------

StateField default_initial_state(const GridSpec& grid) {
    StateField s(grid.cells(), 0.0);
    constexpr double people = 2000.0;
    constexpr double exposed_fraction = 0.001;
    for (int cell = 0; cell < grid.cells(); ++cell) {
        if (grid.region(cell) != kRegionHome) continue;
        s.at(field_index(Compartment::S, Group::Home), cell) = people * (1.0 - exposed_fraction);
        s.at(field_index(Compartment::E, Group::Home), cell) = people * exposed_fraction;
    }
    return s;
}

std::vector<StateField> simulate(const ModelParams& params, const GridSpec& grid, const StateField& init,
                                 const SolverSettings& settings) {
    if (init.cells != grid.cells() || init.values.size() != static_cast<std::size_t>(kFields * grid.cells())) {
        throw ShapeError("simulate: initial state does not match the grid");
    }
    TransientSolver solver(grid, params, settings);
    std::vector<StateField> series;
    series.reserve(static_cast<std::size_t>(params.n_steps) + 1);
    series.push_back(init);
    for (int step = 0; step < params.n_steps; ++step) {
        try {
            series.push_back(solver.step(series.back()));
        } catch (const ConvergenceError& e) {
            throw ConvergenceError(fmt::format("step {}: {}", step + 1, e.what()), e.iterations(), e.last_change());
        }
    }
    return series;
}

}  // namespace epitwin::seirs
