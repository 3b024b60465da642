// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// Classical and spatially extended two-group SEIRS models on a regular
// control-volume grid.

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace epitwin::seirs {

enum class Compartment : int { S = 0, E = 1, I = 2, R = 3 };
enum class Group : int { Home = 0, Mobile = 1 };

inline constexpr int kCompartments = 4;
inline constexpr int kGroups = 2;
inline constexpr int kFields = kCompartments * kGroups;

/// Region ids of the cross-shaped test domain.
inline constexpr int kRegionBlocked = 1;
inline constexpr int kRegionHome = 2;
inline constexpr int kRegionTravel = 3;

/// Fields are stored compartment-major: S_H, S_M, E_H, E_M, I_H, I_M, R_H, R_M.
constexpr int field_index(Compartment c, Group g) { return static_cast<int>(c) * kGroups + static_cast<int>(g); }
constexpr int field_index(int c, int g) { return c * kGroups + g; }

const char* compartment_name(int c);
const char* group_name(int g);
/// "H-S", "M-I", ... (group first, as in the summary tables).
std::string field_label(int field);

constexpr double kSecondsPerDay = 86400.0;

struct GridSpec {
    int nx = 10;
    int ny = 10;
    int nz = 1;
    double length = 1.0e5;  ///< domain edge length in metres
    std::vector<int> region_map;

    int cells() const { return nx * ny * nz; }
    int cell_index(int i, int j, int k = 0) const { return i + nx * (j + ny * k); }
    double dx() const { return length / nx; }
    double dy() const { return length / ny; }
    double dz() const { return length / nz; }
    int region(int cell) const { return region_map[static_cast<std::size_t>(cell)]; }
    bool active(int cell) const { return region(cell) != kRegionBlocked; }

    /// Throws DomainError on bad counts or region ids.
    void validate() const;

    /// 10x10 cross: 5x5 blocks of 2x2 cells. The four 2x2-block corner areas
    /// are blocked, the arms are travel regions and the centre block holds the
    /// homes.
    static GridSpec cross_default();
    /// Single cell of the given region (point-equation reduction).
    static GridSpec single_cell(int region = kRegionTravel);
    static GridSpec uniform(int nx, int ny, int nz, double length, int region);
};

/// Coefficients of the extended two-group model. Diffusion coefficients are
/// indexed [compartment][group][region-1].
struct ModelParams {
    using PerGroup = std::array<double, kGroups>;
    using Diffusion = std::array<std::array<std::array<double, 3>, kGroups>, kCompartments>;

    double t_one_day = kSecondsPerDay;
    double sigma = 1.0 / (4.5 * kSecondsPerDay);
    PerGroup infection_duration{7.0 * kSecondsPerDay, 7.0 * kSecondsPerDay};
    PerGroup r0_group{0.2, 10.0};
    PerGroup immunity_loss{1.0 / (365.0 * kSecondsPerDay), 1.0 / (365.0 * kSecondsPerDay)};
    PerGroup birth{};
    std::array<PerGroup, kCompartments> death{};
    Diffusion k_transient{};
    Diffusion k_eigen{};
    double lambda_hh_home = 1000.0 / kSecondsPerDay;
    /// N_H_aim = base + swing * (1 - R_DAY) in home cells.
    double home_aim_base = 1000.0;
    double home_aim_swing = 1000.0;
    /// Scales the Home -> Mobile transfer relative to the return transfer.
    double home_exit_factor = 0.01;
    /// Lambda_MM = mobile_hold_rate * (1 - r_switch) in the eigenvalue problem.
    double mobile_hold_rate = 10000.0 / kSecondsPerDay;
    double r_ratio = 25.65;
    double epsilon = 1.0e-10;
    /// Region in which r_switch = 1 for the eigenvalue problem.
    int eigen_home_region = kRegionHome;
    double dt = 1000.0;
    int n_steps = 3880;

    double gamma(int g) const { return 1.0 / infection_duration[static_cast<std::size_t>(g)]; }
    /// beta_{hh'}; zero across groups.
    double beta(int h, int hp) const;

    /// Default constants for a domain of the given edge length. Mobile fields
    /// diffuse with k = 2.5 L^2 / T_day (transient) and 5% of that (eigen);
    /// Home fields do not diffuse.
    static ModelParams defaults(double domain_length = 1.0e5);
    void set_uniform_diffusion(double k_transient_value, double k_eigen_value);
    void validate() const;
};

/// Per-cell people counts for all eight fields, stored as
/// values[field * cells + cell].
struct StateField {
    int cells = 0;
    double time = 0.0;
    std::vector<double> values;

    StateField() = default;
    explicit StateField(int n_cells, double t = 0.0)
        : cells(n_cells), time(t), values(static_cast<std::size_t>(kFields * n_cells), 0.0) {}

    std::span<double> field(int f) { return {values.data() + static_cast<std::size_t>(f * cells), static_cast<std::size_t>(cells)}; }
    std::span<const double> field(int f) const { return {values.data() + static_cast<std::size_t>(f * cells), static_cast<std::size_t>(cells)}; }
    double& at(int f, int cell) { return values[static_cast<std::size_t>(f * cells + cell)]; }
    double at(int f, int cell) const { return values[static_cast<std::size_t>(f * cells + cell)]; }
    double total() const;
    /// Sum over the four compartments of group g in one cell.
    double group_total(int g, int cell) const;
};

/// lambda^c_{hh'} for one cell.
struct TransferCoeffs {
    std::array<double, kCompartments * kGroups * kGroups> lambda{};

    double& operator()(int c, int h, int hp) { return lambda[static_cast<std::size_t>((c * kGroups + h) * kGroups + hp)]; }
    double operator()(int c, int h, int hp) const { return lambda[static_cast<std::size_t>((c * kGroups + h) * kGroups + hp)]; }
};

struct EigenResult {
    double lambda0 = 0.0;
    double r0 = 0.0;
    StateField mode;
    double residual_norm = 0.0;
    int iterations = 0;
};

struct SolverSettings {
    double picard_tol = 1.0e-10;
    int picard_max = 50;
    double fbgs_tol = 1.0e-12;
    int fbgs_max = 500;
    double block_tol = 1.0e-10;
    int block_max = 200;
    double eigen_tol = 1.0e-10;
    int eigen_max = 1000;
};

// ---------------------------------------------------------------------------
// Classical single-group SEIRS

struct ClassicalParams {
    double beta = 0.0;
    double sigma = 0.0;
    double gamma = 0.0;
    double xi = 0.0;
    double mu = 0.0;
    double nu = 0.0;
};

struct ClassicalState {
    double S = 0.0;
    double E = 0.0;
    double I = 0.0;
    double R = 0.0;
};

/// Time derivatives of the classical SEIRS system. Requires N = S+E+I+R > 0.
ClassicalState classical_rhs(const ClassicalState& state, const ClassicalParams& params);

/// Day/night fraction 0.5 sin(2 pi t / T_day) + 0.5.
double r_day(double t, double t_one_day);

/// Intergroup transfer coefficients for time-dependent runs. `n_home` is the
/// total Home-group population of the cell.
TransferCoeffs transfer_coeffs_transient(int region, double n_home, double t, const ModelParams& params);

/// Intergroup transfer coefficients for the R0 eigenvalue problem.
TransferCoeffs transfer_coeffs_eigen(int region, const ModelParams& params);

/// Finite-volume div(k grad u) with face-harmonic k and zero flux through the
/// domain boundary and into blocked cells.
std::vector<double> apply_diffusion(std::span<const double> field, std::span<const double> k_cell, const GridSpec& grid);

/// k of one compartment/group, expanded per cell (zero in blocked cells).
std::vector<double> diffusion_per_cell(const ModelParams::Diffusion& k, int compartment, int group, const GridSpec& grid);

// ---------------------------------------------------------------------------
// Spatial solvers

/// Backward-Euler stepper: Picard on the nonlinear terms, FBGS per field and
/// block FBGS across the eight fields.
class TransientSolver {
public:
    TransientSolver(GridSpec grid, ModelParams params, SolverSettings settings = {});

    /// Advances `state` by one dt. Throws ConvergenceError.
    StateField step(const StateField& state) const;

    const GridSpec& grid() const { return grid_; }
    const ModelParams& params() const { return params_; }
    const SolverSettings& settings() const { return settings_; }

    /// Picard iterations used by the most recent step (diagnostics).
    int last_picard_iterations() const { return last_picard_; }

private:
    struct Neighbour {
        int cell;
        double weight;  ///< k_face / h^2
    };
    struct Stencil {
        std::vector<int> offsets;  ///< CSR row pointers into entries, per active cell
        std::vector<Neighbour> entries;
        std::vector<double> weight_sum;
    };

    bool fbgs(int field, std::span<const double> diag, std::span<const double> rhs, std::vector<double>& x) const;

    GridSpec grid_;
    ModelParams params_;
    SolverSettings settings_;
    std::vector<int> active_;       ///< active cell ids
    std::vector<int> active_slot_;  ///< cell -> position in active_, -1 if blocked
    std::array<Stencil, kFields> stencils_;
    mutable int last_picard_ = 0;
};

/// Default initial condition: 2000 Home-susceptible people per home cell,
/// 0.1% of which are moved to Home-exposed.
StateField default_initial_state(const GridSpec& grid);

/// Runs n_steps transient steps and returns init plus every step.
std::vector<StateField> simulate(const ModelParams& params, const GridSpec& grid, const StateField& init,
                                 const SolverSettings& settings = {});

/// Generalised eigenproblem A x = lambda0 B x for the linearised steady system;
/// B is the sigma*E source of the I equations. Inverse power iteration.
EigenResult solve_eigen(const ModelParams& params, const GridSpec& grid, const SolverSettings& settings = {});

}  // namespace epitwin::seirs
