// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// Error metrics over active regions, per-field summaries and a wall-clock
// harness.

#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "epitwin/rom.hpp"
#include "epitwin/seirs.hpp"

namespace epitwin::eval {

using FieldArray = std::array<double, seirs::kFields>;

/// Per-field cell masks: Home fields are active in the home region only,
/// Mobile fields in every non-blocked cell.
struct ActiveMask {
    std::array<std::vector<char>, seirs::kFields> cells;

    static ActiveMask from_grid(const seirs::GridSpec& grid);
    std::size_t count(int field) const;
};

/// Field order of the summary tables: H-S, H-E, H-I, H-R, M-S, M-E, M-I, M-R.
std::array<int, seirs::kFields> table_field_order();

/// ||u - v|| / sqrt(m) over the masked entries. Throws on an empty mask.
double rmse(std::span<const double> pred, std::span<const double> truth, std::span<const char> mask);
/// ||u - v|| / ||v|| over the masked entries; nullopt when ||v|| = 0.
std::optional<double> nrmse(std::span<const double> pred, std::span<const double> truth, std::span<const char> mask);

struct SkillScore {
    double value = 0.0;
    /// rmse_b = 0 < rmse_a: value is -infinity.
    bool unbounded = false;
};
/// 1 - rmse_a / rmse_b, with 0 when both vanish.
SkillScore skill_score(double rmse_a, double rmse_b);

struct EvalReport {
    int levels = 0;
    int skip_levels = 50;
    /// Per field, per level. Undefined NRMSE levels hold NaN.
    std::array<std::vector<double>, seirs::kFields> rmse;
    std::array<std::vector<double>, seirs::kFields> nrmse;
    /// Mean NRMSE over levels >= skip_levels, undefined levels dropped.
    FieldArray average_nrmse{};
    std::array<int, seirs::kFields> undefined_levels{};
    /// Per field, per cell: sqrt(mean_t err^2) over levels >= skip_levels
    /// (NaN outside the field's mask).
    std::array<std::vector<double>, seirs::kFields> cell_rmse;
};

/// pred/truth: levels x (8 * cells) physical rows, aligned level by level.
EvalReport summarize(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, const seirs::GridSpec& grid, int skip_levels = 50);
/// Latent series reconstructed through `basis` first.
EvalReport summarize_latent(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, const rom::RomBasis& basis,
                            const seirs::GridSpec& grid, int skip_levels = 50);

/// Per-field, per-cell skill of a against b from their cell RMSE maps.
std::array<std::vector<SkillScore>, seirs::kFields> skill_map(const EvalReport& a, const EvalReport& b);

struct TimingStats {
    int reps = 0;
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    std::vector<double> samples;
};

/// Runs `fn` reps times (reps >= 3) and reports wall-clock seconds.
TimingStats time_harness(const std::function<void()>& fn, int reps);

}  // namespace epitwin::eval
