// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "epitwin/errors.hpp"

namespace epitwin::eval {

ActiveMask ActiveMask::from_grid(const seirs::GridSpec& grid) {
    ActiveMask m;
    for (int f = 0; f < seirs::kFields; ++f) {
        const bool home = f % seirs::kGroups == 0;
        auto& cells = m.cells[static_cast<std::size_t>(f)];
        cells.resize(static_cast<std::size_t>(grid.cells()));
        for (int c = 0; c < grid.cells(); ++c) {
            const int r = grid.region(c);
            cells[static_cast<std::size_t>(c)] = home ? r == seirs::kRegionHome : r != seirs::kRegionBlocked;
        }
    }
    return m;
}

std::size_t ActiveMask::count(int field) const {
    const auto& c = cells[static_cast<std::size_t>(field)];
    return static_cast<std::size_t>(std::count(c.begin(), c.end(), 1));
}

std::array<int, seirs::kFields> table_field_order() {
    std::array<int, seirs::kFields> order{};
    int i = 0;
    for (int g = 0; g < seirs::kGroups; ++g)
        for (int c = 0; c < seirs::kCompartments; ++c) order[static_cast<std::size_t>(i++)] = seirs::field_index(c, g);
    return order;
}

namespace {

void check_sizes(std::span<const double> pred, std::span<const double> truth, std::span<const char> mask) {
    if (pred.size() != truth.size() || pred.size() != mask.size()) {
        throw ShapeError(fmt::format("metric: sizes differ (pred {}, truth {}, mask {})", pred.size(), truth.size(), mask.size()));
    }
}

}  // namespace

double rmse(std::span<const double> pred, std::span<const double> truth, std::span<const char> mask) {
    check_sizes(pred, truth, mask);
    double sq = 0.0;
    std::size_t m = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!mask[i]) continue;
        const double d = pred[i] - truth[i];
        sq += d * d;
        ++m;
    }
    if (m == 0) throw DomainError("rmse: empty mask");
    return std::sqrt(sq) / std::sqrt(static_cast<double>(m));
}

std::optional<double> nrmse(std::span<const double> pred, std::span<const double> truth, std::span<const char> mask) {
    check_sizes(pred, truth, mask);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!mask[i]) continue;
        const double d = pred[i] - truth[i];
        num += d * d;
        den += truth[i] * truth[i];
    }
    if (!(den > 0.0)) return std::nullopt;
    return std::sqrt(num) / std::sqrt(den);
}

SkillScore skill_score(double a, double b) {
    if (b > 0.0) return {1.0 - a / b, false};
    if (a > 0.0) return {-std::numeric_limits<double>::infinity(), true};
    return {0.0, false};
}

EvalReport summarize(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, const seirs::GridSpec& grid, int skip_levels) {
    const int cells = grid.cells();
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
        throw ShapeError(fmt::format("summarize: series misaligned ({}x{} vs {}x{})", pred.rows(), pred.cols(), truth.rows(), truth.cols()));
    }
    if (pred.cols() != seirs::kFields * cells) throw ShapeError("summarize: column count does not match the grid");
    if (skip_levels < 0) throw DomainError("summarize: skip_levels must be >= 0");

    const ActiveMask mask = ActiveMask::from_grid(grid);
    EvalReport rep;
    rep.levels = static_cast<int>(pred.rows());
    rep.skip_levels = skip_levels;
    const double nan = std::numeric_limits<double>::quiet_NaN();

    std::vector<double> p(static_cast<std::size_t>(cells)), v(p.size());
    for (int f = 0; f < seirs::kFields; ++f) {
        const auto fi = static_cast<std::size_t>(f);
        const auto& mk = mask.cells[fi];
        std::vector<double> cell_sq(static_cast<std::size_t>(cells), 0.0);
        int cell_count = 0;
        double nrmse_sum = 0.0;
        int nrmse_n = 0;
        for (int k = 0; k < rep.levels; ++k) {
            for (int c = 0; c < cells; ++c) {
                p[static_cast<std::size_t>(c)] = pred(k, f * cells + c);
                v[static_cast<std::size_t>(c)] = truth(k, f * cells + c);
            }
            rep.rmse[fi].push_back(rmse(p, v, mk));
            const auto n = nrmse(p, v, mk);
            rep.nrmse[fi].push_back(n ? *n : nan);
            if (k < skip_levels) continue;
            if (n) {
                nrmse_sum += *n;
                ++nrmse_n;
            } else {
                ++rep.undefined_levels[fi];
            }
            for (int c = 0; c < cells; ++c) {
                const double d = p[static_cast<std::size_t>(c)] - v[static_cast<std::size_t>(c)];
                cell_sq[static_cast<std::size_t>(c)] += d * d;
            }
            ++cell_count;
        }
        rep.average_nrmse[fi] = nrmse_n > 0 ? nrmse_sum / nrmse_n : nan;
        rep.cell_rmse[fi].resize(static_cast<std::size_t>(cells));
        for (int c = 0; c < cells; ++c) {
            const auto ci = static_cast<std::size_t>(c);
            rep.cell_rmse[fi][ci] = (mk[ci] && cell_count > 0) ? std::sqrt(cell_sq[ci] / cell_count) : nan;
        }
    }
    return rep;
}

EvalReport summarize_latent(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, const rom::RomBasis& basis,
                            const seirs::GridSpec& grid, int skip_levels) {
    if (pred.rows() != truth.rows()) throw ShapeError("summarize_latent: series misaligned");
    return summarize(rom::reconstruct_rows(basis, pred), rom::reconstruct_rows(basis, truth), grid, skip_levels);
}

std::array<std::vector<SkillScore>, seirs::kFields> skill_map(const EvalReport& a, const EvalReport& b) {
    std::array<std::vector<SkillScore>, seirs::kFields> out;
    for (std::size_t f = 0; f < out.size(); ++f) {
        if (a.cell_rmse[f].size() != b.cell_rmse[f].size()) throw ShapeError("skill_map: reports cover different grids");
        for (std::size_t c = 0; c < a.cell_rmse[f].size(); ++c) {
            const double ra = a.cell_rmse[f][c], rb = b.cell_rmse[f][c];
            if (std::isnan(ra) || std::isnan(rb)) {
                out[f].push_back({std::numeric_limits<double>::quiet_NaN(), false});
            } else {
                out[f].push_back(skill_score(ra, rb));
            }
        }
    }
    return out;
}

TimingStats time_harness(const std::function<void()>& fn, int reps) {
    if (reps < 3) throw DomainError("time_harness: reps must be >= 3");
    TimingStats s;
    s.reps = reps;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        s.samples.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::vector<double> sorted = s.samples;
    std::sort(sorted.begin(), sorted.end());
    s.min = sorted.front();
    s.max = sorted.back();
    const std::size_t n = sorted.size();
    s.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    double total = 0.0;
    for (double v : sorted) total += v;
    s.mean = total / static_cast<double>(n);
    return s;
}

}  // namespace epitwin::eval
