// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "epitwin/errors.hpp"
#include "epitwin/evaluation.hpp"
#include "epitwin/random.hpp"
#include "support.hpp"

using namespace epitwin;
using namespace epitwin::eval;

namespace {

struct Instance {
    std::vector<double> pred, truth;
    std::vector<char> mask;
};

Instance random_instance(Rng& rng) {
    const auto n = static_cast<std::size_t>(5 + rng.below(60));
    Instance in;
    for (std::size_t i = 0; i < n; ++i) {
        in.truth.push_back(rng.uniform(-50, 200));
        in.pred.push_back(rng.uniform(-50, 200));
        in.mask.push_back(rng.uniform() < 0.7 ? 1 : 0);
    }
    in.mask[rng.below(n)] = 1;
    return in;
}

double loop_rmse(const Instance& in) {
    double s = 0.0;
    int m = 0;
    for (std::size_t i = 0; i < in.pred.size(); ++i) {
        if (in.mask[i]) {
            s += (in.pred[i] - in.truth[i]) * (in.pred[i] - in.truth[i]);
            ++m;
        }
    }
    return std::sqrt(s / m);
}

double loop_nrmse(const Instance& in) {
    double s = 0.0, t = 0.0;
    for (std::size_t i = 0; i < in.pred.size(); ++i) {
        if (in.mask[i]) {
            s += (in.pred[i] - in.truth[i]) * (in.pred[i] - in.truth[i]);
            t += in.truth[i] * in.truth[i];
        }
    }
    return std::sqrt(s / t);
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("metrics match scalar loops on 100 random instances") {
    Rng rng(100);
    for (int k = 0; k < 100; ++k) {
        const Instance in = random_instance(rng);
        CHECK(close(rmse(in.pred, in.truth, in.mask), loop_rmse(in)));
        CHECK(close(*nrmse(in.pred, in.truth, in.mask), loop_nrmse(in)));
        const double a = rng.uniform(0, 10), b = rng.uniform(0.1, 10);
        CHECK(close(skill_score(a, b).value, 1.0 - a / b));
    }
}

TEST_CASE("trivial identities hold exactly") {
    const std::vector<double> truth{3, 0, 17, 250, 8, 1};
    const std::vector<char> mask{1, 1, 0, 1, 1, 1};
    CHECK(rmse(truth, truth, mask) == 0.0);
    CHECK(*nrmse(truth, truth, mask) == 0.0);

    std::vector<double> shifted = truth, zero(truth.size(), 0.0), doubled = truth;
    for (auto& v : shifted) v += 0.5;
    for (auto& v : doubled) v *= 2.0;
    CHECK(rmse(shifted, truth, mask) == 0.5);
    CHECK(*nrmse(zero, truth, mask) == 1.0);
    CHECK(*nrmse(doubled, truth, mask) == 1.0);

    CHECK(skill_score(1.3, 1.3).value == 0.0);
    CHECK(skill_score(0.0, 4.0).value == 1.0);
    CHECK(skill_score(2.0, 1.0).value == -1.0);
    const SkillScore inf = skill_score(1.0, 0.0);
    CHECK(inf.unbounded);
    CHECK(inf.value == -std::numeric_limits<double>::infinity());
    const SkillScore both = skill_score(0.0, 0.0);
    CHECK_FALSE(both.unbounded);
    CHECK(both.value == 0.0);
}

TEST_CASE("metric properties") {
    Rng rng(7);
    for (int k = 0; k < 50; ++k) {
        Instance in = random_instance(rng);
        CHECK(close(rmse(in.pred, in.truth, in.mask), rmse(in.truth, in.pred, in.mask)));
        const double alpha = rng.uniform(-3, 3);
        Instance scaled = in;
        for (auto& v : scaled.pred) v *= alpha;
        for (auto& v : scaled.truth) v *= alpha;
        CHECK(std::abs(rmse(scaled.pred, scaled.truth, in.mask) - std::abs(alpha) * rmse(in.pred, in.truth, in.mask)) <=
              1e-12 * rmse(in.pred, in.truth, in.mask) * (1 + std::abs(alpha)));
        CHECK(close(*nrmse(scaled.pred, scaled.truth, in.mask), *nrmse(in.pred, in.truth, in.mask)));
        const double a = rng.uniform(0.1, 5), b = rng.uniform(0.1, 5);
        if (a != b) CHECK(std::signbit(skill_score(a, b).value) != std::signbit(skill_score(b, a).value));
    }
}

TEST_CASE("metric errors") {
    const std::vector<double> x{1, 2, 3};
    CHECK_THROWS_AS(rmse(x, x, std::vector<char>{0, 0, 0}), DomainError);
    CHECK_THROWS_AS(rmse(x, std::vector<double>{1, 2}, std::vector<char>{1, 1, 1}), ShapeError);
    CHECK_FALSE(nrmse(x, std::vector<double>{0, 0, 0}, std::vector<char>{1, 1, 1}).has_value());
}

TEST_CASE("active masks follow the regions") {
    const seirs::GridSpec g = seirs::GridSpec::cross_default();
    const ActiveMask m = ActiveMask::from_grid(g);
    for (int c = 0; c < seirs::kCompartments; ++c) {
        const auto& home = m.cells[static_cast<std::size_t>(seirs::field_index(c, 0))];
        const auto& mobile = m.cells[static_cast<std::size_t>(seirs::field_index(c, 1))];
        for (int cell = 0; cell < g.cells(); ++cell) {
            const int r = g.region(cell);
            CHECK(static_cast<bool>(home[static_cast<std::size_t>(cell)]) == (r == seirs::kRegionHome));
            CHECK(static_cast<bool>(mobile[static_cast<std::size_t>(cell)]) == (r != seirs::kRegionBlocked));
        }
    }
    CHECK(m.count(0) == 4);
    CHECK(m.count(1) == 36);
}

TEST_CASE("table column order") {
    const auto order = table_field_order();
    const char* want[] = {"H-S", "H-E", "H-I", "H-R", "M-S", "M-E", "M-I", "M-R"};
    for (int i = 0; i < 8; ++i) CHECK(seirs::field_label(order[static_cast<std::size_t>(i)]) == want[i]);
}

TEST_CASE("summarize: self comparison and recomputed averages") {
    const seirs::GridSpec g = seirs::GridSpec::cross_default();
    const ActiveMask mask = ActiveMask::from_grid(g);
    Rng rng(9);
    const int levels = 80, vars = 8 * g.cells();
    Eigen::MatrixXd truth = test_support::random_matrix(levels, vars, rng, 0.0, 100.0);
    // An empty Home-E field for the first 60 levels makes its NRMSE undefined there.
    const int he = seirs::field_index(1, 0);
    truth.block(0, he * g.cells(), 60, g.cells()).setZero();
    const Eigen::MatrixXd pred = truth + test_support::random_matrix(levels, vars, rng, -5.0, 5.0);

    const EvalReport self = summarize(truth, truth, g);
    for (int f = 0; f < 8; ++f) {
        if (f != he) CHECK(self.average_nrmse[static_cast<std::size_t>(f)] == 0.0);
    }

    const EvalReport rep = summarize(pred, truth, g);
    CHECK(rep.levels == levels);
    CHECK(rep.skip_levels == 50);
    for (int f = 0; f < 8; ++f) {
        const auto fi = static_cast<std::size_t>(f);
        const auto& mk = mask.cells[fi];
        double sum = 0.0;
        int n = 0, undefined = 0;
        for (int k = 0; k < levels; ++k) {
            const Eigen::RowVectorXd p = pred.row(k).segment(f * g.cells(), g.cells());
            const Eigen::RowVectorXd t = truth.row(k).segment(f * g.cells(), g.cells());
            double num = 0.0, den = 0.0, sq = 0.0;
            int m = 0;
            for (int c = 0; c < g.cells(); ++c) {
                if (!mk[static_cast<std::size_t>(c)]) continue;
                num += (p[c] - t[c]) * (p[c] - t[c]);
                den += t[c] * t[c];
                sq += (p[c] - t[c]) * (p[c] - t[c]);
                ++m;
            }
            CHECK(close(rep.rmse[fi][static_cast<std::size_t>(k)], std::sqrt(sq / m)));
            if (den == 0.0) {
                CHECK(std::isnan(rep.nrmse[fi][static_cast<std::size_t>(k)]));
                if (k >= 50) ++undefined;
                continue;
            }
            if (k < 50) continue;
            sum += std::sqrt(num / den);
            ++n;
        }
        CHECK(rep.undefined_levels[fi] == undefined);
        CHECK(close(rep.average_nrmse[fi], sum / n));
        // Per-cell maps over the evaluated levels.
        for (int c = 0; c < g.cells(); ++c) {
            const double v = rep.cell_rmse[fi][static_cast<std::size_t>(c)];
            if (!mk[static_cast<std::size_t>(c)]) {
                CHECK(std::isnan(v));
                continue;
            }
            double sq = 0.0;
            for (int k = 50; k < levels; ++k) {
                const double d = pred(k, f * g.cells() + c) - truth(k, f * g.cells() + c);
                sq += d * d;
            }
            CHECK(close(v, std::sqrt(sq / (levels - 50))));
        }
    }
    CHECK(rep.undefined_levels[static_cast<std::size_t>(he)] == 10);
    CHECK_THROWS_AS(summarize(pred.topRows(10), truth, g), ShapeError);
}

TEST_CASE("skill map flags unbounded cells and skips inactive ones") {
    const seirs::GridSpec g = seirs::GridSpec::cross_default();
    EvalReport a, b;
    for (int f = 0; f < 8; ++f) {
        a.cell_rmse[static_cast<std::size_t>(f)].assign(static_cast<std::size_t>(g.cells()), 1.0);
        b.cell_rmse[static_cast<std::size_t>(f)].assign(static_cast<std::size_t>(g.cells()), 2.0);
    }
    a.cell_rmse[0][0] = std::numeric_limits<double>::quiet_NaN();
    b.cell_rmse[0][1] = 0.0;
    const auto ss = skill_map(a, b);
    CHECK(std::isnan(ss[0][0].value));
    CHECK(ss[0][1].unbounded);
    CHECK(ss[3][5].value == 0.5);
}

TEST_CASE("timing harness") {
    int calls = 0;
    const TimingStats s = time_harness([&] { ++calls; }, 5);
    CHECK(calls == 5);
    CHECK(s.samples.size() == 5);
    CHECK(s.min <= s.median);
    CHECK(s.median <= s.max);
    CHECK(s.min <= s.mean);
    CHECK(s.mean <= s.max);
    CHECK_THROWS_AS(time_harness([] {}, 2), DomainError);
}
