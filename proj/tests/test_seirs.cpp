// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "epitwin/errors.hpp"
#include "epitwin/random.hpp"
#include "epitwin/seirs.hpp"
#include "support.hpp"

using namespace epitwin;
using namespace epitwin::seirs;

namespace {

constexpr double kDay = kSecondsPerDay;
using test_support::scalar_backward_euler;

double total(const StateField& s) {
    double acc = 0.0;
    for (double v : s.values) acc += v;
    return acc;
}

}  // namespace

TEST_CASE("classical rhs: no infection, balanced births") {
    ClassicalParams p{0.3 / kDay, 1.0 / (4.5 * kDay), 1.0 / (7 * kDay), 0.0, 1e-8, 1e-8};
    const ClassicalState d = classical_rhs({1000, 0, 0, 0}, p);
    CHECK(d.S == 0.0);
    CHECK(d.E == 0.0);
    CHECK(d.I == 0.0);
    CHECK(d.R == 0.0);
}

TEST_CASE("classical rhs: all processes off") {
    const ClassicalState d = classical_rhs({5, 6, 7, 8}, ClassicalParams{});
    CHECK(d.S == 0.0);
    CHECK(d.E == 0.0);
    CHECK(d.I == 0.0);
    CHECK(d.R == 0.0);
}

TEST_CASE("classical rhs: hand evaluation") {
    const double beta = 0.3 / kDay, sigma = 1 / (4.5 * kDay), gamma = 1 / (7 * kDay);
    const ClassicalState d = classical_rhs({900, 50, 40, 10}, {beta, sigma, gamma, 0, 0, 0});
    // N = 1000, infection = beta * 900 * 40 / 1000 = 36 beta
    CHECK(d.S == doctest::Approx(-36.0 * beta).epsilon(1e-14));
    CHECK(d.E == doctest::Approx(36.0 * beta - 50 * sigma).epsilon(1e-14));
    CHECK(d.I == doctest::Approx(50 * sigma - 40 * gamma).epsilon(1e-14));
    CHECK(d.R == doctest::Approx(40 * gamma).epsilon(1e-14));
}

TEST_CASE("classical rhs rejects bad input") {
    CHECK_THROWS_AS(classical_rhs({NAN, 1, 1, 1}, ClassicalParams{}), DomainError);
    CHECK_THROWS_AS(classical_rhs({1, 1, 1, 1}, {INFINITY, 0, 0, 0, 0, 0}), DomainError);
    CHECK_THROWS_AS(classical_rhs({0, 0, 0, 0}, ClassicalParams{}), DomainError);
}

TEST_CASE("r_day") {
    CHECK(r_day(0.0, kDay) == 0.5);
    CHECK(r_day(kDay / 4, kDay) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r_day(3 * kDay / 4, kDay) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("transient transfer coefficients") {
    const ModelParams p = ModelParams::defaults();
    SUBCASE("outside the home region everything is zero") {
        for (int region : {kRegionBlocked, kRegionTravel}) {
            const TransferCoeffs tc = transfer_coeffs_transient(region, 1234.0, 5000.0, p);
            for (double v : tc.lambda) CHECK(v == 0.0);
        }
    }
    SUBCASE("zero forcing at the aim") {
        const double t = 0.3 * kDay;
        const double aim = 1000.0 * (1 - r_day(t, kDay)) + 1000.0;
        const TransferCoeffs tc = transfer_coeffs_transient(kRegionHome, aim, t, p);
        for (double v : tc.lambda) CHECK(v == 0.0);
    }
    SUBCASE("hand evaluation above the aim") {
        const TransferCoeffs tc = transfer_coeffs_transient(kRegionHome, 2000.0, kDay / 4, p);
        const double rate = 1000.0 / kDay;
        for (int c = 0; c < kCompartments; ++c) {
            CHECK(tc(c, 0, 0) == doctest::Approx(0.01 * rate * 0.5).epsilon(1e-12));
            CHECK(tc(c, 1, 0) == doctest::Approx(-0.01 * rate * 0.5).epsilon(1e-12));
            CHECK(tc(c, 1, 1) == 0.0);
            CHECK(tc(c, 0, 1) == 0.0);
        }
    }
    SUBCASE("conservation pairs hold below the aim") {
        const TransferCoeffs tc = transfer_coeffs_transient(kRegionHome, 300.0, 0.1 * kDay, p);
        for (int c = 0; c < kCompartments; ++c) {
            CHECK(tc(c, 1, 1) == -tc(c, 0, 1));
            CHECK(tc(c, 0, 0) == -tc(c, 1, 0));
            CHECK(tc(c, 1, 1) > 0.0);
        }
    }
}

TEST_CASE("eigen transfer coefficients") {
    ModelParams p = ModelParams::defaults();
    CHECK(p.r_ratio == 25.65);
    const TransferCoeffs home = transfer_coeffs_eigen(p.eigen_home_region, p);
    CHECK(home(0, 0, 0) == 1e10);
    CHECK(home(3, 1, 1) == 1e10);
    const int other = p.eigen_home_region == kRegionHome ? kRegionTravel : kRegionHome;
    const TransferCoeffs away = transfer_coeffs_eigen(other, p);
    CHECK(away(1, 0, 0) == doctest::Approx(10000.0 / kDay).epsilon(1e-14));
    CHECK(away(1, 1, 1) == 0.0);
    p.epsilon = 0.0;
    CHECK_THROWS_AS(transfer_coeffs_eigen(kRegionHome, p), DomainError);
}

TEST_CASE("diffusion stencil") {
    const GridSpec g = GridSpec::uniform(3, 1, 1, 3.0, kRegionTravel);
    const std::vector<double> k(3, 2.5);
    SUBCASE("1-D hand stencil") {
        const auto out = apply_diffusion(std::vector<double>{0, 1, 0}, k, g);
        CHECK(out[0] == doctest::Approx(2.5));
        CHECK(out[1] == doctest::Approx(-5.0));
        CHECK(out[2] == doctest::Approx(2.5));
    }
    SUBCASE("uniform field and zero k give zero") {
        for (double v : apply_diffusion(std::vector<double>{4, 4, 4}, k, g)) CHECK(v == 0.0);
        for (double v : apply_diffusion(std::vector<double>{1, 7, 3}, std::vector<double>(3, 0.0), g)) CHECK(v == 0.0);
    }
}

TEST_CASE("diffusion operator is symmetric, NSD and zero-sum on the cross") {
    const GridSpec g = GridSpec::cross_default();
    const int n = g.cells();
    std::vector<double> k(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) k[static_cast<std::size_t>(c)] = g.active(c) ? 1.7e3 : 0.0;
    Eigen::MatrixXd a(n, n);
    for (int j = 0; j < n; ++j) {
        std::vector<double> e(static_cast<std::size_t>(n), 0.0);
        e[static_cast<std::size_t>(j)] = 1.0;
        const auto col = apply_diffusion(e, k, g);
        for (int i = 0; i < n; ++i) a(i, j) = col[static_cast<std::size_t>(i)];
    }
    CHECK((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * a.cwiseAbs().maxCoeff());
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a).eigenvalues();
    CHECK(ev.maxCoeff() <= 1e-12 * a.cwiseAbs().maxCoeff());

    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> u(static_cast<std::size_t>(n));
        for (auto& v : u) v = rng.uniform(-100, 100);
        const auto out = apply_diffusion(u, k, g);
        double s = 0.0, scale = 0.0;
        for (double v : out) {
            s += v;
            scale += std::abs(v);
        }
        CHECK(std::abs(s) <= 1e-12 * scale);
    }
}

TEST_CASE("grid validation") {
    GridSpec g = GridSpec::cross_default();
    CHECK(g.cells() == 100);
    int blocked = 0, home = 0;
    for (int c = 0; c < g.cells(); ++c) {
        blocked += g.region(c) == kRegionBlocked;
        home += g.region(c) == kRegionHome;
    }
    CHECK(blocked == 64);
    CHECK(home == 4);
    g.region_map[3] = 4;
    CHECK_THROWS_AS(g.validate(), DomainError);
    g = GridSpec::cross_default();
    g.region_map.pop_back();
    CHECK_THROWS_AS(g.validate(), DomainError);
    g = GridSpec::cross_default();
    g.nx = 0;
    CHECK_THROWS_AS(g.validate(), DomainError);
}

TEST_CASE("all-zero state is a fixed point") {
    const GridSpec g = GridSpec::cross_default();
    const TransientSolver solver(g, ModelParams::defaults());
    const StateField next = solver.step(StateField(g.cells()));
    for (double v : next.values) CHECK(v == 0.0);
    CHECK(next.time == 1000.0);
}

TEST_CASE("point reduction matches scalar backward Euler") {
    ModelParams p = ModelParams::defaults();
    p.birth = {2e-8, 3e-8};
    for (int c = 0; c < kCompartments; ++c) p.death[c] = {2e-8, 3e-8};
    const GridSpec g = GridSpec::single_cell(kRegionTravel);
    const TransientSolver solver(g, p);

    StateField s(1);
    const double init[2][4] = {{900, 50, 40, 10}, {600, 30, 80, 5}};
    for (int c = 0; c < kCompartments; ++c) {
        for (int h = 0; h < kGroups; ++h) s.at(field_index(c, h), 0) = init[h][c];
    }
    double worst = 0.0;
    for (int step = 0; step < 100; ++step) {
        const StateField next = solver.step(s);
        for (int h = 0; h < kGroups; ++h) {
            const ClassicalParams cp{p.beta(h, h), p.sigma, p.gamma(h), p.immunity_loss[static_cast<std::size_t>(h)],
                                     p.birth[static_cast<std::size_t>(h)], p.death[0][static_cast<std::size_t>(h)]};
            const ClassicalState old{s.at(field_index(0, h), 0), s.at(field_index(1, h), 0), s.at(field_index(2, h), 0),
                                     s.at(field_index(3, h), 0)};
            const ClassicalState ref = scalar_backward_euler(old, cp, p.dt);
            const double n = old.S + old.E + old.I + old.R;
            const double got[4] = {next.at(field_index(0, h), 0), next.at(field_index(1, h), 0),
                                   next.at(field_index(2, h), 0), next.at(field_index(3, h), 0)};
            const double want[4] = {ref.S, ref.E, ref.I, ref.R};
            for (int c = 0; c < 4; ++c) worst = std::max(worst, std::abs(got[c] - want[c]) / n);
        }
        s = next;
    }
    CHECK(worst <= 1e-8);
}

TEST_CASE("short run conserves people and leaves blocked cells untouched") {
    ModelParams p = ModelParams::defaults();
    p.n_steps = 60;
    const GridSpec g = GridSpec::cross_default();
    const StateField init = default_initial_state(g);
    CHECK(total(init) == doctest::Approx(8000.0));
    const auto series = simulate(p, g, init);
    REQUIRE(series.size() == 61);
    for (std::size_t k = 1; k < series.size(); ++k) {
        const double before = total(series[k - 1]);
        CHECK(std::abs(total(series[k]) - before) <= 1e-8 * before);
        for (int cell = 0; cell < g.cells(); ++cell) {
            if (g.active(cell)) continue;
            for (int f = 0; f < kFields; ++f) CHECK(series[k].at(f, cell) == init.at(f, cell));
        }
    }
}

TEST_CASE("simulate with zero steps returns the initial state") {
    ModelParams p = ModelParams::defaults();
    p.n_steps = 0;
    const GridSpec g = GridSpec::cross_default();
    const auto series = simulate(p, g, default_initial_state(g));
    REQUIRE(series.size() == 1);
    CHECK(series[0].values == default_initial_state(g).values);
}

TEST_CASE("eigen solve: definition and independent residual") {
    const GridSpec g = GridSpec::cross_default();
    const ModelParams p = ModelParams::defaults(g.length);
    const EigenResult r = solve_eigen(p, g);
    CHECK(r.lambda0 * r.r0 == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r.residual_norm <= 1e-8);
    const double oracle = test_support::eigen_residual(p, g, r.mode, r.lambda0);
    CHECK(std::abs(oracle - r.residual_norm) <= 1e-12);
}

TEST_CASE("eigen solve: R0 does not fall when the mobile R0 grows") {
    const GridSpec g = GridSpec::cross_default();
    ModelParams p = ModelParams::defaults(g.length);
    const double base = solve_eigen(p, g).r0;
    p.r0_group[1] *= 1.5;
    CHECK(solve_eigen(p, g).r0 >= base);
}
