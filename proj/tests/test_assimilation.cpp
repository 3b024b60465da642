// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "epitwin/assimilation.hpp"
#include "epitwin/errors.hpp"
#include "epitwin/random.hpp"
#include "support.hpp"

using namespace epitwin;
using namespace epitwin::assim;

namespace {

// Samples of a zero-mean Gaussian with covariance L L^T, shifted by mu.
Eigen::MatrixXd gaussian_rows(int n, const Eigen::VectorXd& mu, const Eigen::MatrixXd& l, Rng& rng) {
    Eigen::MatrixXd out(n, mu.size());
    for (int r = 0; r < n; ++r) {
        Eigen::VectorXd z(mu.size());
        for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = rng.normal();
        out.row(r) = (mu + l * z).transpose();
    }
    return out;
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("blue: zero innovation and zero cross-covariance") {
    Rng rng(1);
    const Eigen::VectorXd u_mean = test_support::random_matrix(4, 1, rng), v_mean = test_support::random_matrix(2, 1, rng);
    const Eigen::MatrixXd c_uv = test_support::random_matrix(4, 2, rng);
    const Eigen::MatrixXd a = test_support::random_matrix(2, 2, rng);
    const Eigen::MatrixXd c = a * a.transpose() + Eigen::MatrixXd::Identity(2, 2);
    const BlueStats s = BlueStats::from_moments(u_mean, v_mean, c_uv, c, 1e-8);
    CHECK(blue_correct(Eigen::VectorXd::Zero(4), s, v_mean) == u_mean);
    const BlueStats z = BlueStats::from_moments(u_mean, v_mean, Eigen::MatrixXd::Zero(4, 2), c, 1e-8);
    CHECK(blue_correct(Eigen::VectorXd::Zero(4), z, test_support::random_matrix(2, 1, rng)) == u_mean);
}

TEST_CASE("blue: analytic conditional mean of a 2-D Gaussian") {
    // (u, v) jointly Gaussian: E[u | v] = mu_u + s_uv / s_vv (v - mu_v).
    const double mu_u = 1.5, mu_v = -0.3, s_uv = 0.8, s_vv = 2.0;
    const BlueStats s = BlueStats::from_moments(Eigen::VectorXd::Constant(1, mu_u), Eigen::VectorXd::Constant(1, mu_v),
                                                Eigen::MatrixXd::Constant(1, 1, s_uv), Eigen::MatrixXd::Constant(1, 1, s_vv), 0.0);
    for (double v : {-2.0, 0.0, 0.7, 3.1}) {
        const double want = mu_u + s_uv / s_vv * (v - mu_v);
        CHECK(std::abs(blue_correct(Eigen::VectorXd::Zero(1), s, Eigen::VectorXd::Constant(1, v))[0] - want) <= 1e-12);
    }
}

TEST_CASE("blue: multivariate conditional mean, ridge going to zero") {
    Rng rng(2);
    const Eigen::MatrixXd l = test_support::random_matrix(6, 6, rng) + 2.0 * Eigen::MatrixXd::Identity(6, 6);
    const Eigen::MatrixXd sigma = l * l.transpose();
    const Eigen::VectorXd mu = test_support::random_matrix(6, 1, rng);
    // u = first 4, v = last 2.
    const Eigen::MatrixXd c_uv = sigma.topRightCorner(4, 2), c = sigma.bottomRightCorner(2, 2);
    const Eigen::VectorXd v = test_support::random_matrix(2, 1, rng);
    const Eigen::VectorXd exact = mu.head(4) + c_uv * c.inverse() * (v - mu.tail(2));
    double previous = INFINITY;
    for (double ridge : {1e-6, 1e-9, 0.0}) {
        const BlueStats s = BlueStats::from_moments(mu.head(4), mu.tail(2), c_uv, c, ridge);
        const double err = max_abs(blue_correct(Eigen::VectorXd::Zero(4), s, v) - exact);
        CHECK(err <= previous);
        previous = err;
        if (ridge <= 1e-9) CHECK(err <= 1e-8);
    }
}

TEST_CASE("blue is affine in the observation") {
    Rng rng(3);
    const Eigen::MatrixXd a = test_support::random_matrix(3, 3, rng);
    const BlueStats s = BlueStats::from_moments(test_support::random_matrix(5, 1, rng), test_support::random_matrix(3, 1, rng),
                                                test_support::random_matrix(5, 3, rng),
                                                a * a.transpose() + Eigen::MatrixXd::Identity(3, 3), 1e-6);
    const Eigen::VectorXd u = Eigen::VectorXd::Zero(5);
    const Eigen::VectorXd v1 = test_support::random_matrix(3, 1, rng), v2 = test_support::random_matrix(3, 1, rng);
    const double alpha = 0.3;
    const Eigen::VectorXd lhs = blue_correct(u, s, alpha * v1 + (1 - alpha) * v2);
    const Eigen::VectorXd rhs = alpha * blue_correct(u, s, v1) + (1 - alpha) * blue_correct(u, s, v2);
    CHECK(max_abs(lhs - rhs) <= 1e-12);
}

TEST_CASE("blue rejects inconsistent or indefinite stats") {
    const Eigen::VectorXd m2 = Eigen::VectorXd::Zero(2);
    CHECK_THROWS_AS(BlueStats::from_moments(m2, m2, Eigen::MatrixXd::Zero(3, 2), Eigen::MatrixXd::Identity(2, 2), 0.0), ShapeError);
    CHECK_THROWS_AS(BlueStats::from_moments(m2, m2, Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Identity(2, 2), -1.0),
                    DomainError);
    const BlueStats bad = BlueStats::from_moments(m2, m2, Eigen::MatrixXd::Identity(2, 2), -Eigen::MatrixXd::Identity(2, 2), 0.0);
    CHECK_THROWS_AS(blue_correct(m2, bad, m2), DomainError);
    const BlueStats ok = BlueStats::from_moments(m2, m2, Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2), 0.0);
    CHECK_THROWS_AS(blue_correct(Eigen::VectorXd::Zero(3), ok, m2), ShapeError);
}

TEST_CASE("estimate_stats against textbook covariance loops") {
    Rng rng(4);
    const Eigen::MatrixXd l = test_support::random_matrix(5, 5, rng);
    const Eigen::MatrixXd rows = gaussian_rows(200, test_support::random_matrix(5, 1, rng), l, rng);
    const Eigen::MatrixXd u = rows.leftCols(3), v = rows.rightCols(2);
    const BlueStats s = estimate_stats(u, v, 1e-8);
    const int n = 200;
    for (int i = 0; i < 3; ++i) {
        double mu = 0.0;
        for (int r = 0; r < n; ++r) mu += u(r, i);
        mu /= n;
        CHECK(std::abs(s.u_mean[i] - mu) <= 1e-12);
        for (int j = 0; j < 2; ++j) {
            double mv = 0.0;
            for (int r = 0; r < n; ++r) mv += v(r, j);
            mv /= n;
            double cov = 0.0;
            for (int r = 0; r < n; ++r) cov += (u(r, i) - mu) * (v(r, j) - mv);
            CHECK(std::abs(s.c_uv(i, j) - cov / (n - 1)) <= 1e-12);
        }
    }
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            double mi = v.col(i).mean(), mj = v.col(j).mean(), cov = 0.0;
            for (int r = 0; r < n; ++r) cov += (v(r, i) - mi) * (v(r, j) - mj);
            CHECK(std::abs(s.c(i, j) - cov / (n - 1)) <= 1e-12);
        }
    }
    CHECK(s.c == s.c.transpose());
    CHECK(s.ridge == doctest::Approx(1e-8 * s.c.trace() / 2).epsilon(1e-14));
}

TEST_CASE("estimate_stats: constant and perfectly correlated histories") {
    const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(10, 2, 4.25);
    const BlueStats s = estimate_stats(flat, flat);
    CHECK(s.c == Eigen::MatrixXd::Zero(2, 2));
    CHECK(s.u_mean == Eigen::VectorXd::Constant(2, 4.25));
    CHECK(s.v_mean == Eigen::VectorXd::Constant(2, 4.25));

    Rng rng(5);
    const Eigen::MatrixXd same = test_support::random_matrix(30, 3, rng);
    const BlueStats p = estimate_stats(same, same, 1e-10);
    CHECK(max_abs(p.c_uv - p.c) == 0.0);
    const Eigen::VectorXd v = test_support::random_matrix(3, 1, rng);
    CHECK(max_abs(blue_correct(Eigen::VectorXd::Zero(3), p, v) - v) <= 1e-8);

    CHECK_THROWS_AS(estimate_stats(same.topRows(1), same.topRows(1)), ShapeError);
    CHECK_THROWS_AS(estimate_stats(same, same.topRows(5)), ShapeError);
}

TEST_CASE("corrected rollout with a perfect predictor tracks the truth") {
    Rng rng(6);
    const int levels = 60, m = 3, window = 4;
    Eigen::MatrixXd truth(levels, m);
    for (int r = 0; r < levels; ++r)
        for (int j = 0; j < m; ++j) truth(r, j) = std::sin(0.2 * r * (j + 1)) + 0.1 * rng.normal();

    // History of [window rows, next row] against the next row.
    Eigen::MatrixXd u(levels - window, (window + 1) * m), v(levels - window, m);
    for (int k = 0; k + window < levels; ++k) {
        for (int r = 0; r <= window; ++r) u.block(k, r * m, 1, m) = truth.row(k + r);
        v.row(k) = truth.row(k + window);
    }
    const BlueStats stats = estimate_stats(u, v, 1e-8);

    int next_level = 10;
    const Predictor oracle = [&](const Eigen::MatrixXd&) -> Eigen::RowVectorXd { return truth.row(next_level++); };
    AccessLog log;
    const Eigen::MatrixXd out = rollout_corrected(oracle, stats, truth, window, 10, 30, &log);
    REQUIRE(out.rows() == window + 30);
    CHECK(out.topRows(window) == truth.middleRows(10 - window, window));
    CHECK(max_abs(out.bottomRows(30) - truth.middleRows(10, 30)) <= 1e-6);

    // One observation per predicted level, after the seed window.
    REQUIRE(log.levels.size() == static_cast<std::size_t>(window + 30));
    for (int i = 0; i < window + 30; ++i) CHECK(log.levels[static_cast<std::size_t>(i)] == 10 - window + i);

    CHECK_THROWS_AS(rollout_corrected(oracle, stats, truth, window, 2, 5), DomainError);
    next_level = 50;
    CHECK_THROWS_AS(rollout_corrected(oracle, stats, truth, window, 50, 20), ShapeError);
}

TEST_CASE("rollout stats use windows inside the training levels only") {
    Rng rng(7);
    const Eigen::MatrixXd truth = test_support::random_matrix(30, 2, rng);
    int calls = 0;
    const Predictor zero = [&](const Eigen::MatrixXd& w) -> Eigen::RowVectorXd {
        ++calls;
        return Eigen::RowVectorXd::Zero(w.cols());
    };
    const BlueStats s = estimate_rollout_stats(zero, truth, 3, 20);
    CHECK(calls == 17);
    CHECK(s.u_mean.size() == 8);
    CHECK(max_abs(s.v_mean.transpose() - truth.middleRows(3, 17).colwise().mean()) <= 1e-14);
    CHECK_THROWS_AS(estimate_rollout_stats(zero, truth, 3, 31), ShapeError);
    CHECK_THROWS_AS(estimate_rollout_stats(zero, truth, 3, 4), ShapeError);
}
