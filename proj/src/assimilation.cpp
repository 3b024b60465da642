// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/assimilation.hpp"

#include <cmath>

#include <fmt/format.h>

#include "epitwin/errors.hpp"

namespace epitwin::assim {

BlueStats BlueStats::from_moments(Eigen::VectorXd u_mean, Eigen::VectorXd v_mean, Eigen::MatrixXd c_uv, Eigen::MatrixXd c,
                                  double ridge) {
    BlueStats s{std::move(u_mean), std::move(v_mean), std::move(c_uv), std::move(c), ridge};
    s.validate();
    return s;
}

void BlueStats::validate() const {
    const auto du = u_mean.size(), dv = v_mean.size();
    if (c_uv.rows() != du || c_uv.cols() != dv || c.rows() != dv || c.cols() != dv) {
        throw ShapeError(fmt::format("BlueStats: inconsistent dimensions (u {}, v {}, C_uv {}x{}, C {}x{})", du, dv, c_uv.rows(),
                                     c_uv.cols(), c.rows(), c.cols()));
    }
    if (!(ridge >= 0.0)) throw DomainError("BlueStats: ridge must be >= 0");
}

BlueStats estimate_stats(const Eigen::MatrixXd& u, const Eigen::MatrixXd& v, double ridge_factor) {
    if (u.rows() != v.rows()) throw ShapeError("estimate_stats: u and v histories have different lengths");
    if (u.rows() < 2) throw ShapeError("estimate_stats: need at least 2 paired samples");
    const double denom = static_cast<double>(u.rows() - 1);
    BlueStats s;
    s.u_mean = u.colwise().mean().transpose();
    s.v_mean = v.colwise().mean().transpose();
    const Eigen::MatrixXd du = u.rowwise() - s.u_mean.transpose();
    const Eigen::MatrixXd dv = v.rowwise() - s.v_mean.transpose();
    s.c_uv = du.transpose() * dv / denom;
    s.c = dv.transpose() * dv / denom;
    const double tr = s.c.trace();
    s.ridge = tr > 0.0 ? ridge_factor * tr / static_cast<double>(s.c.rows()) : ridge_factor;
    return s;
}

Eigen::VectorXd blue_correct(const Eigen::VectorXd& u_p, const BlueStats& stats, const Eigen::VectorXd& v) {
    if (u_p.size() != stats.u_mean.size() || v.size() != stats.v_mean.size()) {
        throw ShapeError(fmt::format("blue_correct: u_p has {} values (expected {}), v has {} (expected {})", u_p.size(),
                                     stats.u_mean.size(), v.size(), stats.v_mean.size()));
    }
    Eigen::MatrixXd c = stats.c;
    c.diagonal().array() += stats.ridge;
    const Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() != Eigen::Success) throw DomainError("blue_correct: observation covariance is not positive definite");
    return stats.u_mean + stats.c_uv * llt.solve(v - stats.v_mean);
}

namespace {

Eigen::VectorXd flatten(const Eigen::MatrixXd& window, const Eigen::RowVectorXd& next) {
    const auto n = window.rows(), m = window.cols();
    Eigen::VectorXd out((n + 1) * m);
    for (Eigen::Index r = 0; r < n; ++r) out.segment(r * m, m) = window.row(r).transpose();
    out.segment(n * m, m) = next.transpose();
    return out;
}

}  // namespace

BlueStats estimate_rollout_stats(const Predictor& predictor, const Eigen::MatrixXd& truth, int window, int train_levels,
                                 double ridge_factor) {
    if (train_levels > truth.rows()) throw ShapeError("estimate_rollout_stats: train_levels exceeds the truth length");
    const int samples = train_levels - window;
    if (samples < 2) throw ShapeError("estimate_rollout_stats: fewer than 2 training windows");
    const auto m = truth.cols();
    Eigen::MatrixXd u(samples, (window + 1) * m), v(samples, m);
    for (int k = 0; k < samples; ++k) {
        const Eigen::MatrixXd w = truth.middleRows(k, window);
        u.row(k) = flatten(w, predictor(w)).transpose();
        v.row(k) = truth.row(k + window);
    }
    return estimate_stats(u, v, ridge_factor);
}

Eigen::MatrixXd rollout_corrected(const Predictor& predictor, const BlueStats& stats, const Eigen::MatrixXd& truth, int window,
                                  int start_level, int n_levels, AccessLog* log) {
    if (start_level < window) throw DomainError(fmt::format("rollout_corrected: start level {} < window {}", start_level, window));
    if (n_levels < 0) throw DomainError("rollout_corrected: n_levels must be >= 0");
    const auto m = truth.cols();
    Eigen::MatrixXd out(window + n_levels, m);
    for (int r = 0; r < window; ++r) {
        if (log) log->levels.push_back(start_level - window + r);
        out.row(r) = truth.row(start_level - window + r);
    }
    Eigen::MatrixXd current = out.topRows(window);
    for (int k = 0; k < n_levels; ++k) {
        const int level = start_level + k;
        if (level >= truth.rows()) {
            throw ShapeError(fmt::format("rollout_corrected: truth stream exhausted at level {} (has {})", level, truth.rows()));
        }
        const Eigen::VectorXd u_p = flatten(current, predictor(current));
        if (log) log->levels.push_back(level);
        const Eigen::VectorXd corrected = blue_correct(u_p, stats, truth.row(level).transpose());
        for (int r = 0; r < window; ++r) current.row(r) = corrected.segment((r + 1) * m, m).transpose();
        out.row(window + k) = current.row(window - 1);
    }
    return out;
}

}  // namespace epitwin::assim
