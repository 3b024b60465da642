// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "epitwin/errors.hpp"

namespace epitwin::nn {

Tensor glorot_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-a, a);
    return t;
}

void add_dense(WeightStore& store, const std::string& prefix, int in, int out, Rng& rng) {
    store.add(prefix + ".w", glorot_uniform({in, out}, in, out, rng));
    store.add(prefix + ".b", Tensor({out}, 0.0));
}

Var dense(Tape& t, const WeightStore& store, const std::string& prefix, Var x, Activation act, bool trainable) {
    const Var w = t.bind(store, prefix + ".w", trainable);
    const Var b = t.bind(store, prefix + ".b", trainable);
    return activate(t, add_bias(t, matmul(t, x, w), b), act);
}

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b, Activation act) {
    Tape t;
    const Var out = activate(t, add_bias(t, matmul(t, t.constant(x), t.constant(w)), t.constant(b)), act);
    return t.value(out);
}

// -----------------------------------------------------------------------------

AffineScaler AffineScaler::minmax(const Eigen::MatrixXd& rows, double lo, double hi) {
    if (rows.rows() == 0) throw ShapeError("AffineScaler::minmax: no data");
    AffineScaler s;
    s.offset.resize(rows.cols());
    s.scale.resize(rows.cols());
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
        const double mn = rows.col(j).minCoeff(), mx = rows.col(j).maxCoeff();
        if (mx > mn) {
            s.scale[j] = (mx - mn) / (hi - lo);
            s.offset[j] = mn - lo * s.scale[j];
        } else {
            s.scale[j] = 1.0;
            s.offset[j] = mn - 0.5 * (lo + hi);
        }
    }
    return s;
}

AffineScaler AffineScaler::standard(const Eigen::MatrixXd& rows) {
    if (rows.rows() == 0) throw ShapeError("AffineScaler::standard: no data");
    AffineScaler s;
    s.offset = rows.colwise().mean().transpose();
    s.scale.resize(rows.cols());
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
        const double sd = std::sqrt((rows.col(j).array() - s.offset[j]).square().mean());
        s.scale[j] = sd > 0.0 ? sd : 1.0;
    }
    return s;
}

Eigen::RowVectorXd AffineScaler::forward(const Eigen::RowVectorXd& x) const {
    return (x - offset.transpose()).cwiseQuotient(scale.transpose());
}

Eigen::RowVectorXd AffineScaler::inverse(const Eigen::RowVectorXd& y) const {
    return y.cwiseProduct(scale.transpose()) + offset.transpose();
}

Eigen::MatrixXd AffineScaler::forward_rows(const Eigen::MatrixXd& x) const {
    return (x.rowwise() - offset.transpose()).array().rowwise() / scale.transpose().array();
}

Eigen::MatrixXd AffineScaler::inverse_rows(const Eigen::MatrixXd& y) const {
    Eigen::MatrixXd x = y.array().rowwise() * scale.transpose().array();
    x.rowwise() += offset.transpose();
    return x;
}

void AffineScaler::save(WeightStore& store, const std::string& prefix) const {
    const int n = static_cast<int>(offset.size());
    store.add(prefix + ".offset", Tensor({n}, std::vector<double>(offset.data(), offset.data() + n)), false);
    store.add(prefix + ".scale", Tensor({n}, std::vector<double>(scale.data(), scale.data() + n)), false);
}

AffineScaler AffineScaler::load(const WeightStore& store, const std::string& prefix) {
    const Tensor& o = store.value(prefix + ".offset");
    const Tensor& s = store.value(prefix + ".scale");
    if (o.size() != s.size()) throw ShapeError("AffineScaler::load: offset/scale lengths differ");
    AffineScaler out;
    out.offset = Eigen::Map<const Eigen::VectorXd>(o.data.data(), static_cast<Eigen::Index>(o.size()));
    out.scale = Eigen::Map<const Eigen::VectorXd>(s.data.data(), static_cast<Eigen::Index>(s.size()));
    return out;
}

// -----------------------------------------------------------------------------

WindowSet make_windows(const Eigen::MatrixXd& series, int window, double train_fraction) {
    if (window < 1) throw DomainError("make_windows: window must be >= 1");
    if (series.rows() < window + 2) {
        throw ShapeError(fmt::format("make_windows: series has {} levels, need at least {}", series.rows(), window + 2));
    }
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw DomainError("make_windows: train_fraction must lie in (0, 1]");
    WindowSet w;
    const int count = static_cast<int>(series.rows()) - window;
    for (int k = 0; k < count; ++k) {
        w.inputs.push_back(series.middleRows(k, window));
        w.targets.push_back(series.row(k + window));
    }
    w.train_count = std::clamp(static_cast<int>(std::floor(train_fraction * count)), 1, count);
    return w;
}

std::vector<std::vector<int>> epoch_batches(int count, int batch_size, Rng& rng) {
    std::vector<int> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    std::vector<std::vector<int>> out;
    for (int start = 0; start < count; start += batch_size) {
        out.emplace_back(order.begin() + start, order.begin() + std::min(count, start + batch_size));
    }
    return out;
}

// -----------------------------------------------------------------------------

namespace {

double relative_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1.0e-12}); }

/// f'(0) from f(+-h) (order 2) or f(+-h), f(+-2h) (order 4).
template <class F>
double central_difference(F&& f, double h, int order) {
    if (order == 2) return (f(h) - f(-h)) / (2.0 * h);
    return (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h);
}

}  // namespace

GradCheckResult grad_check(WeightStore& store, const std::function<Var(Tape&, const WeightStore&)>& loss, double h,
                           std::size_t max_per_param, int order) {
    if (order != 2 && order != 4) throw DomainError("grad_check: order must be 2 or 4");
    Tape tape;
    const Var root = loss(tape, store);
    tape.backward(root);
    const Gradients analytic = tape.parameter_grads();

    auto evaluate = [&]() {
        Tape t;
        return t.value(loss(t, store))[0];
    };

    GradCheckResult result;
    for (const auto& name : store.names()) {
        auto it = analytic.find(name);
        if (it == analytic.end()) continue;
        Tensor& w = store.value(name);
        const std::size_t n = w.size();
        const std::size_t stride = (max_per_param == 0 || n <= max_per_param) ? 1 : n / max_per_param;
        for (std::size_t i = 0; i < n; i += stride) {
            const double saved = w[i];
            const double numeric = central_difference([&](double d) {
                w[i] = saved + d;
                return evaluate();
            }, h, order);
            w[i] = saved;
            const double err = relative_error(it->second[i], numeric);
            ++result.checked;
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst_parameter = name;
                result.worst_index = i;
                result.worst_analytic = it->second[i];
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

GradCheckResult grad_check_input(const Tensor& x, const std::function<Var(Tape&, Var)>& loss, double h, int order) {
    if (order != 2 && order != 4) throw DomainError("grad_check_input: order must be 2 or 4");
    Tape tape;
    const Var xv = tape.variable(x);
    tape.backward(loss(tape, xv));
    const Tensor analytic = tape.grad(xv);

    GradCheckResult result;
    Tensor probe = x;
    auto evaluate = [&]() {
        Tape t;
        return t.value(loss(t, t.constant(probe)))[0];
    };
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double numeric = central_difference([&](double d) {
            probe[i] = x[i] + d;
            return evaluate();
        }, h, order);
        probe[i] = x[i];
        const double err = relative_error(analytic[i], numeric);
        ++result.checked;
        if (err > result.max_relative_error) {
            result.max_relative_error = err;
            result.worst_parameter = "input";
            result.worst_index = i;
            result.worst_analytic = analytic[i];
            result.worst_numeric = numeric;
        }
    }
    return result;
}

int worker_threads() {
    if (const char* env = std::getenv("EPITWIN_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace epitwin::nn
