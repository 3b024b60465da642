// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "epitwin/errors.hpp"
#include "epitwin/lstm.hpp"
#include "epitwin/random.hpp"
#include "support.hpp"

using namespace epitwin;
using namespace epitwin::lstm;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::MatrixXd wave(int levels, int m) {
    Eigen::MatrixXd s(levels, m);
    for (int r = 0; r < levels; ++r)
        for (int j = 0; j < m; ++j) s(r, j) = std::sin(0.15 * r + 0.7 * j) * (1.0 + j);
    return s;
}

}  // namespace

TEST_CASE("lstm cell against the gate equations written out") {
    Rng rng(1);
    const int in = 3, hid = 4;
    LstmCellWeights w{random_tensor({in, 4 * hid}, rng), random_tensor({hid, 4 * hid}, rng), random_tensor({4 * hid}, rng), hid};
    const Eigen::RowVectorXd x = test_support::random_matrix(1, in, rng);
    const CellState prev{test_support::random_matrix(1, hid, rng), test_support::random_matrix(1, hid, rng)};
    const CellState next = lstm_cell_forward(x, prev, w);

    auto gate = [&](int block, int j) {
        double z = w.b[static_cast<std::size_t>(block * hid + j)];
        for (int k = 0; k < in; ++k) z += x[k] * w.wx[static_cast<std::size_t>(k * 4 * hid + block * hid + j)];
        for (int k = 0; k < hid; ++k) z += prev.h[k] * w.wh[static_cast<std::size_t>(k * 4 * hid + block * hid + j)];
        return z;
    };
    for (int j = 0; j < hid; ++j) {
        const double i = sig(gate(0, j)), f = sig(gate(1, j)), o = sig(gate(2, j)), g = std::tanh(gate(3, j));
        const double c = f * prev.c[j] + i * g;
        CHECK(next.c[j] == doctest::Approx(c).epsilon(1e-14));
        CHECK(next.h[j] == doctest::Approx(o * std::tanh(c)).epsilon(1e-14));
    }

    Tape t;
    const auto [h2, c2] = lstm_cell(t, t.constant(Tensor({1, in}, std::vector<double>(x.data(), x.data() + in))),
                                    t.constant(Tensor({1, hid}, std::vector<double>(prev.h.data(), prev.h.data() + hid))),
                                    t.constant(Tensor({1, hid}, std::vector<double>(prev.c.data(), prev.c.data() + hid))),
                                    t.constant(w.wx), t.constant(w.wh), t.constant(w.b), hid);
    for (int j = 0; j < hid; ++j) {
        CHECK(t.value(h2)[static_cast<std::size_t>(j)] == doctest::Approx(next.h[j]).epsilon(1e-14));
        CHECK(t.value(c2)[static_cast<std::size_t>(j)] == doctest::Approx(next.c[j]).epsilon(1e-14));
    }
    CHECK_THROWS_AS(lstm_cell_forward(Eigen::RowVectorXd::Zero(in + 1), prev, w), ShapeError);
}

TEST_CASE("bdlstm gradient check on a downsized model") {
    BdlstmModel model = make_bdlstm(3, 4, 5, 11);
    Rng rng(2);
    const Tensor windows = random_tensor({2, 3, 4}, rng, 0.05, 0.95);
    const Tensor target = random_tensor({2, 4}, rng, 0.05, 0.95);
    Tensor mask({2, 10});
    for (auto& v : mask.data) v = rng.uniform() < 0.5 ? 0.0 : 2.0;
    // grad_check perturbs model.store in place.
    const auto r = nn::grad_check(model.store, [&](Tape& t, const nn::WeightStore&) {
        return nn::mse(t, bdlstm_tape(t, model, windows, &mask), target);
    }, 1e-4, 0, 4);
    CHECK(r.checked > 0);
    CAPTURE(r.worst_parameter);
    CAPTURE(r.worst_index);
    CAPTURE(r.worst_analytic);
    CAPTURE(r.worst_numeric);
    CHECK(r.max_relative_error <= 1e-5);
}

TEST_CASE("plain forward agrees with the tape") {
    const Eigen::MatrixXd series = wave(40, 3);
    BdlstmHyper hyper;
    hyper.window = 4;
    hyper.hidden = 6;
    hyper.epochs = 3;
    const BdlstmModel model = train_bdlstm(series, hyper);
    const Eigen::MatrixXd window = series.middleRows(10, 4);

    const nn::AffineScaler s = model.scaler();
    const Eigen::MatrixXd scaled = s.forward_rows(window);
    Tensor w({1, 4, 3});
    for (int r = 0; r < 4; ++r)
        for (int j = 0; j < 3; ++j) w[static_cast<std::size_t>(r * 3 + j)] = scaled(r, j);
    Tape t;
    const Tensor& y = t.value(bdlstm_tape(t, model, w, nullptr, false));
    const Eigen::RowVectorXd tape_out = s.inverse(Eigen::Map<const Eigen::RowVectorXd>(y.data.data(), 3));
    CHECK((bdlstm_forward(model, window) - tape_out).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("rollout shape, seed rows and determinism") {
    const Eigen::MatrixXd series = wave(50, 3);
    BdlstmHyper hyper;
    hyper.window = 5;
    hyper.hidden = 8;
    hyper.epochs = 5;
    const BdlstmModel a = train_bdlstm(series, hyper), b = train_bdlstm(series, hyper);
    CHECK(a.store.same_values(b.store));
    const Eigen::MatrixXd init = series.topRows(5);
    const Eigen::MatrixXd ra = rollout_free(a, init, 12);
    CHECK(ra.rows() == 17);
    CHECK(ra.cols() == 3);
    CHECK(ra.topRows(5) == init);
    CHECK(ra == rollout_free(b, init, 12));
    // Each row is the one-step prediction of the preceding window.
    CHECK((ra.row(7) - bdlstm_forward(a, ra.middleRows(2, 5))).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(bdlstm_forward(a, series.topRows(4)), ShapeError);
}

TEST_CASE("training reduces the loss on a smooth series") {
    const Eigen::MatrixXd series = wave(60, 2);
    BdlstmHyper hyper;
    hyper.window = 4;
    hyper.hidden = 8;
    hyper.epochs = 60;
    hyper.dropout = 0.0;
    hyper.optim.learning_rate = 1e-2;
    const BdlstmModel m = train_bdlstm(series, hyper);
    REQUIRE(m.train_loss.size() == 60);
    CHECK(m.trained());
    CHECK(m.train_loss.back() < 0.5 * m.train_loss.front());
}
