// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "epitwin/errors.hpp"
#include "epitwin/gan.hpp"
#include "epitwin/random.hpp"
#include "support.hpp"

using namespace epitwin;
using namespace epitwin::gan;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

GanHyper small_hyper() {
    GanHyper h;
    h.latent = 4;
    h.rows = 6;
    h.components = 6;
    h.g_channels = 3;
    h.g_mid = 2;
    h.d_channels1 = 2;
    h.d_channels2 = 3;
    h.batch_size = 4;
    h.iterations = 5;
    h.seed = 3;
    return h;
}

Eigen::MatrixXd series(int levels, int m) {
    Eigen::MatrixXd s(levels, m);
    for (int r = 0; r < levels; ++r)
        for (int j = 0; j < m; ++j) s(r, j) = std::cos(0.1 * r * (1 + 0.3 * j)) * (10.0 - j);
    return s;
}

}  // namespace

TEST_CASE("hyperparameter validation") {
    GanHyper h = small_hyper();
    CHECK_NOTHROW(h.validate());
    h.rows = 8;
    CHECK_THROWS_AS(h.validate(), DomainError);
    h = small_hyper();
    h.components = 4;
    CHECK_THROWS_AS(h.validate(), DomainError);
    h = small_hyper();
    h.dropout = 1.0;
    CHECK_THROWS_AS(h.validate(), DomainError);
}

TEST_CASE("generator gradient check (training-mode batch norm)") {
    GanModel model = make_gan(small_hyper());
    Rng rng(1);
    const Tensor z = random_tensor({3, 4}, rng);
    const Tensor target = random_tensor({3, 6, 6}, rng);
    auto loss = [&](Tape& t, const nn::WeightStore&) {
        return nn::mse(t, generator_tape(t, model, t.constant(z), true, true), target);
    };

    // Biases feeding a batch-statistics norm cancel exactly: their gradient
    // is zero, which a relative error cannot score.
    Tape tape;
    tape.backward(loss(tape, model.gen));
    const nn::Gradients grads = tape.parameter_grads();
    for (const char* name : {"g.fc.b", "g.ct1.b"}) {
        for (double g : grads.at(name).data) CHECK(std::abs(g) <= 1e-12);
        model.gen.entry(name).trainable = false;
    }
    const auto r = nn::grad_check(model.gen, loss, 1e-4, 0, 4);
    CAPTURE(r.worst_parameter);
    CAPTURE(r.worst_analytic);
    CAPTURE(r.worst_numeric);
    CHECK(r.checked > 0);
    CHECK(r.max_relative_error <= 1e-5);
}

TEST_CASE("generator gradient check (running statistics)") {
    GanModel model = make_gan(small_hyper());
    Rng rng(8);
    for (const char* name : {"g.bn0.mean", "g.bn1.mean"}) {
        for (auto& v : model.gen.value(name).data) v = rng.uniform(-0.2, 0.2);
    }
    for (const char* name : {"g.bn0.var", "g.bn1.var"}) {
        for (auto& v : model.gen.value(name).data) v = rng.uniform(0.5, 2.0);
    }
    const Tensor z = random_tensor({3, 4}, rng);
    const Tensor target = random_tensor({3, 6, 6}, rng);
    const auto r = nn::grad_check(model.gen, [&](Tape& t, const nn::WeightStore&) {
        return nn::mse(t, generator_tape(t, model, t.constant(z), false, true), target);
    }, 1e-4, 0, 4);
    CAPTURE(r.worst_parameter);
    CHECK(r.max_relative_error <= 1e-5);
}

TEST_CASE("generator gradient with respect to the latent input") {
    const GanModel model = make_gan(small_hyper());
    Rng rng(2);
    const Tensor target = random_tensor({1, 6, 6}, rng);
    const auto r = nn::grad_check_input(random_tensor({1, 4}, rng), [&](Tape& t, Var z) {
        return nn::mse(t, generator_tape(t, model, z, false, false), target);
    }, 1e-4, 4);
    CHECK(r.max_relative_error <= 1e-5);
}

TEST_CASE("discriminator gradient check") {
    GanModel model = make_gan(small_hyper());
    Rng rng(4);
    // The output layer starts at zero; randomise it so every path carries signal.
    for (const char* name : {"d.out.w", "d.out.b"}) {
        for (auto& v : model.disc.value(name).data) v = rng.uniform(-0.5, 0.5);
    }
    const Tensor y = random_tensor({3, 6, 6}, rng);
    const std::vector<Tensor> masks = discriminator_masks(model, 3, rng);
    for (double label : {0.0, 1.0}) {
        const auto r = nn::grad_check(model.disc, [&](Tape& t, const nn::WeightStore&) {
            return nn::bce_with_logits(t, discriminator_tape(t, model, t.constant(y), masks, true), label);
        }, 1e-4, 0, 4);
        CAPTURE(r.worst_parameter);
        CHECK(r.max_relative_error <= 1e-5);
    }
}

TEST_CASE("training is deterministic and produces finite losses") {
    const Eigen::MatrixXd data = series(40, 6);
    const GanModel a = train_gan(data, small_hyper());
    const GanModel b = train_gan(data, small_hyper());
    CHECK(a.gen.same_values(b.gen));
    CHECK(a.disc.same_values(b.disc));
    REQUIRE(a.d_loss.size() == 5);
    for (double v : a.d_loss) CHECK(std::isfinite(v));
    for (double v : a.g_loss) CHECK(std::isfinite(v));
}

TEST_CASE("generator output is the scaled tape output") {
    const Eigen::MatrixXd data = series(40, 6);
    const GanModel model = train_gan(data, small_hyper());
    Rng rng(5);
    const Eigen::VectorXd z = test_support::random_matrix(4, 1, rng);
    const Eigen::MatrixXd out = generator_forward(model, z);
    REQUIRE(out.rows() == 6);
    REQUIRE(out.cols() == 6);

    // The stored scaler maps each training column's [min, max] onto [-1, 1].
    const nn::AffineScaler s = model.scaler();
    const Eigen::MatrixXd scaled = s.forward_rows(data);
    for (int j = 0; j < 6; ++j) {
        CHECK(scaled.col(j).minCoeff() == doctest::Approx(-1.0).epsilon(1e-12));
        CHECK(scaled.col(j).maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
    }
    Tensor zt({1, 4});
    for (int i = 0; i < 4; ++i) zt[static_cast<std::size_t>(i)] = z[i];
    Tape t;
    const Tensor& raw = t.value(generator_tape(t, model, t.constant(zt), false, false));
    Eigen::MatrixXd raw_rows(6, 6);
    for (int r = 0; r < 6; ++r)
        for (int j = 0; j < 6; ++j) raw_rows(r, j) = raw[static_cast<std::size_t>(r * 6 + j)];
    CHECK((out - s.inverse_rows(raw_rows)).cwiseAbs().maxCoeff() <= 1e-12 * out.cwiseAbs().maxCoeff());

    const double p = discriminator_forward(model, data.topRows(6));
    CHECK(p > 0.0);
    CHECK(p < 1.0);
}

TEST_CASE("latent objective against a weighted loop") {
    const GanModel model = make_gan(small_hyper());
    Rng rng(6);
    const Eigen::MatrixXd known = test_support::random_matrix(5, 6, rng);
    const Eigen::VectorXd w = test_support::random_matrix(6, 1, rng, 0.5, 3.0);
    const Eigen::VectorXd z = test_support::random_matrix(4, 1, rng);
    const Eigen::MatrixXd g = generator_forward(model, z);
    double loop = 0.0;
    for (int r = 0; r < 5; ++r)
        for (int j = 0; j < 6; ++j) loop += w[j] * (known(r, j) - g(r, j)) * (known(r, j) - g(r, j));
    const double got = latent_objective(model, known, w.asDiagonal().toDenseMatrix(), z);
    CHECK(std::abs(got - loop) <= 1e-12 * std::abs(loop));
}

TEST_CASE("latent optimisation never ends above its start") {
    const Eigen::MatrixXd data = series(40, 6);
    const GanModel model = train_gan(data, small_hyper());
    Rng rng(7);
    LatentOptSettings s;
    s.max_steps = 200;
    const Eigen::MatrixXd w = Eigen::MatrixXd::Identity(6, 6);
    const LatentOptResult r = optimize_latent(model, data.middleRows(10, 5), w, test_support::random_matrix(4, 1, rng), s);
    CHECK(r.final_loss <= r.initial_loss);
    CHECK(r.final_loss == doctest::Approx(latent_objective(model, data.middleRows(10, 5), w, r.z)).epsilon(1e-12));
    CHECK(r.loss.front() == r.initial_loss);
}

TEST_CASE("predictive rollout reads only its seed rows") {
    const Eigen::MatrixXd data = series(40, 6);
    const GanModel model = train_gan(data, small_hyper());
    LatentOptSettings s;
    s.max_steps = 30;
    s.restarts = 2;
    const Eigen::MatrixXd w = Eigen::MatrixXd::Identity(6, 6);
    assim::AccessLog log;
    const GanRollout a = rollout_predictive_gan(model, data, 12, 10, w, s, 9, &log);
    REQUIRE(a.series.rows() == 5 + 10);
    CHECK(a.series.topRows(5) == data.middleRows(7, 5));
    REQUIRE(log.levels.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(log.levels[static_cast<std::size_t>(i)] == 7 + i);
    CHECK(a.final_losses.size() == 10);

    const GanRollout b = rollout_predictive_gan(model, data, 12, 10, w, s, 9);
    CHECK(a.series == b.series);
    // Levels past the end of the truth are fine: nothing is read there.
    CHECK(rollout_predictive_gan(model, data, 38, 5, w, s, 9).series.rows() == 10);
}
