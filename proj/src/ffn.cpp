// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/ffn.hpp"

#include <fmt/format.h>

#include "epitwin/errors.hpp"
#include "epitwin/layers.hpp"

namespace epitwin::nn {

namespace {

std::string layer_name(int i) { return fmt::format("ffn.l{}", i); }

Tensor flatten_rows(const std::vector<Eigen::MatrixXd>& windows, const std::vector<int>& idx, const AffineScaler& s) {
    const int n = windows.front().rows(), m = windows.front().cols();
    Tensor x({static_cast<int>(idx.size()), n * m});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const Eigen::MatrixXd scaled = s.forward_rows(windows[static_cast<std::size_t>(idx[b])]);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < m; ++c) x[b * static_cast<std::size_t>(n * m) + static_cast<std::size_t>(r * m + c)] = scaled(r, c);
    }
    return x;
}

Tensor target_rows(const std::vector<Eigen::RowVectorXd>& targets, const std::vector<int>& idx, const AffineScaler& s) {
    const int m = static_cast<int>(targets.front().size());
    Tensor y({static_cast<int>(idx.size()), m});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const Eigen::RowVectorXd scaled = s.forward(targets[static_cast<std::size_t>(idx[b])]);
        for (int c = 0; c < m; ++c) y[b * static_cast<std::size_t>(m) + static_cast<std::size_t>(c)] = scaled[c];
    }
    return y;
}

}  // namespace

bool FfnModel::trained() const {
    auto it = store.meta.find("trained");
    return it != store.meta.end() && it->second == "true";
}

FfnModel make_ffn(int window, int components, int hidden, int hidden_layers, std::uint64_t seed) {
    if (window < 1 || components < 1 || hidden < 1 || hidden_layers < 0) throw DomainError("make_ffn: sizes must be positive");
    FfnModel model;
    model.window = window;
    model.components = components;
    model.hidden_layers = hidden_layers;
    model.store.kind = "ffn";
    model.store.seed = seed;
    model.store.meta["window"] = std::to_string(window);
    model.store.meta["components"] = std::to_string(components);
    model.store.meta["hidden_layers"] = std::to_string(hidden_layers);
    model.store.meta["hidden"] = std::to_string(hidden);
    Rng rng(seed);
    int in = window * components;
    for (int i = 0; i < hidden_layers; ++i) {
        add_dense(model.store, layer_name(i), in, hidden, rng);
        in = hidden;
    }
    add_dense(model.store, layer_name(hidden_layers), in, components, rng);
    AffineScaler identity{Eigen::VectorXd::Zero(components), Eigen::VectorXd::Ones(components)};
    identity.save(model.store, "scaler");
    return model;
}

FfnModel ffn_from_store(WeightStore store) {
    if (store.kind != "ffn") throw FormatError(fmt::format("expected an ffn store, got '{}'", store.kind));
    FfnModel model;
    model.window = std::stoi(store.meta.at("window"));
    model.components = std::stoi(store.meta.at("components"));
    model.hidden_layers = std::stoi(store.meta.at("hidden_layers"));
    model.store = std::move(store);
    return model;
}

Var ffn_forward(Tape& t, const FfnModel& model, Var x, bool trainable) {
    Var h = x;
    for (int i = 0; i < model.hidden_layers; ++i) h = dense(t, model.store, layer_name(i), h, Activation::LeakyRelu, trainable);
    return dense(t, model.store, layer_name(model.hidden_layers), h, Activation::Linear, trainable);
}

FfnModel train_ffn(const Eigen::MatrixXd& latents, const FfnHyper& hyper) {
    hyper.optim.validate();
    if (hyper.epochs < 0 || hyper.batch_size < 1) throw DomainError("train_ffn: epochs >= 0 and batch_size >= 1 required");
    const WindowSet windows = make_windows(latents, hyper.window, hyper.train_fraction);
    FfnModel model = make_ffn(hyper.window, static_cast<int>(latents.cols()), hyper.hidden, hyper.hidden_layers, hyper.seed);

    const AffineScaler scaler = AffineScaler::standard(latents.topRows(windows.train_count + hyper.window));
    model.store.value("scaler.offset").data.assign(scaler.offset.data(), scaler.offset.data() + scaler.offset.size());
    model.store.value("scaler.scale").data.assign(scaler.scale.data(), scaler.scale.data() + scaler.scale.size());

    std::vector<int> train_idx, test_idx;
    for (int i = 0; i < windows.size(); ++i) (i < windows.train_count ? train_idx : test_idx).push_back(i);

    Rng rng(hyper.seed ^ 0x9e3779b97f4a7c15ULL);
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        double total = 0.0;
        for (const auto& batch : epoch_batches(windows.train_count, hyper.batch_size, rng)) {
            std::vector<int> idx;
            for (int b : batch) idx.push_back(train_idx[static_cast<std::size_t>(b)]);
            Tape t;
            const Var out = ffn_forward(t, model, t.constant(flatten_rows(windows.inputs, idx, scaler)));
            const Var loss = mse(t, out, target_rows(windows.targets, idx, scaler));
            const double value = t.value(loss)[0];
            if (!std::isfinite(value)) throw DomainError(fmt::format("train_ffn: non-finite loss at epoch {}", epoch));
            total += value * static_cast<double>(idx.size());
            t.backward(loss);
            optimizer_step(model.store, t.parameter_grads(), hyper.optim);
        }
        model.train_loss.push_back(total / windows.train_count);
        if (!test_idx.empty()) {
            Tape t;
            const Var out = ffn_forward(t, model, t.constant(flatten_rows(windows.inputs, test_idx, scaler)), false);
            model.test_loss.push_back(t.value(mse(t, out, target_rows(windows.targets, test_idx, scaler)))[0]);
        }
    }
    model.store.meta["trained"] = "true";
    return model;
}

Eigen::RowVectorXd ffn_predict(const FfnModel& model, const Eigen::MatrixXd& window) {
    if (!model.trained()) throw DomainError("ffn_predict: model has not been trained");
    if (window.rows() != model.window || window.cols() != model.components) {
        throw ShapeError(fmt::format("ffn_predict: window is {}x{}, model expects {}x{}", window.rows(), window.cols(),
                                     model.window, model.components));
    }
    const AffineScaler scaler = AffineScaler::load(model.store, "scaler");
    Tape t;
    const Var out = ffn_forward(t, model, t.constant(flatten_rows({window}, {0}, scaler)), false);
    const Tensor& y = t.value(out);
    return scaler.inverse(Eigen::Map<const Eigen::RowVectorXd>(y.data.data(), model.components));
}

}  // namespace epitwin::nn
