// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/lstm.hpp"

#include <cmath>

#include <fmt/format.h>

#include "epitwin/errors.hpp"

namespace epitwin::lstm {

using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kLayerNormEps = 1.0e-3;

}  // namespace

CellState lstm_cell_forward(const Eigen::RowVectorXd& x, const CellState& prev, const LstmCellWeights& w) {
    const int hid = w.hidden;
    if (w.wx.rank() != 2 || w.wx.dim(0) != x.size() || w.wx.dim(1) != 4 * hid || w.wh.dim(0) != hid ||
        w.wh.dim(1) != 4 * hid || static_cast<int>(w.b.size()) != 4 * hid || prev.h.size() != hid || prev.c.size() != hid) {
        throw ShapeError("lstm_cell_forward: inconsistent dimensions");
    }
    const Eigen::RowVectorXd z = x * w.wx.matrix() + prev.h * w.wh.matrix() +
                                 Eigen::Map<const Eigen::RowVectorXd>(w.b.data.data(), 4 * hid);
    CellState next;
    next.c.resize(hid);
    next.h.resize(hid);
    for (int j = 0; j < hid; ++j) {
        const double i = sigm(z[j]);
        const double f = sigm(z[hid + j]);
        const double o = sigm(z[2 * hid + j]);
        const double g = std::tanh(z[3 * hid + j]);
        next.c[j] = f * prev.c[j] + i * g;
        next.h[j] = o * std::tanh(next.c[j]);
    }
    return next;
}

std::pair<Var, Var> lstm_cell(Tape& t, Var x, Var h, Var c, Var wx, Var wh, Var b, int hidden) {
    const Var z = nn::add_bias(t, nn::add(t, nn::matmul(t, x, wx), nn::matmul(t, h, wh)), b);
    const Var i = nn::sigmoid(t, nn::slice_cols(t, z, 0, hidden));
    const Var f = nn::sigmoid(t, nn::slice_cols(t, z, hidden, hidden));
    const Var o = nn::sigmoid(t, nn::slice_cols(t, z, 2 * hidden, hidden));
    const Var g = nn::tanh(t, nn::slice_cols(t, z, 3 * hidden, hidden));
    const Var c_next = nn::add(t, nn::mul(t, f, c), nn::mul(t, i, g));
    const Var h_next = nn::mul(t, o, nn::tanh(t, c_next));
    return {h_next, c_next};
}

// -----------------------------------------------------------------------------

LstmCellWeights BdlstmModel::cell(bool backward) const {
    const std::string p = backward ? "bwd" : "fwd";
    return {store.value(p + ".wx"), store.value(p + ".wh"), store.value(p + ".b"), hidden};
}

nn::AffineScaler BdlstmModel::scaler() const { return nn::AffineScaler::load(store, "scaler"); }

bool BdlstmModel::trained() const {
    auto it = store.meta.find("trained");
    return it != store.meta.end() && it->second == "true";
}

BdlstmModel make_bdlstm(int window, int components, int hidden, std::uint64_t seed) {
    if (window < 1 || components < 1 || hidden < 1) throw DomainError("make_bdlstm: sizes must be positive");
    BdlstmModel m;
    m.window = window;
    m.components = components;
    m.hidden = hidden;
    m.store.kind = "bdlstm";
    m.store.seed = seed;
    m.store.meta["window"] = std::to_string(window);
    m.store.meta["components"] = std::to_string(components);
    m.store.meta["hidden"] = std::to_string(hidden);

    Rng rng(seed);
    m.store.add("ln.gain", Tensor({components}, 1.0));
    m.store.add("ln.shift", Tensor({components}, 0.0));
    for (const char* p : {"fwd", "bwd"}) {
        const std::string s = p;
        m.store.add(s + ".wx", nn::glorot_uniform({components, 4 * hidden}, components, 4 * hidden, rng));
        m.store.add(s + ".wh", nn::glorot_uniform({hidden, 4 * hidden}, hidden, 4 * hidden, rng));
        m.store.add(s + ".b", Tensor({4 * hidden}, 0.0));
    }
    nn::add_dense(m.store, "head", 2 * hidden, components, rng);
    nn::AffineScaler identity{Eigen::VectorXd::Zero(components), Eigen::VectorXd::Ones(components)};
    identity.save(m.store, "scaler");
    return m;
}

BdlstmModel bdlstm_from_store(nn::WeightStore store) {
    if (store.kind != "bdlstm") throw FormatError(fmt::format("expected a bdlstm store, got '{}'", store.kind));
    BdlstmModel m;
    m.window = std::stoi(store.meta.at("window"));
    m.components = std::stoi(store.meta.at("components"));
    m.hidden = std::stoi(store.meta.at("hidden"));
    m.store = std::move(store);
    return m;
}

Var bdlstm_tape(Tape& t, const BdlstmModel& model, const Tensor& windows, const Tensor* dropout_mask, bool trainable) {
    if (windows.rank() != 3 || windows.dim(1) != model.window || windows.dim(2) != model.components) {
        throw ShapeError(fmt::format("bdlstm: windows must be [B, {}, {}], got {}", model.window, model.components,
                                     nn::shape_string(windows.shape)));
    }
    const int batch = windows.dim(0), n = model.window, m = model.components, hid = model.hidden;
    const Var gain = t.bind(model.store, "ln.gain", trainable);
    const Var shift = t.bind(model.store, "ln.shift", trainable);

    std::vector<Var> steps;
    for (int s = 0; s < n; ++s) {
        Tensor xs({batch, m});
        for (int b = 0; b < batch; ++b)
            for (int j = 0; j < m; ++j)
                xs[static_cast<std::size_t>(b * m + j)] = windows[(static_cast<std::size_t>(b) * n + s) * m + j];
        steps.push_back(nn::layer_norm(t, t.constant(std::move(xs)), gain, shift, kLayerNormEps));
    }

    auto run = [&](const std::string& p, bool reverse) {
        const Var wx = t.bind(model.store, p + ".wx", trainable);
        const Var wh = t.bind(model.store, p + ".wh", trainable);
        const Var b = t.bind(model.store, p + ".b", trainable);
        Var h = t.constant(Tensor({batch, hid}, 0.0));
        Var c = t.constant(Tensor({batch, hid}, 0.0));
        for (int k = 0; k < n; ++k) {
            const int s = reverse ? n - 1 - k : k;
            std::tie(h, c) = lstm_cell(t, steps[static_cast<std::size_t>(s)], h, c, wx, wh, b, hid);
        }
        return h;
    };
    Var joined = nn::concat_cols(t, run("fwd", false), run("bwd", true));
    if (dropout_mask) joined = nn::mul_const(t, joined, *dropout_mask);
    return nn::dense(t, model.store, "head", joined, nn::Activation::Sigmoid, trainable);
}

std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> bdlstm_states(const BdlstmModel& model, const Eigen::MatrixXd& scaled_window) {
    if (scaled_window.rows() != model.window || scaled_window.cols() != model.components) {
        throw ShapeError("bdlstm_states: window shape mismatch");
    }
    const Tensor& gain = model.store.value("ln.gain");
    const Tensor& shift = model.store.value("ln.shift");
    std::vector<Eigen::RowVectorXd> xs;
    for (int s = 0; s < model.window; ++s) {
        Eigen::RowVectorXd x = scaled_window.row(s);
        const double mu = x.mean();
        const double var = (x.array() - mu).square().mean();
        x = (x.array() - mu) / std::sqrt(var + kLayerNormEps);
        for (int j = 0; j < x.size(); ++j) x[j] = x[j] * gain[static_cast<std::size_t>(j)] + shift[static_cast<std::size_t>(j)];
        xs.push_back(x);
    }
    auto run = [&](bool reverse) {
        const LstmCellWeights w = model.cell(reverse);
        CellState st{Eigen::RowVectorXd::Zero(model.hidden), Eigen::RowVectorXd::Zero(model.hidden)};
        for (int k = 0; k < model.window; ++k) st = lstm_cell_forward(xs[static_cast<std::size_t>(reverse ? model.window - 1 - k : k)], st, w);
        return st.h;
    };
    return {run(false), run(true)};
}

Eigen::RowVectorXd bdlstm_forward(const BdlstmModel& model, const Eigen::MatrixXd& window) {
    if (window.rows() != model.window || window.cols() != model.components) {
        throw ShapeError(fmt::format("bdlstm_forward: window is {}x{}, model expects {}x{}", window.rows(), window.cols(),
                                     model.window, model.components));
    }
    const nn::AffineScaler s = model.scaler();
    const auto [hf, hb] = bdlstm_states(model, s.forward_rows(window));
    Eigen::RowVectorXd joined(2 * model.hidden);
    joined << hf, hb;
    const Tensor& w = model.store.value("head.w");
    const Tensor& b = model.store.value("head.b");
    const Eigen::RowVectorXd z = joined * nn::ConstMatrixMap(w.data.data(), 2 * model.hidden, model.components) +
                                 Eigen::Map<const Eigen::RowVectorXd>(b.data.data(), model.components);
    const Eigen::RowVectorXd y = (1.0 / (1.0 + (-z.array()).exp())).matrix();
    return s.inverse(y);
}

BdlstmModel train_bdlstm(const Eigen::MatrixXd& latents, const BdlstmHyper& hyper) {
    hyper.optim.validate();
    if (hyper.epochs < 0 || hyper.batch_size < 1) throw DomainError("train_bdlstm: epochs >= 0 and batch_size >= 1 required");
    if (!(hyper.dropout >= 0.0 && hyper.dropout < 1.0)) throw DomainError("train_bdlstm: dropout must lie in [0, 1)");
    const nn::WindowSet windows = nn::make_windows(latents, hyper.window, hyper.train_fraction);
    const int m = static_cast<int>(latents.cols());
    BdlstmModel model = make_bdlstm(hyper.window, m, hyper.hidden, hyper.seed);

    const nn::AffineScaler scaler =
        nn::AffineScaler::minmax(latents.topRows(windows.train_count + hyper.window), hyper.scale_lo, hyper.scale_hi);
    model.store.value("scaler.offset").data.assign(scaler.offset.data(), scaler.offset.data() + m);
    model.store.value("scaler.scale").data.assign(scaler.scale.data(), scaler.scale.data() + m);

    const Eigen::MatrixXd scaled = scaler.forward_rows(latents);
    auto pack = [&](const std::vector<int>& idx, Tensor& x, Tensor& y) {
        const int b = static_cast<int>(idx.size());
        x = Tensor({b, hyper.window, m});
        y = Tensor({b, m});
        for (int i = 0; i < b; ++i) {
            const int k = idx[static_cast<std::size_t>(i)];
            for (int r = 0; r < hyper.window; ++r)
                for (int c = 0; c < m; ++c) x[(static_cast<std::size_t>(i) * hyper.window + r) * m + c] = scaled(k + r, c);
            for (int c = 0; c < m; ++c) y[static_cast<std::size_t>(i * m + c)] = scaled(k + hyper.window, c);
        }
    };

    std::vector<int> test_idx;
    for (int i = windows.train_count; i < windows.size(); ++i) test_idx.push_back(i);
    Tensor test_x, test_y;
    if (!test_idx.empty()) pack(test_idx, test_x, test_y);

    Rng rng(hyper.seed ^ 0x2545f4914f6cdd1dULL);
    const double keep = 1.0 - hyper.dropout;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        double total = 0.0;
        for (const auto& batch : nn::epoch_batches(windows.train_count, hyper.batch_size, rng)) {
            Tensor x, y;
            pack(batch, x, y);
            Tensor mask({static_cast<int>(batch.size()), 2 * hyper.hidden});
            for (double& v : mask.data) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
            Tape t;
            const Var loss = nn::mse(t, bdlstm_tape(t, model, x, hyper.dropout > 0.0 ? &mask : nullptr), y);
            const double value = t.value(loss)[0];
            if (!std::isfinite(value)) throw DomainError(fmt::format("train_bdlstm: non-finite loss at epoch {}", epoch));
            total += value * static_cast<double>(batch.size());
            t.backward(loss);
            nn::optimizer_step(model.store, t.parameter_grads(), hyper.optim);
        }
        model.train_loss.push_back(total / windows.train_count);
        if (!test_idx.empty()) {
            Tape t;
            model.test_loss.push_back(t.value(nn::mse(t, bdlstm_tape(t, model, test_x, nullptr, false), test_y))[0]);
        }
    }
    model.store.meta["trained"] = "true";
    return model;
}

Eigen::MatrixXd rollout_free(const BdlstmModel& model, const Eigen::MatrixXd& initial_window, int n_levels) {
    if (n_levels < 0) throw DomainError("rollout_free: n_levels must be >= 0");
    if (initial_window.rows() != model.window || initial_window.cols() != model.components) {
        throw ShapeError("rollout_free: initial window shape mismatch");
    }
    Eigen::MatrixXd out(model.window + n_levels, model.components);
    out.topRows(model.window) = initial_window;
    for (int k = 0; k < n_levels; ++k) out.row(model.window + k) = bdlstm_forward(model, out.middleRows(k, model.window));
    return out;
}

}  // namespace epitwin::lstm
