// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/gan.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include <fmt/format.h>

#include "epitwin/errors.hpp"

namespace epitwin::gan {

using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

// Transposed-conv stages: rows x3 first, then columns x3.
constexpr nn::Conv2dGeom kUpRows{3, 3, 3, 1, 0, 1};
constexpr nn::Conv2dGeom kUpCols{3, 3, 1, 3, 1, 0};
constexpr nn::Conv2dGeom kDown{3, 3, 2, 2, 1, 1};

int down(int n) { return (n + 2 * kDown.ph - kDown.kh) / kDown.sh + 1; }

Tensor conv_glorot(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
    return nn::glorot_uniform(std::move(shape), fan_in, fan_out, rng);
}

int meta_int(const nn::WeightStore& s, const std::string& key) {
    auto it = s.meta.find(key);
    if (it == s.meta.end()) throw FormatError(fmt::format("store '{}' lacks metadata '{}'", s.kind, key));
    return std::stoi(it->second);
}

}  // namespace

void GanHyper::validate() const {
    if (latent < 1 || rows < 3 || components < 3 || rows % 3 != 0 || components % 3 != 0) {
        throw DomainError(fmt::format("gan: rows ({}) and components ({}) must be positive multiples of 3", rows, components));
    }
    if (g_channels < 1 || g_mid < 1 || d_channels1 < 1 || d_channels2 < 1) throw DomainError("gan: channel counts must be >= 1");
    if (iterations < 0 || batch_size < 2) throw DomainError("gan: iterations >= 0 and batch_size >= 2 required");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw DomainError("gan: dropout must lie in [0, 1)");
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0) || !(bn_eps > 0.0)) throw DomainError("gan: bad batch-norm settings");
    optim.validate();
}

nn::AffineScaler GanModel::scaler() const { return nn::AffineScaler::load(gen, "scaler"); }

GanModel make_gan(const GanHyper& h) {
    h.validate();
    GanModel m;
    m.hyper = h;
    m.gen.kind = "gan-generator";
    m.disc.kind = "gan-discriminator";
    m.gen.seed = m.disc.seed = h.seed;
    m.gen.meta = {{"latent", std::to_string(h.latent)}, {"rows", std::to_string(h.rows)},
                  {"components", std::to_string(h.components)}, {"g_channels", std::to_string(h.g_channels)},
                  {"g_mid", std::to_string(h.g_mid)}};
    m.disc.meta = {{"rows", std::to_string(h.rows)}, {"components", std::to_string(h.components)},
                   {"d_channels1", std::to_string(h.d_channels1)}, {"d_channels2", std::to_string(h.d_channels2)},
                   {"dropout", fmt::format("{}", h.dropout)}};

    Rng rng(h.seed);
    const int r0 = h.rows / 3, k0 = h.components / 3;
    const int f0 = h.g_channels * r0 * k0;
    nn::add_dense(m.gen, "g.fc", h.latent, f0, rng);
    m.gen.add("g.bn0.gain", Tensor({f0}, 1.0));
    m.gen.add("g.bn0.shift", Tensor({f0}, 0.0));
    m.gen.add("g.bn0.mean", Tensor({f0}, 0.0), false);
    m.gen.add("g.bn0.var", Tensor({f0}, 1.0), false);
    m.gen.add("g.ct1.w", conv_glorot({h.g_channels, h.g_mid, 3, 3}, h.g_channels * 9, h.g_mid * 9, rng));
    m.gen.add("g.ct1.b", Tensor({h.g_mid}, 0.0));
    m.gen.add("g.bn1.gain", Tensor({h.g_mid}, 1.0));
    m.gen.add("g.bn1.shift", Tensor({h.g_mid}, 0.0));
    m.gen.add("g.bn1.mean", Tensor({h.g_mid}, 0.0), false);
    m.gen.add("g.bn1.var", Tensor({h.g_mid}, 1.0), false);
    m.gen.add("g.ct2.w", conv_glorot({h.g_mid, 1, 3, 3}, h.g_mid * 9, 9, rng));
    m.gen.add("g.ct2.b", Tensor({1}, 0.0));
    nn::AffineScaler identity{Eigen::VectorXd::Zero(h.components), Eigen::VectorXd::Ones(h.components)};
    identity.save(m.gen, "scaler");

    m.disc.add("d.c1.w", conv_glorot({h.d_channels1, 1, 3, 3}, 9, h.d_channels1 * 9, rng));
    m.disc.add("d.c1.b", Tensor({h.d_channels1}, 0.0));
    m.disc.add("d.c2.w", conv_glorot({h.d_channels2, h.d_channels1, 3, 3}, h.d_channels1 * 9, h.d_channels2 * 9, rng));
    m.disc.add("d.c2.b", Tensor({h.d_channels2}, 0.0));
    const int flat = h.d_channels2 * down(down(h.rows)) * down(down(h.components));
    m.disc.add("d.out.w", Tensor({flat, 1}, 0.0));
    m.disc.add("d.out.b", Tensor({1}, 0.0));
    return m;
}

GanModel gan_from_stores(nn::WeightStore gen, nn::WeightStore disc) {
    if (gen.kind != "gan-generator") throw FormatError(fmt::format("expected a gan-generator store, got '{}'", gen.kind));
    if (disc.kind != "gan-discriminator") throw FormatError(fmt::format("expected a gan-discriminator store, got '{}'", disc.kind));
    GanModel m;
    m.hyper.latent = meta_int(gen, "latent");
    m.hyper.rows = meta_int(gen, "rows");
    m.hyper.components = meta_int(gen, "components");
    m.hyper.g_channels = meta_int(gen, "g_channels");
    m.hyper.g_mid = meta_int(gen, "g_mid");
    m.hyper.d_channels1 = meta_int(disc, "d_channels1");
    m.hyper.d_channels2 = meta_int(disc, "d_channels2");
    m.hyper.dropout = std::stod(disc.meta.at("dropout"));
    m.hyper.seed = gen.seed;
    m.gen = std::move(gen);
    m.disc = std::move(disc);
    return m;
}

// -----------------------------------------------------------------------------

Var generator_tape(Tape& t, const GanModel& model, Var z, bool training, bool trainable, BnBatch* stats) {
    const GanHyper& h = model.hyper;
    const Tensor& zv = t.value(z);
    if (zv.rank() != 2 || zv.dim(1) != h.latent) {
        throw ShapeError(fmt::format("generator: z must be [B, {}], got {}", h.latent, nn::shape_string(zv.shape)));
    }
    const int batch = zv.dim(0);
    const nn::WeightStore& g = model.gen;
    auto bn = [&](Var x, const std::string& p, std::vector<double>* mean, std::vector<double>* var) {
        const Var gain = t.bind(g, p + ".gain", trainable);
        const Var shift = t.bind(g, p + ".shift", trainable);
        if (training) return nn::batch_norm_train(t, x, gain, shift, h.bn_eps, mean, var);
        return nn::batch_norm_infer(t, x, gain, shift, g.value(p + ".mean"), g.value(p + ".var"), h.bn_eps);
    };

    Var x = nn::dense(t, g, "g.fc", z, nn::Activation::Linear, trainable);
    x = nn::leaky_relu(t, bn(x, "g.bn0", stats ? &stats->mean0 : nullptr, stats ? &stats->var0 : nullptr));
    x = nn::reshape(t, x, {batch, h.g_channels, h.rows / 3, h.components / 3});
    x = nn::conv_transpose2d(t, x, t.bind(g, "g.ct1.w", trainable), t.bind(g, "g.ct1.b", trainable), kUpRows);
    x = nn::leaky_relu(t, bn(x, "g.bn1", stats ? &stats->mean1 : nullptr, stats ? &stats->var1 : nullptr));
    x = nn::conv_transpose2d(t, x, t.bind(g, "g.ct2.w", trainable), t.bind(g, "g.ct2.b", trainable), kUpCols);
    return nn::reshape(t, x, {batch, h.rows, h.components});
}

std::vector<Tensor> discriminator_masks(const GanModel& model, int batch, Rng& rng) {
    const GanHyper& h = model.hyper;
    const double keep = 1.0 - h.dropout;
    std::vector<Tensor> masks{Tensor({batch, h.d_channels1, down(h.rows), down(h.components)}),
                              Tensor({batch, h.d_channels2, down(down(h.rows)), down(down(h.components))})};
    for (Tensor& m : masks)
        for (double& v : m.data) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return masks;
}

Var discriminator_tape(Tape& t, const GanModel& model, Var y, const std::vector<Tensor>& masks, bool trainable) {
    const GanHyper& h = model.hyper;
    const Tensor& yv = t.value(y);
    if (yv.rank() != 3 || yv.dim(1) != h.rows || yv.dim(2) != h.components) {
        throw ShapeError(fmt::format("discriminator: input must be [B, {}, {}], got {}", h.rows, h.components, nn::shape_string(yv.shape)));
    }
    const int batch = yv.dim(0);
    const nn::WeightStore& d = model.disc;
    Var x = nn::reshape(t, y, {batch, 1, h.rows, h.components});
    x = nn::leaky_relu(t, nn::conv2d(t, x, t.bind(d, "d.c1.w", trainable), t.bind(d, "d.c1.b", trainable), kDown));
    if (!masks.empty()) x = nn::mul_const(t, x, masks[0]);
    x = nn::leaky_relu(t, nn::conv2d(t, x, t.bind(d, "d.c2.w", trainable), t.bind(d, "d.c2.b", trainable), kDown));
    if (masks.size() > 1) x = nn::mul_const(t, x, masks[1]);
    const int flat = static_cast<int>(t.value(x).size()) / batch;
    x = nn::reshape(t, x, {batch, flat});
    return nn::dense(t, d, "d.out", x, nn::Activation::Linear, trainable);
}

Eigen::MatrixXd generator_forward(const GanModel& model, const Eigen::VectorXd& z) {
    const GanHyper& h = model.hyper;
    if (z.size() != h.latent) throw ShapeError(fmt::format("generator_forward: z has {} entries, expected {}", z.size(), h.latent));
    Tape t;
    const Var out = generator_tape(t, model, t.constant(Tensor({1, h.latent}, std::vector<double>(z.data(), z.data() + z.size()))),
                                   false, false);
    const Tensor& y = t.value(out);
    const Eigen::MatrixXd scaled = Eigen::Map<const nn::RowMatrix>(y.data.data(), h.rows, h.components);
    return model.scaler().inverse_rows(scaled);
}

double discriminator_forward(const GanModel& model, const Eigen::MatrixXd& window) {
    const GanHyper& h = model.hyper;
    if (window.rows() != h.rows || window.cols() != h.components) {
        throw ShapeError(fmt::format("discriminator_forward: window is {}x{}, expected {}x{}", window.rows(), window.cols(), h.rows,
                                     h.components));
    }
    const nn::RowMatrix scaled = model.scaler().forward_rows(window);
    Tape t;
    const Var logit = discriminator_tape(
        t, model, t.constant(Tensor({1, h.rows, h.components}, std::vector<double>(scaled.data(), scaled.data() + scaled.size()))), {},
        false);
    return nn::Tensor(t.value(nn::sigmoid(t, logit)))[0];
}

// -----------------------------------------------------------------------------

GanModel train_gan(const Eigen::MatrixXd& latents, const GanHyper& hyper) {
    hyper.validate();
    if (latents.cols() != hyper.components) {
        throw ShapeError(fmt::format("train_gan: series has {} components, model expects {}", latents.cols(), hyper.components));
    }
    if (latents.rows() < hyper.rows + 1) {
        throw ShapeError(fmt::format("train_gan: need at least {} levels, got {}", hyper.rows + 1, latents.rows()));
    }
    GanModel model = make_gan(hyper);
    const nn::AffineScaler scaler = nn::AffineScaler::minmax(latents, -1.0, 1.0);
    model.gen.value("scaler.offset").data.assign(scaler.offset.data(), scaler.offset.data() + hyper.components);
    model.gen.value("scaler.scale").data.assign(scaler.scale.data(), scaler.scale.data() + hyper.components);
    const nn::RowMatrix scaled = scaler.forward_rows(latents);

    const int n = hyper.rows, m = hyper.components, b = hyper.batch_size;
    const int starts = static_cast<int>(latents.rows()) - n + 1;
    Rng rng(hyper.seed ^ 0xd1b54a32d192ed03ULL);
    auto noise = [&]() {
        Tensor z({b, hyper.latent});
        for (double& v : z.data) v = rng.normal();
        return z;
    };

    for (int it = 0; it < hyper.iterations; ++it) {
        Tensor real({b, n, m});
        for (int i = 0; i < b; ++i) {
            const auto k = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(starts)));
            std::copy(scaled.data() + k * m, scaled.data() + (k + n) * m, real.data.begin() + static_cast<std::ptrdiff_t>(i) * n * m);
        }

        double d_value = 0.0;
        {
            Tape t;
            const Var fake = generator_tape(t, model, t.constant(noise()), true, false);
            const Var lr = discriminator_tape(t, model, t.constant(std::move(real)), discriminator_masks(model, b, rng), true);
            const Var lf = discriminator_tape(t, model, fake, discriminator_masks(model, b, rng), true);
            const Var loss = nn::add(t, nn::bce_with_logits(t, lr, 1.0), nn::bce_with_logits(t, lf, 0.0));
            d_value = t.value(loss)[0];
            t.backward(loss);
            nn::optimizer_step(model.disc, t.parameter_grads(), hyper.optim);
        }
        double g_value = 0.0;
        BnBatch stats;
        {
            Tape t;
            const Var fake = generator_tape(t, model, t.constant(noise()), true, true, &stats);
            const Var lf = discriminator_tape(t, model, fake, discriminator_masks(model, b, rng), false);
            const Var loss = nn::bce_with_logits(t, lf, 1.0);
            g_value = t.value(loss)[0];
            t.backward(loss);
            nn::optimizer_step(model.gen, t.parameter_grads(), hyper.optim);
        }
        if (!std::isfinite(d_value) || !std::isfinite(g_value)) {
            throw DomainError(fmt::format("train_gan: non-finite loss at iteration {} (D {}, G {})", it, d_value, g_value));
        }
        const double mom = hyper.bn_momentum;
        auto blend = [mom](Tensor& running, const std::vector<double>& batch) {
            for (std::size_t i = 0; i < running.size(); ++i) running[i] = mom * running[i] + (1.0 - mom) * batch[i];
        };
        blend(model.gen.value("g.bn0.mean"), stats.mean0);
        blend(model.gen.value("g.bn0.var"), stats.var0);
        blend(model.gen.value("g.bn1.mean"), stats.mean1);
        blend(model.gen.value("g.bn1.var"), stats.var1);
        model.d_loss.push_back(d_value);
        model.g_loss.push_back(g_value);
    }
    model.gen.meta["trained"] = "true";
    model.disc.meta["trained"] = "true";
    return model;
}

// -----------------------------------------------------------------------------

double latent_objective(const GanModel& model, const Eigen::MatrixXd& known, const Eigen::MatrixXd& w, const Eigen::VectorXd& z) {
    const Eigen::MatrixXd gen = generator_forward(model, z);
    double total = 0.0;
    for (Eigen::Index j = 0; j < known.rows(); ++j) {
        const Eigen::VectorXd d = (known.row(j) - gen.row(j)).transpose();
        total += d.dot(w * d);
    }
    return total;
}

namespace {

void check_known(const GanModel& model, const Eigen::MatrixXd& known, const Eigen::MatrixXd& w) {
    const GanHyper& h = model.hyper;
    if (known.rows() != h.rows - 1 || known.cols() != h.components) {
        throw ShapeError(fmt::format("optimize_latent: need {}x{} known rows, got {}x{}", h.rows - 1, h.components, known.rows(),
                                     known.cols()));
    }
    if (w.rows() != h.components || w.cols() != h.components) throw ShapeError("optimize_latent: W_alpha must be M x M");
}

}  // namespace

LatentOptResult optimize_latent(const GanModel& model, const Eigen::MatrixXd& known, const Eigen::MatrixXd& w_alpha,
                                const Eigen::VectorXd& z_init, const LatentOptSettings& settings) {
    check_known(model, known, w_alpha);
    const GanHyper& h = model.hyper;
    if (z_init.size() != h.latent) throw ShapeError("optimize_latent: z_init length does not match the latent size");
    const int rows = h.rows - 1, m = h.components;
    const nn::AffineScaler s = model.scaler();

    // PC-unit generator rows: scaled * scale + offset.
    Tensor scale_tile({rows, m});
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < m; ++c) scale_tile[static_cast<std::size_t>(r * m + c)] = s.scale[c];
    const Tensor offset({m}, std::vector<double>(s.offset.data(), s.offset.data() + m));
    const nn::RowMatrix known_rm = known;
    const Tensor target({rows, m}, std::vector<double>(known_rm.data(), known_rm.data() + known_rm.size()));
    const nn::RowMatrix w_rm = w_alpha;
    const Tensor w_t({m, m}, std::vector<double>(w_rm.data(), w_rm.data() + w_rm.size()));

    nn::WeightStore zs;
    zs.kind = "latent";
    Tensor& z = zs.add("z", Tensor({1, h.latent}, std::vector<double>(z_init.data(), z_init.data() + z_init.size())));
    const nn::OptimConfig adam{nn::Algorithm::Adam, settings.learning_rate, 0.9, 0.999, 1.0e-7};

    LatentOptResult result;
    Eigen::VectorXd best = z_init;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int step = 0; step <= settings.max_steps; ++step) {
        Tape t;
        const Var zv = t.bind(zs, "z");
        Var g = generator_tape(t, model, zv, false, false);
        g = nn::slice_cols(t, nn::reshape(t, g, {1, h.rows * m}), 0, rows * m);
        g = nn::reshape(t, g, {rows, m});
        const Var pc = nn::add_bias(t, nn::mul_const(t, g, scale_tile), t.constant(offset));
        const Var d = nn::sub(t, pc, t.constant(target));
        const Var loss = nn::sum(t, nn::mul(t, nn::matmul(t, d, t.constant(w_t)), d));
        const double value = t.value(loss)[0];
        if (!std::isfinite(value)) throw DomainError(fmt::format("optimize_latent: non-finite objective at step {}", step));
        result.loss.push_back(value);
        if (value < best_loss) {
            best_loss = value;
            best = Eigen::Map<const Eigen::VectorXd>(z.data.data(), h.latent);
        }
        if (step == settings.max_steps || value == 0.0) break;
        if (step >= settings.patience) {
            const double then = result.loss[static_cast<std::size_t>(step - settings.patience)];
            if (then - value <= settings.rel_tol * std::abs(then)) break;
        }
        t.backward(loss);
        nn::optimizer_step(zs, t.parameter_grads(), adam);
    }
    result.z = best;
    result.initial_loss = result.loss.front();
    result.final_loss = best_loss;
    return result;
}

GanRollout rollout_predictive_gan(const GanModel& model, const Eigen::MatrixXd& truth, int start_level, int n_levels,
                                  const Eigen::MatrixXd& w_alpha, const LatentOptSettings& settings, std::uint64_t seed,
                                  assim::AccessLog* log) {
    const GanHyper& h = model.hyper;
    const int known_rows = h.rows - 1;
    if (start_level < known_rows) throw DomainError(fmt::format("rollout_predictive_gan: start level {} < {}", start_level, known_rows));
    if (start_level > truth.rows()) throw ShapeError("rollout_predictive_gan: start level beyond the truth series");
    if (n_levels < 0) throw DomainError("rollout_predictive_gan: n_levels must be >= 0");
    if (settings.restarts < 1) throw DomainError("rollout_predictive_gan: restarts must be >= 1");

    GanRollout out;
    out.series.resize(known_rows + n_levels, h.components);
    for (int r = 0; r < known_rows; ++r) {
        if (log) log->levels.push_back(start_level - known_rows + r);
        out.series.row(r) = truth.row(start_level - known_rows + r);
    }

    Rng rng(seed);
    Eigen::VectorXd z_prev;
    for (int k = 0; k < n_levels; ++k) {
        const Eigen::MatrixXd known = out.series.middleRows(k, known_rows);
        LatentOptResult best;
        try {
            if (k == 0) {
                std::vector<Eigen::VectorXd> inits;
                for (int r = 0; r < settings.restarts; ++r) {
                    Eigen::VectorXd z(h.latent);
                    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
                    inits.push_back(std::move(z));
                }
                std::vector<LatentOptResult> runs(inits.size());
                const int workers = std::min<int>(nn::worker_threads(), static_cast<int>(inits.size()));
                std::vector<std::thread> pool;
                std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
                for (int w = 0; w < workers; ++w) {
                    pool.emplace_back([&, w]() {
                        try {
                            for (std::size_t r = static_cast<std::size_t>(w); r < inits.size(); r += static_cast<std::size_t>(workers)) {
                                runs[r] = optimize_latent(model, known, w_alpha, inits[r], settings);
                            }
                        } catch (...) {
                            errors[static_cast<std::size_t>(w)] = std::current_exception();
                        }
                    });
                }
                for (auto& th : pool) th.join();
                for (auto& e : errors)
                    if (e) std::rethrow_exception(e);
                std::size_t pick = 0;
                for (std::size_t r = 1; r < runs.size(); ++r)
                    if (runs[r].final_loss < runs[pick].final_loss) pick = r;
                best = std::move(runs[pick]);
            } else {
                best = optimize_latent(model, known, w_alpha, z_prev, settings);
            }
        } catch (const DomainError& e) {
            throw DomainError(fmt::format("predictive GAN level {}: {}", start_level + k, e.what()));
        }
        out.series.row(known_rows + k) = generator_forward(model, best.z).row(h.rows - 1);
        out.final_losses.push_back(best.final_loss);
        out.steps.push_back(static_cast<int>(best.loss.size()) - 1);
        z_prev = best.z;
    }
    return out;
}

}  // namespace epitwin::gan
