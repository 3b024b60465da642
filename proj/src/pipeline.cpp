// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

#include <fmt/format.h>

#include "epitwin/assimilation.hpp"
#include "epitwin/errors.hpp"
#include "epitwin/evaluation.hpp"
#include "epitwin/ffn.hpp"
#include "epitwin/gan.hpp"
#include "epitwin/layers.hpp"
#include "epitwin/lstm.hpp"
#include "epitwin/manifest.hpp"
#include "epitwin/persistence.hpp"
#include "epitwin/rom.hpp"
#include "epitwin/seirs.hpp"

namespace epitwin::io {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names = {"simulate", "eigen",   "rom-fit",  "train-lstm", "train-ffn",
                                                   "train-gan", "predict", "evaluate", "compare",    "bench"};
    return names;
}

const std::vector<std::string>& methods() {
    static const std::vector<std::string> names = {"bdlstm", "bdlstm-blue", "ffn-blue", "predictive-gan"};
    return names;
}

MissingArtifactError::MissingArtifactError(const std::string& path, std::string producer)
    : std::runtime_error(fmt::format("missing artifact '{}'; run the '{}' subcommand first", path, producer)),
      producer_(std::move(producer)) {}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) {
    // splitmix64 finaliser over (seed, purpose)
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (purpose + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

constexpr std::uint64_t kSeedLstm = 1, kSeedFfn = 2, kSeedGan = 3, kSeedGanRollout = 4;

const char* kSnapshots = "snapshots.csv";
const char* kBasisLstm = "basis_lstm.eptw";
const char* kBasisGan = "basis_gan.eptw";
const char* kLatentsLstm = "latents_lstm.csv";
const char* kLatentsGan = "latents_gan.csv";
const char* kBdlstm = "bdlstm.eptw";
const char* kFfn = "ffn.eptw";
const char* kGanGen = "gan_generator.eptw";
const char* kGanDisc = "gan_discriminator.eptw";

struct Context {
    ExperimentConfig cfg;
    fs::path out;
    RunOptions opts;
    std::ostream& log;
    Manifest manifest;
    int start = 0;
    int horizon = 0;

    std::string path(const std::string& rel) const { return (out / rel).string(); }

    void input(const std::string& rel, const std::string& producer) {
        if (!fs::exists(out / rel)) throw MissingArtifactError(path(rel), producer);
        for (const auto& r : manifest.inputs)
            if (r.path == rel) return;
        manifest.inputs.push_back({rel, sha256_file(path(rel)), false});
    }

    void output(const std::string& rel, bool is_volatile = false) {
        manifest.outputs.push_back({rel, sha256_file(path(rel)), is_volatile});
    }
};

std::string tag(const std::string& method, int start) { return fmt::format("{}_s{}", method, start); }

// --- latent tables ------------------------------------------------------------

void write_latents(const std::string& path, int first_level, const Eigen::MatrixXd& z) {
    std::vector<std::string> header{"level"};
    for (Eigen::Index c = 0; c < z.cols(); ++c) header.push_back(fmt::format("pc{}", c));
    Eigen::MatrixXd t(z.rows(), z.cols() + 1);
    for (Eigen::Index r = 0; r < z.rows(); ++r) t(r, 0) = static_cast<double>(first_level + r);
    t.rightCols(z.cols()) = z;
    write_table(path, header, t);
}

struct Latents {
    int first_level = 0;
    Eigen::MatrixXd values;
};

Latents read_latents(const std::string& path) {
    const Table t = read_table(path);
    if (t.header.empty() || t.header[0] != "level") throw FormatError(fmt::format("'{}': first column must be 'level'", path));
    Latents l;
    l.values = t.values.rightCols(t.values.cols() - 1);
    l.first_level = t.values.rows() > 0 ? static_cast<int>(t.values(0, 0)) : 0;
    for (Eigen::Index r = 0; r < t.values.rows(); ++r) {
        if (t.values(r, 0) != l.first_level + r) throw FormatError(fmt::format("'{}': levels are not consecutive at row {}", path, r));
    }
    return l;
}

// --- model loaders with layout checks ----------------------------------------

int meta_int(const nn::WeightStore& s, const std::string& key, int fallback) {
    const auto it = s.meta.find(key);
    return it == s.meta.end() ? fallback : std::stoi(it->second);
}

lstm::BdlstmModel load_bdlstm(const std::string& path) {
    nn::WeightStore s = load_checkpoint(path);
    const auto ref = lstm::make_bdlstm(meta_int(s, "window", 1), meta_int(s, "components", 1), meta_int(s, "hidden", 1), 0);
    require_layout(s, ref.store);
    return lstm::bdlstm_from_store(std::move(s));
}

nn::FfnModel load_ffn(const std::string& path) {
    nn::WeightStore s = load_checkpoint(path);
    const auto ref = nn::make_ffn(meta_int(s, "window", 1), meta_int(s, "components", 1), meta_int(s, "hidden", 1),
                                  meta_int(s, "hidden_layers", 1), 0);
    require_layout(s, ref.store);
    return nn::ffn_from_store(std::move(s));
}

gan::GanModel load_gan(const std::string& gen_path, const std::string& disc_path) {
    nn::WeightStore g = load_checkpoint(gen_path);
    nn::WeightStore d = load_checkpoint(disc_path);
    gan::GanHyper h;
    h.latent = meta_int(g, "latent", h.latent);
    h.rows = meta_int(g, "rows", h.rows);
    h.components = meta_int(g, "components", h.components);
    h.g_channels = meta_int(g, "g_channels", h.g_channels);
    h.g_mid = meta_int(g, "g_mid", h.g_mid);
    h.d_channels1 = meta_int(d, "d_channels1", h.d_channels1);
    h.d_channels2 = meta_int(d, "d_channels2", h.d_channels2);
    const auto ref = gan::make_gan(h);
    require_layout(g, ref.gen);
    require_layout(d, ref.disc);
    return gan::gan_from_stores(std::move(g), std::move(d));
}

rom::RomBasis load_basis(const std::string& path) { return basis_from_store(load_checkpoint(path)); }

bool lstm_family(const std::string& method) { return method != "predictive-gan"; }

void check_method(const std::string& method) {
    if (std::find(methods().begin(), methods().end(), method) == methods().end()) {
        throw ValidationError("method", fmt::format("unknown method '{}'", method));
    }
}

// --- subcommands --------------------------------------------------------------

void cmd_simulate(Context& ctx) {
    const auto& g = ctx.cfg.grid;
    const auto init = seirs::default_initial_state(g);
    ctx.log << fmt::format("simulate: {} steps of {} s on {}x{}x{}\n", ctx.cfg.model.n_steps, format_double(ctx.cfg.model.dt), g.nx, g.ny, g.nz);
    const auto states = seirs::simulate(ctx.cfg.model, g, init, ctx.cfg.solver);
    save_snapshots(states, g, ctx.path(kSnapshots));
    ctx.output(kSnapshots);
    const double n0 = states.front().total(), n1 = states.back().total();
    ctx.log << fmt::format("simulate: population {} -> {} (relative drift {:.3e})\n", n0, n1, std::abs(n1 - n0) / n0);
}

void cmd_eigen(Context& ctx) {
    const auto r = seirs::solve_eigen(ctx.cfg.model, ctx.cfg.grid, ctx.cfg.solver);
    const std::string line = fmt::format("lambda0={} R0={} residual={} iterations={}", format_double(r.lambda0), format_double(r.r0),
                                         format_double(r.residual_norm), r.iterations);
    std::ofstream(ctx.path("eigen.txt"), std::ios::binary) << line << '\n';
    ctx.output("eigen.txt");
    ctx.log << line << '\n';
}

void cmd_rom_fit(Context& ctx) {
    ctx.input(kSnapshots, "simulate");
    const auto series = load_snapshots(ctx.path(kSnapshots), &ctx.cfg.grid);
    const auto snaps = rom::build_snapshots(series.states, ctx.cfg.rom.stride);
    const int m = ctx.cfg.rom.components;
    const auto bl = rom::fit_pca(snaps, m, ctx.cfg.rom.lstm_normalization);
    const auto bg = rom::fit_pca(snaps, m, ctx.cfg.rom.gan_normalization);
    save_checkpoint(basis_to_store(bl), ctx.path(kBasisLstm));
    save_checkpoint(basis_to_store(bg), ctx.path(kBasisGan));
    write_latents(ctx.path(kLatentsLstm), 0, rom::project_rows(bl, snaps.data));
    write_latents(ctx.path(kLatentsGan), 0, rom::project_rows(bg, snaps.data));

    const Eigen::VectorXd fl = bl.explained_fractions(), fg = bg.explained_fractions();
    Eigen::MatrixXd spec(m, 5);
    for (int i = 0; i < m; ++i) spec.row(i) << i, bl.singular_values[i], fl[i], bg.singular_values[i], fg[i];
    write_table(ctx.path("rom_spectrum.csv"), {"component", "sv_lstm", "fraction_lstm", "sv_gan", "fraction_gan"}, spec);
    for (const char* f : {kBasisLstm, kBasisGan, kLatentsLstm, kLatentsGan, "rom_spectrum.csv"}) ctx.output(f);
    ctx.log << fmt::format("rom-fit: {} levels x {} variables; {} components explain {:.6f} ({}) and {:.6f} ({})\n", snaps.levels(),
                           snaps.vars(), m, fl.sum(), rom::to_string(bl.mode), fg.sum(), rom::to_string(bg.mode));
}

void write_loss(const std::string& path, const std::string& x, const std::vector<std::string>& names,
                const std::vector<const std::vector<double>*>& cols) {
    std::size_t n = 0;
    for (const auto* c : cols) n = std::max(n, c->size());
    Eigen::MatrixXd t(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size() + 1));
    for (std::size_t r = 0; r < n; ++r) {
        t(static_cast<Eigen::Index>(r), 0) = static_cast<double>(r + 1);
        for (std::size_t c = 0; c < cols.size(); ++c) {
            t(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c + 1)) =
                r < cols[c]->size() ? (*cols[c])[r] : std::numeric_limits<double>::quiet_NaN();
        }
    }
    std::vector<std::string> header{x};
    header.insert(header.end(), names.begin(), names.end());
    write_table(path, header, t);
}

void cmd_train_lstm(Context& ctx) {
    ctx.input(kLatentsLstm, "rom-fit");
    const auto lat = read_latents(ctx.path(kLatentsLstm));
    auto hyper = ctx.cfg.lstm;
    hyper.seed = derive_seed(ctx.cfg.seed, kSeedLstm);
    ctx.log << fmt::format("train-lstm: {} epochs on {} levels\n", hyper.epochs, lat.values.rows());
    const auto model = lstm::train_bdlstm(lat.values, hyper);
    save_checkpoint(model.store, ctx.path(kBdlstm));
    write_loss(ctx.path("bdlstm_loss.csv"), "epoch", {"train", "test"}, {&model.train_loss, &model.test_loss});
    ctx.output(kBdlstm);
    ctx.output("bdlstm_loss.csv");
    if (!model.train_loss.empty()) {
        ctx.log << fmt::format("train-lstm: final train {:.4e}, test {:.4e}\n", model.train_loss.back(), model.test_loss.back());
    }
}

void cmd_train_ffn(Context& ctx) {
    ctx.input(kLatentsLstm, "rom-fit");
    const auto lat = read_latents(ctx.path(kLatentsLstm));
    auto hyper = ctx.cfg.ffn;
    hyper.seed = derive_seed(ctx.cfg.seed, kSeedFfn);
    ctx.log << fmt::format("train-ffn: {} epochs on {} levels\n", hyper.epochs, lat.values.rows());
    const auto model = nn::train_ffn(lat.values, hyper);
    save_checkpoint(model.store, ctx.path(kFfn));
    write_loss(ctx.path("ffn_loss.csv"), "epoch", {"train", "test"}, {&model.train_loss, &model.test_loss});
    ctx.output(kFfn);
    ctx.output("ffn_loss.csv");
    if (!model.train_loss.empty()) {
        ctx.log << fmt::format("train-ffn: final train {:.4e}, test {:.4e}\n", model.train_loss.back(), model.test_loss.back());
    }
}

void cmd_train_gan(Context& ctx) {
    ctx.input(kLatentsGan, "rom-fit");
    const auto lat = read_latents(ctx.path(kLatentsGan));
    auto hyper = ctx.cfg.gan;
    hyper.seed = derive_seed(ctx.cfg.seed, kSeedGan);
    ctx.log << fmt::format("train-gan: {} iterations, batch {}\n", hyper.iterations, hyper.batch_size);
    const auto model = gan::train_gan(lat.values, hyper);
    save_checkpoint(model.gen, ctx.path(kGanGen));
    save_checkpoint(model.disc, ctx.path(kGanDisc));
    write_loss(ctx.path("gan_loss.csv"), "iteration", {"discriminator", "generator"}, {&model.d_loss, &model.g_loss});
    for (const char* f : {kGanGen, kGanDisc, "gan_loss.csv"}) ctx.output(f);
    if (!model.d_loss.empty()) {
        ctx.log << fmt::format("train-gan: final D {:.4f}, G {:.4f}\n", model.d_loss.back(), model.g_loss.back());
    }
}

/// Rollout for one method; fills `access` with the truth levels read.
struct Prediction {
    Eigen::MatrixXd latents;  ///< predicted levels only
    std::vector<int> access;
    std::vector<double> gan_losses;
    std::vector<int> gan_steps;
};

struct Models {
    std::optional<lstm::BdlstmModel> bdlstm;
    std::optional<nn::FfnModel> ffn;
    std::optional<gan::GanModel> gan;
    std::optional<rom::RomBasis> gan_basis;
    std::map<std::string, assim::BlueStats> blue;
};

assim::Predictor predictor_for(const std::string& method, const Models& m) {
    if (method == "ffn-blue") {
        const auto* f = &*m.ffn;
        return [f](const Eigen::MatrixXd& w) { return nn::ffn_predict(*f, w); };
    }
    const auto* b = &*m.bdlstm;
    return [b](const Eigen::MatrixXd& w) { return lstm::bdlstm_forward(*b, w); };
}

int predictor_window(const std::string& method, const Models& m) { return method == "ffn-blue" ? m.ffn->window : m.bdlstm->window; }

assim::BlueStats blue_stats_for(const std::string& method, const Models& m, const Eigen::MatrixXd& truth, const ExperimentConfig& cfg) {
    const int w = predictor_window(method, m);
    const double frac = method == "ffn-blue" ? cfg.ffn.train_fraction : cfg.lstm.train_fraction;
    const int train_levels = nn::make_windows(truth, w, frac).train_count + w;
    return assim::estimate_rollout_stats(predictor_for(method, m), truth, w, train_levels, cfg.rollout.ridge_factor);
}

Prediction predict_with(const std::string& method, const Models& m, const Eigen::MatrixXd& truth, const ExperimentConfig& cfg,
                        int start, int n) {
    Prediction p;
    assim::AccessLog log;
    if (method == "bdlstm") {
        const int w = m.bdlstm->window;
        if (start < w) throw ValidationError("start_level", fmt::format("must be >= window {}", w));
        for (int r = start - w; r < start; ++r) log.levels.push_back(r);
        p.latents = lstm::rollout_free(*m.bdlstm, truth.middleRows(start - w, w), n).bottomRows(n);
    } else if (method == "predictive-gan") {
        const auto w_alpha = rom::pc_weight_matrix(*m.gan_basis);
        const auto r = gan::rollout_predictive_gan(*m.gan, truth, start, n, w_alpha, cfg.rollout.latent_opt,
                                                   derive_seed(cfg.seed, kSeedGanRollout), &log);
        p.latents = r.series.bottomRows(n);
        p.gan_losses = r.final_losses;
        p.gan_steps = r.steps;
    } else {
        p.latents = assim::rollout_corrected(predictor_for(method, m), m.blue.at(method), truth, predictor_window(method, m), start, n, &log)
                        .bottomRows(n);
    }
    p.access = std::move(log.levels);
    return p;
}

std::string blue_file(const std::string& method) { return fmt::format("blue_{}.eptw", method); }

/// Loads whatever the method needs, registering inputs on the manifest.
Models load_models(Context& ctx, const std::string& method, const Eigen::MatrixXd& truth, bool save_blue) {
    Models m;
    if (method == "bdlstm" || method == "bdlstm-blue") {
        ctx.input(kBdlstm, "train-lstm");
        m.bdlstm = load_bdlstm(ctx.path(kBdlstm));
    }
    if (method == "ffn-blue") {
        ctx.input(kFfn, "train-ffn");
        m.ffn = load_ffn(ctx.path(kFfn));
    }
    if (method == "predictive-gan") {
        ctx.input(kGanGen, "train-gan");
        ctx.input(kGanDisc, "train-gan");
        ctx.input(kBasisGan, "rom-fit");
        m.gan = load_gan(ctx.path(kGanGen), ctx.path(kGanDisc));
        m.gan_basis = load_basis(ctx.path(kBasisGan));
    }
    if (method == "bdlstm-blue" || method == "ffn-blue") {
        const auto stats = blue_stats_for(method, m, truth, ctx.cfg);
        m.blue.emplace(method, stats);
        if (save_blue) {
            save_checkpoint(blue_to_store(stats), ctx.path(blue_file(method)));
            ctx.output(blue_file(method));
        }
    }
    return m;
}

int resolve_horizon(const Context& ctx, int levels) {
    const int n = ctx.horizon > 0 ? ctx.horizon : levels - ctx.start;
    if (ctx.start + n > levels || n < 1) {
        throw ValidationError("horizon", fmt::format("start {} + horizon {} exceeds the {} available levels", ctx.start, n, levels));
    }
    return n;
}

void cmd_predict(Context& ctx) {
    const std::string& method = ctx.opts.method;
    check_method(method);
    const char* latents_file = lstm_family(method) ? kLatentsLstm : kLatentsGan;
    ctx.input(latents_file, "rom-fit");
    ctx.input(lstm_family(method) ? kBasisLstm : kBasisGan, "rom-fit");
    const auto truth = read_latents(ctx.path(latents_file)).values;
    const int n = resolve_horizon(ctx, static_cast<int>(truth.rows()));
    const Models models = load_models(ctx, method, truth, true);

    ctx.log << fmt::format("predict: {} from level {} for {} levels\n", method, ctx.start, n);
    const Prediction p = predict_with(method, models, truth, ctx.cfg, ctx.start, n);
    const std::string t = tag(method, ctx.start);
    const std::string pred = fmt::format("pred_{}.csv", t), access = fmt::format("pred_{}_access.csv", t);
    write_latents(ctx.path(pred), ctx.start, p.latents);
    Eigen::MatrixXd acc(static_cast<Eigen::Index>(p.access.size()), 1);
    for (std::size_t i = 0; i < p.access.size(); ++i) acc(static_cast<Eigen::Index>(i), 0) = p.access[i];
    write_table(ctx.path(access), {"truth_level"}, acc);
    ctx.output(pred);
    ctx.output(access);
    if (method == "predictive-gan") {
        const std::string opt = fmt::format("pred_{}_latent_opt.csv", t);
        Eigen::MatrixXd o(static_cast<Eigen::Index>(p.gan_losses.size()), 3);
        for (std::size_t i = 0; i < p.gan_losses.size(); ++i) {
            o.row(static_cast<Eigen::Index>(i)) << ctx.start + static_cast<double>(i), p.gan_losses[i], p.gan_steps[i];
        }
        write_table(ctx.path(opt), {"level", "objective", "steps"}, o);
        ctx.output(opt);
    }
}

/// Physical truth rows for levels [first, first + n).
Eigen::MatrixXd truth_rows(Context& ctx, int first, int n) {
    ctx.input(kSnapshots, "simulate");
    const auto series = load_snapshots(ctx.path(kSnapshots), &ctx.cfg.grid);
    const auto snaps = rom::build_snapshots(series.states, ctx.cfg.rom.stride);
    if (first + n > snaps.levels()) throw ShapeError("truth series shorter than the prediction");
    return snaps.data.middleRows(first, n);
}

/// Checks that `rel` still hashes to what the predict step recorded.
void check_recorded(Context& ctx, const Manifest& producer, const std::string& rel) {
    const std::string now = sha256_file(ctx.path(rel));
    std::string recorded;
    for (const auto* list : {&producer.inputs, &producer.outputs})
        for (const auto& r : *list)
            if (r.path == rel) recorded = r.sha256;
    if (recorded.empty() || recorded == now) return;
    const std::string msg = fmt::format("'{}' changed since '{}' used it (recorded {}, now {})", rel, producer.subcommand,
                                        recorded.substr(0, 12), now.substr(0, 12));
    if (!ctx.opts.force) throw HashMismatchError(msg + "; pass --force to override");
    ctx.log << "warning: " << msg << '\n';
}

struct MethodReport {
    eval::EvalReport report;
    Eigen::MatrixXd pred_rows;
    Eigen::MatrixXd truth_rows;
    int first_level = 0;
};

MethodReport evaluate_method(Context& ctx, const std::string& method, int start) {
    const std::string t = tag(method, start);
    const std::string pred = fmt::format("pred_{}.csv", t);
    const std::string pm = fmt::format("manifests/predict_{}.json", t);
    ctx.input(pred, "predict");
    ctx.input(pm, "predict");
    const char* basis_file = lstm_family(method) ? kBasisLstm : kBasisGan;
    ctx.input(basis_file, "rom-fit");
    const Manifest producer = read_manifest(ctx.path(pm));
    check_recorded(ctx, producer, pred);
    check_recorded(ctx, producer, basis_file);

    const auto lat = read_latents(ctx.path(pred));
    const auto basis = load_basis(ctx.path(basis_file));
    MethodReport r;
    r.first_level = lat.first_level;
    r.pred_rows = rom::reconstruct_rows(basis, lat.values);
    r.truth_rows = truth_rows(ctx, lat.first_level, static_cast<int>(lat.values.rows()));
    r.report = eval::summarize(r.pred_rows, r.truth_rows, ctx.cfg.grid);
    return r;
}

std::vector<std::string> table_labels() {
    std::vector<std::string> l;
    for (int f : eval::table_field_order()) l.push_back(seirs::field_label(f));
    return l;
}

std::vector<std::vector<std::string>> cell_rows(const seirs::GridSpec& grid, const std::function<std::string(int, int)>& value,
                                                const eval::ActiveMask& mask) {
    std::vector<std::vector<std::string>> rows;
    for (int f : eval::table_field_order()) {
        for (int c = 0; c < grid.cells(); ++c) {
            if (!mask.cells[static_cast<std::size_t>(f)][static_cast<std::size_t>(c)]) continue;
            const int i = c % grid.nx, j = (c / grid.nx) % grid.ny;
            rows.push_back({std::to_string(i), std::to_string(j), seirs::compartment_name(f / seirs::kGroups),
                            seirs::group_name(f % seirs::kGroups), value(f, c)});
        }
    }
    return rows;
}

void cmd_evaluate(Context& ctx) {
    const std::string& method = ctx.opts.method;
    check_method(method);
    const MethodReport mr = evaluate_method(ctx, method, ctx.start);
    const auto& rep = mr.report;
    const auto order = eval::table_field_order();
    const auto labels = table_labels();
    const std::string t = tag(method, ctx.start);

    std::vector<std::string> header{"level"};
    for (const auto& l : labels) header.push_back("rmse_" + l);
    for (const auto& l : labels) header.push_back("nrmse_" + l);
    Eigen::MatrixXd levels(rep.levels, 1 + 2 * seirs::kFields);
    for (int k = 0; k < rep.levels; ++k) {
        levels(k, 0) = mr.first_level + k;
        for (int i = 0; i < seirs::kFields; ++i) {
            const auto f = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
            levels(k, 1 + i) = rep.rmse[f][static_cast<std::size_t>(k)];
            levels(k, 1 + seirs::kFields + i) = rep.nrmse[f][static_cast<std::size_t>(k)];
        }
    }
    const std::string f_levels = fmt::format("eval_{}_levels.csv", t);
    write_table(ctx.path(f_levels), header, levels);

    std::vector<std::string> sh{"metric"};
    sh.insert(sh.end(), labels.begin(), labels.end());
    std::vector<std::string> avg{"average_nrmse"}, undef{"undefined_levels"};
    for (int f : order) {
        avg.push_back(format_double(rep.average_nrmse[static_cast<std::size_t>(f)]));
        undef.push_back(std::to_string(rep.undefined_levels[static_cast<std::size_t>(f)]));
    }
    const std::string f_summary = fmt::format("eval_{}_summary.csv", t);
    write_text_table(ctx.path(f_summary), sh, {avg, undef});

    const auto mask = eval::ActiveMask::from_grid(ctx.cfg.grid);
    const std::string f_cells = fmt::format("eval_{}_cells.csv", t);
    write_text_table(ctx.path(f_cells), {"x", "y", "compartment", "group", "value"},
                     cell_rows(
                         ctx.cfg.grid,
                         [&](int f, int c) { return format_double(rep.cell_rmse[static_cast<std::size_t>(f)][static_cast<std::size_t>(c)]); },
                         mask));

    const auto probe = ctx.cfg.probe();
    const int cell = ctx.cfg.grid.cell_index(probe[0], probe[1]);
    const int cells = ctx.cfg.grid.cells();
    std::vector<std::string> ph{"level"};
    for (const auto& l : labels) ph.push_back("pred_" + l);
    for (const auto& l : labels) ph.push_back("truth_" + l);
    Eigen::MatrixXd pr(rep.levels, 1 + 2 * seirs::kFields);
    for (int k = 0; k < rep.levels; ++k) {
        pr(k, 0) = mr.first_level + k;
        for (int i = 0; i < seirs::kFields; ++i) {
            const int f = order[static_cast<std::size_t>(i)];
            pr(k, 1 + i) = mr.pred_rows(k, f * cells + cell);
            pr(k, 1 + seirs::kFields + i) = mr.truth_rows(k, f * cells + cell);
        }
    }
    const std::string f_probe = fmt::format("eval_{}_probe.csv", t);
    write_table(ctx.path(f_probe), ph, pr);

    for (const auto& f : {f_levels, f_summary, f_cells, f_probe}) ctx.output(f);
    std::string line = fmt::format("evaluate: {} average NRMSE", method);
    for (std::size_t i = 0; i < labels.size(); ++i) line += fmt::format(" {}={:.4f}", labels[i], rep.average_nrmse[static_cast<std::size_t>(order[i])]);
    ctx.log << line << '\n';
}

// --- timing ---------------------------------------------------------------------

struct TimingRow {
    std::string name;
    eval::TimingStats stats;
};

/// Solver and surrogate wall time per set of 9 (solver steps, surrogate
/// levels). Surrogates are timed only when their artifacts exist.
std::vector<TimingRow> time_sets(Context& ctx, int reps) {
    constexpr int kSet = 9;
    std::vector<TimingRow> rows;
    ctx.input(kSnapshots, "simulate");
    const auto series = load_snapshots(ctx.path(kSnapshots), &ctx.cfg.grid);
    const auto snaps = rom::build_snapshots(series.states, ctx.cfg.rom.stride);
    const int start = std::min(ctx.start, snaps.levels() - kSet);
    const seirs::StateField s0 = snaps.row_state(start);
    seirs::TransientSolver solver(ctx.cfg.grid, ctx.cfg.model, ctx.cfg.solver);
    auto run_steps = [&](int steps) {
        seirs::StateField s = s0;
        for (int i = 0; i < steps; ++i) s = solver.step(s);
    };
    rows.push_back({"solver-9-steps", eval::time_harness([&] { run_steps(kSet); }, reps)});
    rows.push_back({"solver-9-levels", eval::time_harness([&] { run_steps(kSet * ctx.cfg.rom.stride); }, reps)});

    for (const auto& method : methods()) {
        const bool have = method == "predictive-gan" ? fs::exists(ctx.path(kGanGen)) && fs::exists(ctx.path(kGanDisc))
                          : method == "ffn-blue"     ? fs::exists(ctx.path(kFfn))
                                                     : fs::exists(ctx.path(kBdlstm));
        const char* latents_file = lstm_family(method) ? kLatentsLstm : kLatentsGan;
        if (!have || !fs::exists(ctx.path(latents_file))) continue;
        ctx.input(latents_file, "rom-fit");
        const auto truth = read_latents(ctx.path(latents_file)).values;
        const Models models = load_models(ctx, method, truth, false);
        rows.push_back({method, eval::time_harness([&] { predict_with(method, models, truth, ctx.cfg, start, kSet); }, reps)});
    }
    return rows;
}

void write_times(const std::string& path, const std::vector<TimingRow>& rows) {
    const double ref = rows.front().stats.median;
    std::vector<std::vector<std::string>> out;
    for (const auto& r : rows) {
        out.push_back({r.name, std::to_string(r.stats.reps), format_double(r.stats.median), format_double(r.stats.min),
                       format_double(r.stats.max), format_double(r.stats.mean), format_double(ref / r.stats.median)});
    }
    write_text_table(path, {"method", "reps", "seconds_per_set", "min", "max", "mean", "speed_up"}, out);
}

void cmd_compare(Context& ctx) {
    const auto labels = table_labels();
    const auto order = eval::table_field_order();
    std::map<std::string, MethodReport> reports;
    for (const auto& method : methods()) {
        const bool required = method == "bdlstm-blue" || method == "predictive-gan";
        if (!required && !fs::exists(ctx.path(fmt::format("pred_{}.csv", tag(method, ctx.start))))) continue;
        reports.emplace(method, evaluate_method(ctx, method, ctx.start));
    }

    std::vector<std::string> header{"method"};
    header.insert(header.end(), labels.begin(), labels.end());
    std::vector<std::vector<std::string>> rows;
    for (const auto& method : methods()) {
        auto it = reports.find(method);
        if (it == reports.end()) continue;
        std::vector<std::string> row{method};
        for (int f : order) row.push_back(format_double(it->second.report.average_nrmse[static_cast<std::size_t>(f)]));
        rows.push_back(std::move(row));
    }
    const std::string f_table = fmt::format("table1_s{}.csv", ctx.start);
    write_text_table(ctx.path(f_table), header, rows);

    const auto ss = eval::skill_map(reports.at("bdlstm-blue").report, reports.at("predictive-gan").report);
    const auto mask = eval::ActiveMask::from_grid(ctx.cfg.grid);
    const std::string f_ss = fmt::format("ss_map_s{}.csv", ctx.start);
    write_text_table(ctx.path(f_ss), {"x", "y", "compartment", "group", "value"},
                     cell_rows(
                         ctx.cfg.grid, [&](int f, int c) { return format_double(ss[static_cast<std::size_t>(f)][static_cast<std::size_t>(c)].value); },
                         mask));

    const auto times = time_sets(ctx, std::max(3, std::min(ctx.opts.reps, 5)));
    const std::string f_times = fmt::format("times_s{}.csv", ctx.start);
    write_times(ctx.path(f_times), times);

    ctx.output(f_table);
    ctx.output(f_ss);
    ctx.output(f_times, true);
    for (const auto& t : times) {
        ctx.log << fmt::format("compare: {:16s} {:.4e} s per set (speed-up {:.2f})\n", t.name, t.stats.median,
                               times.front().stats.median / t.stats.median);
    }
}

void cmd_bench(Context& ctx) {
    const auto times = time_sets(ctx, std::max(3, ctx.opts.reps));
    write_times(ctx.path("bench.csv"), times);
    ctx.output("bench.csv", true);
    for (const auto& t : times) {
        ctx.log << fmt::format("bench: {:16s} median {:.4e} s [{:.4e}, {:.4e}]\n", t.name, t.stats.median, t.stats.min, t.stats.max);
    }
}

std::string manifest_name(const std::string& sub, const Context& ctx) {
    if (sub == "predict" || sub == "evaluate") return fmt::format("manifests/{}_{}.json", sub, tag(ctx.opts.method, ctx.start));
    if (sub == "compare") return fmt::format("manifests/compare_s{}.json", ctx.start);
    return fmt::format("manifests/{}.json", sub);
}

}  // namespace

int run(const std::string& subcommand, const RunOptions& options, std::ostream& log) {
    using Handler = void (*)(Context&);
    static const std::map<std::string, Handler> handlers = {
        {"simulate", cmd_simulate},   {"eigen", cmd_eigen},     {"rom-fit", cmd_rom_fit},   {"train-lstm", cmd_train_lstm},
        {"train-ffn", cmd_train_ffn}, {"train-gan", cmd_train_gan}, {"predict", cmd_predict}, {"evaluate", cmd_evaluate},
        {"compare", cmd_compare},     {"bench", cmd_bench}};
    const auto h = handlers.find(subcommand);
    if (h == handlers.end()) throw ValidationError("subcommand", fmt::format("unknown subcommand '{}'", subcommand));

    ExperimentConfig cfg = options.config_path.empty() ? default_config(options.profile.value_or(Profile::Paper))
                                                       : load_config(options.config_path, options.profile);
    if (options.seed) cfg.seed = *options.seed;
    cfg.validate();

    Context ctx{cfg, fs::path(options.out_dir.empty() ? cfg.output_dir : options.out_dir), options, log, {}, 0, 0};
    ctx.start = options.start_level.value_or(cfg.rollout.start_level);
    ctx.horizon = options.horizon.value_or(cfg.rollout.horizon);
    if (ctx.start < 0) throw ValidationError("start_level", "must be >= 0");
    if (ctx.horizon < 0) throw ValidationError("horizon", "must be >= 0");
    fs::create_directories(ctx.out / "manifests");
    save_resolved_config(cfg, ctx.path("resolved_config.json"));

    ctx.manifest.subcommand = subcommand;
    ctx.manifest.seed = cfg.seed;
    ctx.manifest.config = to_json(cfg);
    ctx.manifest.options = {{"method", options.method},
                            {"start_level", ctx.start},
                            {"horizon", ctx.horizon},
                            {"reps", options.reps},
                            {"force", options.force}};

    h->second(ctx);
    write_manifest(ctx.manifest, ctx.path(manifest_name(subcommand, ctx)));
    return 0;
}

ReproduceResult reproduce(const std::string& manifest_path, const std::string& scratch_dir, std::ostream& log) {
    const Manifest m = read_manifest(manifest_path);
    const fs::path source = fs::path(manifest_path).parent_path().parent_path();
    const fs::path scratch(scratch_dir);
    fs::create_directories(scratch);
    for (const auto& in : m.inputs) {
        const fs::path dst = scratch / in.path;
        fs::create_directories(dst.parent_path());
        fs::copy_file(source / in.path, dst, fs::copy_options::overwrite_existing);
    }
    const std::string cfg_path = (scratch / "reproduce_config.json").string();
    {
        std::ofstream out(cfg_path, std::ios::binary);
        out << m.config.dump(2) << '\n';
    }
    RunOptions o;
    o.config_path = cfg_path;
    o.out_dir = scratch.string();
    o.seed = m.seed;
    o.method = m.options.at("method").get<std::string>();
    o.start_level = m.options.at("start_level").get<int>();
    o.horizon = m.options.at("horizon").get<int>();
    o.reps = m.options.at("reps").get<int>();
    o.force = m.options.at("force").get<bool>();
    run(m.subcommand, o, log);

    ReproduceResult r;
    for (const auto& out : m.outputs) {
        if (out.is_volatile) {
            r.skipped_volatile.push_back(out.path);
            continue;
        }
        const fs::path p = scratch / out.path;
        if (fs::exists(p) && sha256_file(p.string()) == out.sha256) {
            r.matched.push_back(out.path);
        } else {
            r.mismatched.push_back(out.path);
        }
    }
    return r;
}

}  // namespace epitwin::io
