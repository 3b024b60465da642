// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "epitwin/errors.hpp"

namespace epitwin::io {

using nlohmann::json;

const char* to_string(Profile p) { return p == Profile::Ci ? "ci" : "paper"; }

Profile profile_from_string(const std::string& s) {
    if (s == "paper") return Profile::Paper;
    if (s == "ci") return Profile::Ci;
    throw ValidationError("profile", fmt::format("unknown profile '{}' (expected paper or ci)", s));
}

ExperimentConfig default_config(Profile profile) {
    ExperimentConfig c;
    c.profile = profile;
    c.gan.components = c.rom.components;
    if (profile == Profile::Ci) {
        c.lstm.epochs = 50;
        c.ffn.epochs = 50;
        c.gan.iterations = 500;
        c.rollout.horizon = 100;
    }
    return c;
}

namespace {

/// Walks one JSON object, recording which keys were consumed so leftovers
/// can be reported as unknown.
class Section {
public:
    Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) throw ValidationError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) {
        seen_.insert(key);
        return node_.contains(key);
    }

    template <class T>
    void get(const std::string& key, T& out) {
        if (!has(key)) return;
        try {
            out = node_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ValidationError(key_path(key), fmt::format("wrong type ({})", e.what()));
        }
    }

    Section child(const std::string& key) {
        static const json empty = json::object();
        return Section(has(key) ? node_.at(key) : empty, key_path(key));
    }

    void finish() const {
        for (auto it = node_.begin(); it != node_.end(); ++it) {
            if (!seen_.count(it.key())) throw ValidationError(key_path(it.key()), "unknown key");
        }
    }

private:
    const json& node_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_optim(Section& s, nn::OptimConfig& o) {
    if (s.has("optimizer")) {
        std::string name;
        s.get("optimizer", name);
        try {
            o.algorithm = nn::algorithm_from_string(name);
        } catch (const std::exception& e) {
            throw ValidationError(s.key_path("optimizer"), e.what());
        }
    }
    s.get("learning_rate", o.learning_rate);
    s.get("beta1", o.beta1);
    s.get("beta2", o.beta2);
    s.get("epsilon", o.epsilon);
}

json optim_json(const nn::OptimConfig& o) {
    return {{"optimizer", nn::to_string(o.algorithm)},
            {"learning_rate", o.learning_rate},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"epsilon", o.epsilon}};
}

rom::Normalization read_norm(Section& s, const std::string& key, rom::Normalization fallback) {
    if (!s.has(key)) return fallback;
    std::string v;
    s.get(key, v);
    try {
        return rom::normalization_from_string(v);
    } catch (const std::exception& e) {
        throw ValidationError(s.key_path(key), e.what());
    }
}

void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ValidationError(key, what);
}

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

}  // namespace

void ExperimentConfig::validate() const {
    require(grid.nx >= 1 && grid.ny >= 1 && grid.nz >= 1, "grid.nx", "grid dimensions must be >= 1");
    require(positive(grid.length), "grid.length", "must be positive");
    try {
        grid.validate();
    } catch (const DomainError& e) {
        throw ValidationError("grid.region_map", e.what());
    }
    require(positive(model.dt), "solver.dt", "must be positive");
    require(model.n_steps >= 1, "solver.n_steps", "must be >= 1");
    require(solver.picard_max >= 1 && solver.fbgs_max >= 1 && solver.block_max >= 1 && solver.eigen_max >= 1, "solver",
            "iteration limits must be >= 1");
    require(positive(solver.picard_tol) && positive(solver.fbgs_tol) && positive(solver.block_tol) && positive(solver.eigen_tol),
            "solver", "tolerances must be positive");
    try {
        model.validate();
    } catch (const DomainError& e) {
        throw ValidationError("model", e.what());
    }

    require(rom.components >= 1, "rom.components", "must be >= 1");
    require(rom.stride >= 1, "rom.stride", "must be >= 1");
    const int levels = (model.n_steps + 1 + rom.stride - 1) / rom.stride;
    require(rom.components <= std::min(levels, seirs::kFields * grid.cells()), "rom.components",
            fmt::format("must not exceed the snapshot rank bound {}", std::min(levels, seirs::kFields * grid.cells())));

    auto check_net = [&](const std::string& prefix, int window, int hidden, int epochs, int batch, double frac, const nn::OptimConfig& o) {
        require(window >= 1, prefix + ".window", "must be >= 1");
        require(hidden >= 1, prefix + ".hidden", "must be >= 1");
        require(epochs >= 0, prefix + ".epochs", "must be >= 0");
        require(batch >= 1, prefix + ".batch_size", "must be >= 1");
        require(frac > 0.0 && frac < 1.0, prefix + ".train_fraction", "must lie in (0, 1)");
        require(positive(o.learning_rate), prefix + ".learning_rate", "must be positive");
        require(o.beta1 >= 0.0 && o.beta1 < 1.0, prefix + ".beta1", "must lie in [0, 1)");
        require(o.beta2 >= 0.0 && o.beta2 < 1.0, prefix + ".beta2", "must lie in [0, 1)");
        require(positive(o.epsilon), prefix + ".epsilon", "must be positive");
    };
    check_net("lstm", lstm.window, lstm.hidden, lstm.epochs, lstm.batch_size, lstm.train_fraction, lstm.optim);
    require(lstm.dropout >= 0.0 && lstm.dropout < 1.0, "lstm.dropout", "must lie in [0, 1)");
    require(lstm.scale_lo < lstm.scale_hi, "lstm.scale_lo", "must be below lstm.scale_hi");
    check_net("ffn", ffn.window, ffn.hidden, ffn.epochs, ffn.batch_size, ffn.train_fraction, ffn.optim);
    require(ffn.hidden_layers >= 1, "ffn.hidden_layers", "must be >= 1");

    require(gan.components == rom.components, "gan.components", "must equal rom.components");
    try {
        gan.validate();
    } catch (const std::exception& e) {
        throw ValidationError("gan", e.what());
    }

    const int window = std::max({lstm.window, ffn.window, gan.rows - 1});
    require(rollout.start_level >= window, "rollout.start_level", fmt::format("must be >= {} (longest seed window)", window));
    require(rollout.start_level < levels, "rollout.start_level", fmt::format("must be < {} levels", levels));
    require(rollout.second_start_level >= window && rollout.second_start_level < levels, "rollout.second_start_level",
            fmt::format("must lie in [{}, {})", window, levels));
    require(rollout.horizon >= 0, "rollout.horizon", "must be >= 0");
    require(positive(rollout.ridge_factor), "rollout.ridge_factor", "must be positive");
    const auto& lo = rollout.latent_opt;
    require(positive(lo.learning_rate), "rollout.latent_opt.learning_rate", "must be positive");
    require(lo.max_steps >= 1, "rollout.latent_opt.max_steps", "must be >= 1");
    require(lo.patience >= 1, "rollout.latent_opt.patience", "must be >= 1");
    require(lo.rel_tol >= 0.0, "rollout.latent_opt.rel_tol", "must be >= 0");
    require(lo.restarts >= 1, "rollout.latent_opt.restarts", "must be >= 1");
    const auto p = probe();
    require(p[0] >= 0 && p[0] < grid.nx && p[1] >= 0 && p[1] < grid.ny, "rollout.probe_cell", "outside the grid");
    require(!output_dir.empty(), "output_dir", "must not be empty");
}

std::array<int, 2> ExperimentConfig::probe() const {
    if (rollout.probe_cell[0] >= 0 && rollout.probe_cell[1] >= 0) return rollout.probe_cell;
    // Bottom-right home cell: largest x, then smallest y.
    std::array<int, 2> best{-1, -1};
    for (int j = 0; j < grid.ny; ++j) {
        for (int i = 0; i < grid.nx; ++i) {
            if (grid.region(grid.cell_index(i, j)) != seirs::kRegionHome) continue;
            if (i > best[0] || (i == best[0] && j < best[1])) best = {i, j};
        }
    }
    return best;
}

ExperimentConfig parse_config(const std::string& text, std::optional<Profile> profile) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t pos = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        const std::size_t line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
        const std::size_t nl = text.rfind('\n', pos == 0 ? 0 : pos - 1);
        const std::size_t column = nl == std::string::npos ? pos + 1 : pos - nl;
        throw FormatError(fmt::format("config parse error at line {}, column {}: {}", line, column, e.what()));
    }

    Section root(doc, "");
    if (root.has("profile")) {
        std::string name;
        root.get("profile", name);
        const Profile file_profile = profile_from_string(name);
        if (!profile) profile = file_profile;
    }
    ExperimentConfig c = default_config(profile.value_or(Profile::Paper));

    {
        Section g = root.child("grid");
        g.get("nx", c.grid.nx);
        g.get("ny", c.grid.ny);
        g.get("nz", c.grid.nz);
        g.get("length", c.grid.length);
        if (g.has("region_map")) {
            g.get("region_map", c.grid.region_map);
        } else if (c.grid.nx != 10 || c.grid.ny != 10 || c.grid.nz != 1) {
            throw ValidationError("grid.region_map", "required for grids other than 10x10x1");
        }
        g.finish();
    }

    c.model = seirs::ModelParams::defaults(c.grid.length);
    {
        Section m = root.child("model");
        m.get("t_one_day", c.model.t_one_day);
        m.get("sigma", c.model.sigma);
        m.get("infection_duration", c.model.infection_duration);
        m.get("r0_group", c.model.r0_group);
        m.get("immunity_loss", c.model.immunity_loss);
        m.get("birth", c.model.birth);
        m.get("death", c.model.death);
        m.get("k_transient", c.model.k_transient);
        m.get("k_eigen", c.model.k_eigen);
        m.get("lambda_hh_home", c.model.lambda_hh_home);
        m.get("home_aim_base", c.model.home_aim_base);
        m.get("home_aim_swing", c.model.home_aim_swing);
        m.get("home_exit_factor", c.model.home_exit_factor);
        m.get("mobile_hold_rate", c.model.mobile_hold_rate);
        m.get("r_ratio", c.model.r_ratio);
        m.get("epsilon", c.model.epsilon);
        m.get("eigen_home_region", c.model.eigen_home_region);
        m.finish();
    }
    {
        Section s = root.child("solver");
        s.get("dt", c.model.dt);
        s.get("n_steps", c.model.n_steps);
        s.get("picard_tol", c.solver.picard_tol);
        s.get("picard_max", c.solver.picard_max);
        s.get("fbgs_tol", c.solver.fbgs_tol);
        s.get("fbgs_max", c.solver.fbgs_max);
        s.get("block_tol", c.solver.block_tol);
        s.get("block_max", c.solver.block_max);
        s.get("eigen_tol", c.solver.eigen_tol);
        s.get("eigen_max", c.solver.eigen_max);
        s.finish();
    }
    {
        Section r = root.child("rom");
        r.get("components", c.rom.components);
        r.get("stride", c.rom.stride);
        c.rom.lstm_normalization = read_norm(r, "lstm_normalization", c.rom.lstm_normalization);
        c.rom.gan_normalization = read_norm(r, "gan_normalization", c.rom.gan_normalization);
        r.finish();
    }
    {
        Section l = root.child("lstm");
        l.get("window", c.lstm.window);
        l.get("hidden", c.lstm.hidden);
        l.get("dropout", c.lstm.dropout);
        l.get("epochs", c.lstm.epochs);
        l.get("batch_size", c.lstm.batch_size);
        l.get("train_fraction", c.lstm.train_fraction);
        l.get("scale_lo", c.lstm.scale_lo);
        l.get("scale_hi", c.lstm.scale_hi);
        read_optim(l, c.lstm.optim);
        l.finish();
    }
    {
        Section f = root.child("ffn");
        f.get("window", c.ffn.window);
        f.get("hidden", c.ffn.hidden);
        f.get("hidden_layers", c.ffn.hidden_layers);
        f.get("epochs", c.ffn.epochs);
        f.get("batch_size", c.ffn.batch_size);
        f.get("train_fraction", c.ffn.train_fraction);
        read_optim(f, c.ffn.optim);
        f.finish();
    }
    c.gan.components = c.rom.components;
    {
        Section g = root.child("gan");
        g.get("latent", c.gan.latent);
        g.get("rows", c.gan.rows);
        g.get("components", c.gan.components);
        g.get("g_channels", c.gan.g_channels);
        g.get("g_mid", c.gan.g_mid);
        g.get("d_channels1", c.gan.d_channels1);
        g.get("d_channels2", c.gan.d_channels2);
        g.get("iterations", c.gan.iterations);
        g.get("batch_size", c.gan.batch_size);
        g.get("dropout", c.gan.dropout);
        g.get("bn_eps", c.gan.bn_eps);
        g.get("bn_momentum", c.gan.bn_momentum);
        read_optim(g, c.gan.optim);
        g.finish();
    }
    {
        Section r = root.child("rollout");
        r.get("start_level", c.rollout.start_level);
        r.get("second_start_level", c.rollout.second_start_level);
        r.get("horizon", c.rollout.horizon);
        r.get("probe_cell", c.rollout.probe_cell);
        r.get("ridge_factor", c.rollout.ridge_factor);
        Section o = r.child("latent_opt");
        o.get("learning_rate", c.rollout.latent_opt.learning_rate);
        o.get("max_steps", c.rollout.latent_opt.max_steps);
        o.get("patience", c.rollout.latent_opt.patience);
        o.get("rel_tol", c.rollout.latent_opt.rel_tol);
        o.get("restarts", c.rollout.latent_opt.restarts);
        o.finish();
        r.finish();
    }
    root.get("seed", c.seed);
    root.get("output_dir", c.output_dir);
    root.finish();

    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path, std::optional<Profile> profile) {
    std::ifstream in(path);
    if (!in) throw FormatError(fmt::format("cannot read config '{}'", path));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), profile);
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["profile"] = to_string(c.profile);
    j["grid"] = {{"nx", c.grid.nx}, {"ny", c.grid.ny}, {"nz", c.grid.nz}, {"length", c.grid.length}, {"region_map", c.grid.region_map}};
    const auto& m = c.model;
    j["model"] = {{"t_one_day", m.t_one_day},
                  {"sigma", m.sigma},
                  {"infection_duration", m.infection_duration},
                  {"r0_group", m.r0_group},
                  {"immunity_loss", m.immunity_loss},
                  {"birth", m.birth},
                  {"death", m.death},
                  {"k_transient", m.k_transient},
                  {"k_eigen", m.k_eigen},
                  {"lambda_hh_home", m.lambda_hh_home},
                  {"home_aim_base", m.home_aim_base},
                  {"home_aim_swing", m.home_aim_swing},
                  {"home_exit_factor", m.home_exit_factor},
                  {"mobile_hold_rate", m.mobile_hold_rate},
                  {"r_ratio", m.r_ratio},
                  {"epsilon", m.epsilon},
                  {"eigen_home_region", m.eigen_home_region}};
    const auto& s = c.solver;
    j["solver"] = {{"dt", m.dt},
                   {"n_steps", m.n_steps},
                   {"picard_tol", s.picard_tol},
                   {"picard_max", s.picard_max},
                   {"fbgs_tol", s.fbgs_tol},
                   {"fbgs_max", s.fbgs_max},
                   {"block_tol", s.block_tol},
                   {"block_max", s.block_max},
                   {"eigen_tol", s.eigen_tol},
                   {"eigen_max", s.eigen_max}};
    j["rom"] = {{"components", c.rom.components},
                {"stride", c.rom.stride},
                {"lstm_normalization", rom::to_string(c.rom.lstm_normalization)},
                {"gan_normalization", rom::to_string(c.rom.gan_normalization)}};
    json lstm = {{"window", c.lstm.window},         {"hidden", c.lstm.hidden},
                 {"dropout", c.lstm.dropout},       {"epochs", c.lstm.epochs},
                 {"batch_size", c.lstm.batch_size}, {"train_fraction", c.lstm.train_fraction},
                 {"scale_lo", c.lstm.scale_lo},     {"scale_hi", c.lstm.scale_hi}};
    lstm.update(optim_json(c.lstm.optim));
    j["lstm"] = lstm;
    json ffn = {{"window", c.ffn.window},         {"hidden", c.ffn.hidden},
                {"hidden_layers", c.ffn.hidden_layers}, {"epochs", c.ffn.epochs},
                {"batch_size", c.ffn.batch_size}, {"train_fraction", c.ffn.train_fraction}};
    ffn.update(optim_json(c.ffn.optim));
    j["ffn"] = ffn;
    json gan = {{"latent", c.gan.latent},          {"rows", c.gan.rows},
                {"components", c.gan.components},  {"g_channels", c.gan.g_channels},
                {"g_mid", c.gan.g_mid},            {"d_channels1", c.gan.d_channels1},
                {"d_channels2", c.gan.d_channels2}, {"iterations", c.gan.iterations},
                {"batch_size", c.gan.batch_size},  {"dropout", c.gan.dropout},
                {"bn_eps", c.gan.bn_eps},          {"bn_momentum", c.gan.bn_momentum}};
    gan.update(optim_json(c.gan.optim));
    j["gan"] = gan;
    const auto& lo = c.rollout.latent_opt;
    j["rollout"] = {{"start_level", c.rollout.start_level},
                    {"second_start_level", c.rollout.second_start_level},
                    {"horizon", c.rollout.horizon},
                    {"probe_cell", c.rollout.probe_cell},
                    {"ridge_factor", c.rollout.ridge_factor},
                    {"latent_opt",
                     {{"learning_rate", lo.learning_rate},
                      {"max_steps", lo.max_steps},
                      {"patience", lo.patience},
                      {"rel_tol", lo.rel_tol},
                      {"restarts", lo.restarts}}}};
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    return j;
}

void save_resolved_config(const ExperimentConfig& config, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(fmt::format("cannot write '{}'", path));
    out << to_json(config).dump(2) << '\n';
}

}  // namespace epitwin::io
