// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the experiment pipeline.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "epitwin/config.hpp"
#include "epitwin/errors.hpp"
#include "epitwin/pipeline.hpp"

namespace {

struct Flags {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    std::string profile;
    std::string method = "bdlstm-blue";
    int start_level = -1;
    int horizon = -1;
    int reps = 5;
    bool force = false;
};

epitwin::io::RunOptions to_options(const Flags& f, const CLI::App& app) {
    epitwin::io::RunOptions o;
    o.config_path = f.config;
    o.out_dir = f.out;
    if (app.count("--seed")) o.seed = f.seed;
    if (!f.profile.empty()) o.profile = epitwin::io::profile_from_string(f.profile);
    o.method = f.method;
    if (f.start_level >= 0) o.start_level = f.start_level;
    if (f.horizon >= 0) o.horizon = f.horizon;
    o.reps = f.reps;
    o.force = f.force;
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"epitwin: spatial SEIRS solver and surrogate forecasting pipeline"};
    app.require_subcommand(1);
    Flags flags;
    app.add_option("--config", flags.config, "JSON config file (defaults when omitted)");
    app.add_option("--out", flags.out, "artifact directory (overrides output_dir)");
    app.add_option("--seed", flags.seed, "experiment seed (overrides the config)");
    app.add_option("--profile", flags.profile, "defaults profile")->check(CLI::IsMember({"paper", "ci"}));

    std::string selected;
    for (const auto& name : epitwin::io::subcommands()) {
        CLI::App* sub = app.add_subcommand(name);
        if (name == "predict" || name == "evaluate") {
            sub->add_option("--method", flags.method, "surrogate")->check(CLI::IsMember(epitwin::io::methods()));
        }
        if (name == "predict" || name == "evaluate" || name == "compare" || name == "bench") {
            sub->add_option("--start-level", flags.start_level, "first predicted level");
        }
        if (name == "predict") sub->add_option("--horizon", flags.horizon, "levels to predict (0: to the end)");
        if (name == "evaluate") sub->add_flag("--force", flags.force, "accept inputs whose hashes changed");
        if (name == "compare" || name == "bench") sub->add_option("--reps", flags.reps, "timing repetitions (>= 3)");
        sub->callback([&selected, name] { selected = name; });
    }
    std::string manifest, scratch;
    CLI::App* verify = app.add_subcommand("verify", "re-run a manifest into a scratch directory and compare hashes");
    verify->add_option("manifest", manifest)->required();
    verify->add_option("scratch", scratch)->required();
    verify->callback([&selected] { selected = "verify"; });

    CLI11_PARSE(app, argc, argv);

    try {
        if (selected == "verify") {
            const auto r = epitwin::io::reproduce(manifest, scratch, std::cerr);
            for (const auto& p : r.matched) std::cout << "match     " << p << '\n';
            for (const auto& p : r.skipped_volatile) std::cout << "volatile  " << p << '\n';
            for (const auto& p : r.mismatched) std::cout << "MISMATCH  " << p << '\n';
            return r.ok() ? 0 : 1;
        }
        return epitwin::io::run(selected, to_options(flags, app), std::cout);
    } catch (const epitwin::io::MissingArtifactError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const epitwin::ValidationError& e) {
        std::cerr << "invalid setting " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
