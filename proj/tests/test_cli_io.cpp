// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "epitwin/config.hpp"
#include "epitwin/errors.hpp"
#include "epitwin/gan.hpp"
#include "epitwin/lstm.hpp"
#include "epitwin/manifest.hpp"
#include "epitwin/persistence.hpp"
#include "epitwin/pipeline.hpp"
#include "epitwin/random.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace epitwin;
using namespace epitwin::io;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

// A 4x4 grid with a 2x2 home block, small enough to push through every stage.
const char* kSmallConfig = R"({
  "grid": {"nx": 4, "ny": 4, "nz": 1, "length": 40000,
           "region_map": [3,3,3,3, 3,2,2,3, 3,2,2,3, 3,3,3,3]},
  "solver": {"n_steps": 200},
  "rom": {"components": 6},
  "lstm": {"epochs": 2, "hidden": 4},
  "ffn": {"epochs": 2, "hidden": 8},
  "gan": {"components": 6, "latent": 8, "g_channels": 4, "g_mid": 3,
          "d_channels1": 2, "d_channels2": 3, "iterations": 3, "batch_size": 4},
  "rollout": {"start_level": 9, "second_start_level": 12, "horizon": 5,
              "latent_opt": {"max_steps": 10, "restarts": 1}},
  "seed": 5
})";

int cli(const std::string& args) {
    const std::string cmd = std::string(EPITWIN_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nn::WeightStore sample_store(Rng& rng) {
    nn::WeightStore s;
    s.kind = "sample";
    s.seed = 77;
    s.step = 12;
    s.meta = {{"window", "8"}, {"note", "x"}};
    nn::Tensor a({3, 4}), b({5});
    for (auto& v : a.data) v = rng.normal() * 1e-3;
    for (auto& v : b.data) v = rng.normal();
    b.data[0] = std::numeric_limits<double>::denorm_min();
    s.add("a", a);
    s.add("b", b, false);
    s.entry("a").m = a;
    s.entry("a").v = a;
    return s;
}

}  // namespace

// --- configuration ----------------------------------------------------------

TEST_CASE("empty config gives the documented defaults") {
    const ExperimentConfig c = parse_config("{}");
    CHECK(c.profile == Profile::Paper);
    CHECK(c.model.dt == 1000.0);
    CHECK(c.model.n_steps == 3880);
    CHECK(c.rom.stride == 10);
    CHECK(c.rom.components == 15);
    CHECK(c.gan.components == 15);
    CHECK(c.gan.rows == 9);
    CHECK(c.lstm.window == 8);
    CHECK(c.grid.nx == 10);
    CHECK(c.grid.cells() == 100);
    CHECK(to_json(c) == to_json(default_config()));

    const ExperimentConfig ci = parse_config(R"({"profile": "ci"})");
    CHECK(ci.lstm.epochs == 50);
    CHECK(ci.gan.iterations == 500);
    CHECK(parse_config("{}", Profile::Ci).gan.iterations == 500);
}

TEST_CASE("validation errors name the key") {
    try {
        parse_config(R"({"solver": {"dt": -1}})");
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(e.key() == "solver.dt");
    }
    try {
        parse_config(R"({"lstm": {"hiden": 3}})");
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(e.key() == "lstm.hiden");
    }
    try {
        parse_config(R"({"rollout": {"latent_opt": {"steps": 3}}})");
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(e.key() == "rollout.latent_opt.steps");
    }
    try {
        parse_config(R"({"grid": {"nx": 4, "ny": 4}})");
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(e.key() == "grid.region_map");
    }
    try {
        parse_config(R"({"gan": {"components": 12}})");
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(e.key() == "gan.components");
    }
    CHECK_THROWS_AS(parse_config(R"({"profile": "huge"})"), ValidationError);
}

TEST_CASE("parse errors report line and column") {
    try {
        parse_config("{\n  \"seed\": 3,\n  \"rom\": {,}\n}");
        FAIL("expected a parse error");
    } catch (const FormatError& e) {
        const std::string what = e.what();
        CHECK(what.find("line 3") != std::string::npos);
        CHECK(what.find("column") != std::string::npos);
    }
}

TEST_CASE("resolved config round trip") {
    const fs::path dir = test_support::scratch_dir("config_rt");
    const ExperimentConfig a = parse_config(kSmallConfig);
    save_resolved_config(a, (dir / "resolved.json").string());
    const ExperimentConfig b = load_config((dir / "resolved.json").string());
    CHECK(to_json(a) == to_json(b));
    save_resolved_config(b, (dir / "resolved2.json").string());
    CHECK(slurp(dir / "resolved.json") == slurp(dir / "resolved2.json"));
}

// --- tables and snapshots ------------------------------------------------------

TEST_CASE("decimal formatting round-trips every double") {
    Rng rng(1);
    for (int i = 0; i < 2000; ++i) {
        const double v = std::ldexp(rng.uniform(-1, 1), static_cast<int>(rng.below(600)) - 300);
        CHECK(parse_double(format_double(v)) == v);
    }
    for (double v : {0.0, -0.0, 1.0 / 3.0, std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::max()}) {
        CHECK(std::bit_cast<std::uint64_t>(parse_double(format_double(v))) == std::bit_cast<std::uint64_t>(v));
    }
    CHECK_THROWS_AS(parse_double("1.5x"), FormatError);
}

TEST_CASE("table round trip and ragged rows") {
    const fs::path dir = test_support::scratch_dir("table");
    Rng rng(2);
    const Eigen::MatrixXd m = test_support::random_matrix(7, 3, rng, -1e6, 1e6);
    write_table((dir / "t.csv").string(), {"a", "b", "c"}, m);
    const Table t = read_table((dir / "t.csv").string());
    CHECK(t.header == std::vector<std::string>{"a", "b", "c"});
    CHECK(t.values == m);
    CHECK(t.column("c") == 2);
    CHECK_THROWS_AS(t.column("d"), FormatError);
    spit(dir / "bad.csv", "a,b\n1,2\n3\n");
    CHECK_THROWS_AS(read_table((dir / "bad.csv").string()), FormatError);
}

TEST_CASE("snapshot round trip is bitwise") {
    const fs::path dir = test_support::scratch_dir("snapshots");
    const seirs::GridSpec g = seirs::GridSpec::cross_default();
    Rng rng(3);
    std::vector<seirs::StateField> series;
    for (int k = 0; k < 4; ++k) {
        seirs::StateField s(g.cells(), 1000.0 * k);
        for (auto& v : s.values) v = rng.uniform(0, 300) / 7.0;
        series.push_back(s);
    }
    save_snapshots(series, g, (dir / "s.csv").string());
    const SnapshotSeries back = load_snapshots((dir / "s.csv").string(), &g);
    REQUIRE(back.states.size() == 4);
    CHECK(back.nx == 10);
    CHECK(back.ny == 10);
    for (int k = 0; k < 4; ++k) {
        CHECK(back.states[static_cast<std::size_t>(k)].values == series[static_cast<std::size_t>(k)].values);
        CHECK(back.states[static_cast<std::size_t>(k)].time == series[static_cast<std::size_t>(k)].time);
    }
    const auto header = snapshot_header(g);
    CHECK(header.size() == 801);
    CHECK(header[0] == "time");
    CHECK(header[1] == "S_H_x0_y0");

    // Drop the last column from the header only.
    std::string text = slurp(dir / "s.csv");
    const auto eol = text.find('\n');
    const auto last_comma = text.rfind(',', eol);
    spit(dir / "short.csv", text.substr(0, last_comma) + text.substr(eol));
    try {
        load_snapshots((dir / "short.csv").string(), &g);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        const std::string what = e.what();
        CHECK(what.find("800") != std::string::npos);
        CHECK(what.find("801") != std::string::npos);
    }
    spit(dir / "noheader.csv", "x" + text.substr(4));
    CHECK_THROWS_AS(load_snapshots((dir / "noheader.csv").string()), FormatError);
}

// --- checkpoints ---------------------------------------------------------------

TEST_CASE("checkpoint round trip and integrity errors") {
    const fs::path dir = test_support::scratch_dir("checkpoint");
    Rng rng(4);
    const nn::WeightStore s = sample_store(rng);
    const std::string path = (dir / "s.eptw").string();
    save_checkpoint(s, path);
    const nn::WeightStore back = load_checkpoint(path);
    CHECK(back.same_values(s));
    CHECK(back.kind == "sample");
    CHECK(back.seed == 77);
    CHECK(back.step == 12);
    CHECK(back.meta == s.meta);
    CHECK(back.entry("a").m.data == s.entry("a").m.data);
    CHECK_FALSE(back.entry("b").trainable);

    const std::string bytes = slurp(path);
    std::string flipped = bytes;
    flipped[bytes.size() - 10] ^= 0x01;
    spit(dir / "flip.eptw", flipped);
    CHECK_THROWS_AS(load_checkpoint((dir / "flip.eptw").string()), ChecksumError);

    std::string magic = bytes;
    magic[0] = 'X';
    spit(dir / "magic.eptw", magic);
    CHECK_THROWS_AS(load_checkpoint((dir / "magic.eptw").string()), BadMagicError);

    std::string version = bytes;
    version[4] = 9;
    spit(dir / "version.eptw", version);
    CHECK_THROWS_AS(load_checkpoint((dir / "version.eptw").string()), VersionError);

    spit(dir / "trunc.eptw", bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_checkpoint((dir / "trunc.eptw").string()), FormatError);
}

TEST_CASE("a GAN container is rejected where an LSTM one is expected") {
    const fs::path dir = test_support::scratch_dir("layout");
    gan::GanHyper h;
    h.latent = 4;
    h.rows = 6;
    h.components = 6;
    h.g_channels = 2;
    h.g_mid = 2;
    const gan::GanModel g = gan::make_gan(h);
    save_checkpoint(g.gen, (dir / "gen.eptw").string());
    const auto lstm_ref = lstm::make_bdlstm(5, 6, 4, 0);
    const nn::WeightStore loaded = load_checkpoint((dir / "gen.eptw").string());
    CHECK_THROWS_AS(require_layout(loaded, lstm_ref.store), ValidationError);
    CHECK_NOTHROW(require_layout(loaded, g.gen));
    // Same names, different shape.
    CHECK_THROWS_AS(require_layout(lstm::make_bdlstm(5, 6, 5, 0).store, lstm_ref.store), ValidationError);
}

TEST_CASE("basis and blue stats survive the container") {
    Rng rng(5);
    rom::SnapshotMatrix snaps;
    snaps.data = test_support::random_matrix(30, 16, rng, 0.0, 10.0);
    snaps.cells = 2;
    snaps.stride = 1;
    const rom::RomBasis b = rom::fit_pca(snaps, 4, rom::Normalization::PerCompartment);
    const rom::RomBasis back = basis_from_store(basis_to_store(b));
    CHECK(back.mode == b.mode);
    CHECK(back.cells == b.cells);
    CHECK(back.basis == b.basis);
    CHECK(back.center == b.center);
    CHECK(back.scale_mean == b.scale_mean);
    CHECK(back.scale_std == b.scale_std);
    CHECK(back.singular_values == b.singular_values);
    CHECK(back.total_energy == b.total_energy);

    const Eigen::MatrixXd u = test_support::random_matrix(20, 5, rng), v = test_support::random_matrix(20, 2, rng);
    const assim::BlueStats s = assim::estimate_stats(u, v, 1e-8);
    const assim::BlueStats t = blue_from_store(blue_to_store(s));
    CHECK(t.u_mean == s.u_mean);
    CHECK(t.v_mean == s.v_mean);
    CHECK(t.c_uv == s.c_uv);
    CHECK(t.c == s.c);
    CHECK(t.ridge == s.ridge);
}

// --- manifests -------------------------------------------------------------------

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("manifest json round trip") {
    Manifest m;
    m.subcommand = "predict";
    m.seed = 42;
    m.options = {{"method", "ffn-blue"}};
    m.config = to_json(default_config(Profile::Ci));
    m.inputs.push_back({"snapshots.csv", sha256_hex("x"), false});
    m.outputs.push_back({"bench.csv", sha256_hex("y"), true});
    const Manifest back = Manifest::from_json(m.to_json());
    CHECK(back.to_json() == m.to_json());
    REQUIRE(back.find_output("bench.csv") != nullptr);
    CHECK(back.find_output("bench.csv")->is_volatile);
    CHECK(back.find_output("nope") == nullptr);
}

TEST_CASE("derived seeds are distinct per purpose and stable") {
    CHECK(derive_seed(1, 1) == derive_seed(1, 1));
    CHECK(derive_seed(1, 1) != derive_seed(1, 2));
    CHECK(derive_seed(1, 1) != derive_seed(2, 1));
}

// --- command line ------------------------------------------------------------------

TEST_CASE("command line: pipeline, error codes and reproduction") {
    const fs::path dir = test_support::scratch_dir("cli");
    spit(dir / "small.json", kSmallConfig);
    const std::string cfg = "--config " + (dir / "small.json").string() + " --out " + (dir / "out").string();

    CHECK(cli(cfg + " train-lstm") == 3);
    spit(dir / "bad.json", R"({"solver": {"dt": -1}})");
    CHECK(cli("--config " + (dir / "bad.json").string() + " --out " + (dir / "bad").string() + " simulate") == 2);
    CHECK(cli(cfg + " no-such-command") != 0);

    REQUIRE(cli(cfg + " simulate") == 0);
    REQUIRE(cli(cfg + " eigen") == 0);
    REQUIRE(cli(cfg + " rom-fit") == 0);
    REQUIRE(cli(cfg + " train-lstm") == 0);
    REQUIRE(cli(cfg + " predict --method bdlstm-blue") == 0);
    REQUIRE(cli(cfg + " evaluate --method bdlstm-blue") == 0);

    const fs::path out = dir / "out";
    const SnapshotSeries snaps = load_snapshots((out / "snapshots.csv").string());
    CHECK(snaps.states.size() == 201);
    const std::string eig = slurp(out / "eigen.txt");
    CHECK(eig.find("lambda0=") != std::string::npos);
    CHECK(eig.find("R0=") != std::string::npos);
    CHECK(eig.find("residual=") != std::string::npos);
    CHECK(std::count(eig.begin(), eig.end(), '\n') == 1);
    for (const char* m : {"simulate", "eigen", "rom-fit", "train-lstm", "predict_bdlstm-blue_s9", "evaluate_bdlstm-blue_s9"}) {
        CAPTURE(m);
        CHECK(fs::exists(out / "manifests" / (std::string(m) + ".json")));
    }
    const Manifest ev = read_manifest((out / "manifests/evaluate_bdlstm-blue_s9.json").string());
    CHECK_FALSE(ev.outputs.empty());
    for (const auto& o : ev.outputs) {
        CAPTURE(o.path);
        CHECK(sha256_file((out / o.path).string()) == o.sha256);
        if (o.path.ends_with(".csv")) CHECK_NOTHROW(read_text_table((out / o.path).string()));
    }

    // A changed prediction is refused unless forced.
    const Manifest pr = read_manifest((out / "manifests/predict_bdlstm-blue_s9.json").string());
    REQUIRE(pr.find_output("pred_bdlstm-blue_s9.csv") != nullptr);
    {
        Table t = read_table((out / "pred_bdlstm-blue_s9.csv").string());
        t.values(0, 1) += 1.0;
        write_table((out / "pred_bdlstm-blue_s9.csv").string(), t.header, t.values);
    }
    CHECK(cli(cfg + " evaluate --method bdlstm-blue") == 1);
    CHECK(cli(cfg + " evaluate --method bdlstm-blue --force") == 0);

    CHECK(cli("verify " + (out / "manifests/rom-fit.json").string() + " " + (dir / "scratch").string()) == 0);
    std::ostringstream log;
    const ReproduceResult r = reproduce((out / "manifests/simulate.json").string(), (dir / "scratch_sim").string(), log);
    CHECK(r.ok());
    CHECK(r.matched.size() == 1);
}
