// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: JSON in, fully resolved JSON out.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "epitwin/ffn.hpp"
#include "epitwin/gan.hpp"
#include "epitwin/lstm.hpp"
#include "epitwin/rom.hpp"
#include "epitwin/seirs.hpp"

namespace epitwin::io {

enum class Profile { Paper, Ci };
const char* to_string(Profile p);
Profile profile_from_string(const std::string& s);

struct RomConfig {
    int components = 15;
    int stride = 10;
    rom::Normalization lstm_normalization = rom::Normalization::PerCompartment;
    rom::Normalization gan_normalization = rom::Normalization::None;
};

struct RolloutConfig {
    int start_level = 9;
    int second_start_level = 200;
    /// Levels to predict; 0 runs to the end of the truth series.
    int horizon = 0;
    /// (x, y) cell index; negative picks the bottom-right home cell.
    std::array<int, 2> probe_cell{-1, -1};
    double ridge_factor = 1.0e-8;
    gan::LatentOptSettings latent_opt{};
};

struct ExperimentConfig {
    Profile profile = Profile::Paper;
    seirs::GridSpec grid = seirs::GridSpec::cross_default();
    seirs::ModelParams model = seirs::ModelParams::defaults();
    seirs::SolverSettings solver{};
    RomConfig rom{};
    lstm::BdlstmHyper lstm{};
    nn::FfnHyper ffn{};
    gan::GanHyper gan{};
    RolloutConfig rollout{};
    std::uint64_t seed = 1;
    std::string output_dir = "out";

    /// Throws ValidationError naming the offending key.
    void validate() const;
    /// Resolved probe cell (x, y).
    std::array<int, 2> probe() const;
};

/// Defaults for a profile; `ci` shrinks epochs, iterations and horizons.
ExperimentConfig default_config(Profile profile = Profile::Paper);

/// Parses JSON text over the profile defaults. The profile comes from
/// `profile` if set, else the document's "profile" key, else paper.
/// Parse errors report line/column; unknown keys are rejected with their
/// dotted path.
ExperimentConfig parse_config(const std::string& text, std::optional<Profile> profile = std::nullopt);
ExperimentConfig load_config(const std::string& path, std::optional<Profile> profile = std::nullopt);

nlohmann::json to_json(const ExperimentConfig& config);
/// Writes the resolved config; re-loading it gives an identical config.
void save_resolved_config(const ExperimentConfig& config, const std::string& path);

}  // namespace epitwin::io
