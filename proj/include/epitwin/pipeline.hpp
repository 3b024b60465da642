// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment subcommands over an artifact directory. Each subcommand reads
// and writes a fixed set of files and leaves a manifest under manifests/.

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "epitwin/config.hpp"

namespace epitwin::io {

const std::vector<std::string>& subcommands();
const std::vector<std::string>& methods();

/// A prerequisite file is missing; `producer` names the subcommand that
/// writes it.
class MissingArtifactError : public std::runtime_error {
public:
    MissingArtifactError(const std::string& path, std::string producer);
    const std::string& producer() const noexcept { return producer_; }

private:
    std::string producer_;
};

/// An input's hash differs from the one recorded by the step that used it.
class HashMismatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunOptions {
    std::string config_path;  ///< empty: defaults
    std::string out_dir;      ///< empty: config output_dir
    std::optional<std::uint64_t> seed;
    std::optional<Profile> profile;
    std::string method = "bdlstm-blue";
    std::optional<int> start_level;
    std::optional<int> horizon;
    int reps = 5;
    bool force = false;
};

/// Runs one subcommand; progress goes to `log`. Returns 0 on success and
/// throws on failure.
int run(const std::string& subcommand, const RunOptions& options, std::ostream& log);

/// Deterministic per-purpose seeds derived from the experiment seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose);

struct ReproduceResult {
    std::vector<std::string> matched;
    std::vector<std::string> mismatched;
    std::vector<std::string> skipped_volatile;
    bool ok() const { return mismatched.empty(); }
};

/// Re-runs the subcommand recorded in `manifest_path` into `scratch_dir`
/// (inputs are copied from the manifest's artifact directory) and compares
/// every output hash.
ReproduceResult reproduce(const std::string& manifest_path, const std::string& scratch_dir, std::ostream& log);

}  // namespace epitwin::io
