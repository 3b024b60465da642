// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// Run manifests: what a subcommand read and wrote, with content hashes, so an
// artifact can be regenerated and compared bitwise.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace epitwin::io {

inline constexpr const char* kCodeVersion = "epitwin 0.1.0";

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);

struct ArtifactRecord {
    std::string path;  ///< relative to the output directory
    std::string sha256;
    /// Wall-clock measurements; not expected to reproduce bitwise.
    bool is_volatile = false;
};

struct Manifest {
    std::string subcommand;
    std::string code_version = kCodeVersion;
    std::uint64_t seed = 0;
    nlohmann::json options = nlohmann::json::object();
    nlohmann::json config = nlohmann::json::object();
    std::vector<ArtifactRecord> inputs;
    std::vector<ArtifactRecord> outputs;

    nlohmann::json to_json() const;
    static Manifest from_json(const nlohmann::json& j);
    const ArtifactRecord* find_output(const std::string& path) const;
};

void write_manifest(const Manifest& m, const std::string& path);
Manifest read_manifest(const std::string& path);

}  // namespace epitwin::io
