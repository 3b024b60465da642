// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/manifest.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "epitwin/errors.hpp"

namespace epitwin::io {

using nlohmann::json;

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256: digest failed");
    }
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(fmt::format("cannot read '{}'", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

namespace {

json records_json(const std::vector<ArtifactRecord>& recs) {
    json a = json::array();
    for (const auto& r : recs) {
        json e = {{"path", r.path}, {"sha256", r.sha256}};
        if (r.is_volatile) e["volatile"] = true;
        a.push_back(std::move(e));
    }
    return a;
}

std::vector<ArtifactRecord> records_from(const json& a) {
    std::vector<ArtifactRecord> out;
    for (const auto& e : a) {
        out.push_back({e.at("path").get<std::string>(), e.at("sha256").get<std::string>(), e.value("volatile", false)});
    }
    return out;
}

}  // namespace

json Manifest::to_json() const {
    return {{"subcommand", subcommand},
            {"code_version", code_version},
            {"seed", seed},
            {"options", options},
            {"config", config},
            {"inputs", records_json(inputs)},
            {"outputs", records_json(outputs)}};
}

Manifest Manifest::from_json(const json& j) {
    Manifest m;
    try {
        m.subcommand = j.at("subcommand").get<std::string>();
        m.code_version = j.at("code_version").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.options = j.at("options");
        m.config = j.at("config");
        m.inputs = records_from(j.at("inputs"));
        m.outputs = records_from(j.at("outputs"));
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("malformed manifest: {}", e.what()));
    }
    return m;
}

const ArtifactRecord* Manifest::find_output(const std::string& path) const {
    for (const auto& r : outputs)
        if (r.path == path) return &r;
    return nullptr;
}

void write_manifest(const Manifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(fmt::format("cannot write '{}'", path));
    out << m.to_json().dump(2) << '\n';
}

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(fmt::format("cannot read manifest '{}'", path));
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("manifest '{}': {}", path, e.what()));
    }
    return Manifest::from_json(j);
}

}  // namespace epitwin::io
