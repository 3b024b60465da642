// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats: CSV tables and snapshots, and the "EPTW" binary
// checkpoint container for weight stores.
//
// Container layout (all integers little-endian):
//   "EPTW" | u32 version | u64 header bytes | JSON header | f64 payload | u32 CRC32(payload)
// The header lists every tensor with its shape and byte offsets into the
// payload.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epitwin/assimilation.hpp"
#include "epitwin/errors.hpp"
#include "epitwin/rom.hpp"
#include "epitwin/seirs.hpp"
#include "epitwin/weights.hpp"

namespace epitwin::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};
class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};
class ChecksumError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Shortest decimal string that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

// --- tables -----------------------------------------------------------------

struct Table {
    std::vector<std::string> header;
    Eigen::MatrixXd values;

    /// Column index by name; throws FormatError if absent.
    int column(const std::string& name) const;
};

void write_table(const std::string& path, const std::vector<std::string>& header, const Eigen::MatrixXd& values);
/// Throws FormatError on ragged rows or unparsable cells.
Table read_table(const std::string& path);

/// Writes rows of mixed text; used for labelled reports.
void write_text_table(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows);
std::vector<std::vector<std::string>> read_text_table(const std::string& path);

// --- snapshots ----------------------------------------------------------------

/// "S_H_x3_y7" (plus "_z<k>" when nz > 1).
std::string snapshot_column(int field, int i, int j, int k, int nz);
std::vector<std::string> snapshot_header(const seirs::GridSpec& grid);

void save_snapshots(const std::vector<seirs::StateField>& series, const seirs::GridSpec& grid, const std::string& path);

struct SnapshotSeries {
    int nx = 0;
    int ny = 0;
    int nz = 0;
    std::vector<seirs::StateField> states;
};

/// With `expected`, the column count and names must match that grid.
SnapshotSeries load_snapshots(const std::string& path, const seirs::GridSpec* expected = nullptr);

// --- checkpoints --------------------------------------------------------------

void save_checkpoint(const nn::WeightStore& store, const std::string& path);
/// Verifies magic, version and checksum (each with its own error type).
nn::WeightStore load_checkpoint(const std::string& path);

/// Same tensor names and shapes as `reference`; throws ValidationError naming
/// the first missing or unexpected tensor.
void require_layout(const nn::WeightStore& store, const nn::WeightStore& reference);

nn::WeightStore basis_to_store(const rom::RomBasis& basis);
rom::RomBasis basis_from_store(const nn::WeightStore& store);

nn::WeightStore blue_to_store(const assim::BlueStats& stats);
assim::BlueStats blue_from_store(const nn::WeightStore& store);

}  // namespace epitwin::io
