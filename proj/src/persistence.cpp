// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/persistence.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>
#include <zlib.h>

namespace epitwin::io {

using nlohmann::json;

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError(fmt::format("not a number: '{}'", s));
    return v;
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(fmt::format("cannot read '{}'", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(fmt::format("cannot write '{}'", path));
    return out;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

/// Non-empty lines of a text file, with trailing '\r' removed.
std::vector<std::string_view> lines_of(const std::string& text) {
    std::vector<std::string_view> lines;
    std::string_view rest(text);
    while (!rest.empty()) {
        const std::size_t nl = rest.find('\n');
        std::string_view line = rest.substr(0, nl);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!line.empty()) lines.push_back(line);
        if (nl == std::string_view::npos) break;
        rest.remove_prefix(nl + 1);
    }
    return lines;
}

}  // namespace

int Table::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    throw FormatError(fmt::format("table has no column '{}'", name));
}

void write_table(const std::string& path, const std::vector<std::string>& header, const Eigen::MatrixXd& values) {
    if (static_cast<Eigen::Index>(header.size()) != values.cols()) {
        throw ShapeError(fmt::format("write_table: {} header names for {} columns", header.size(), values.cols()));
    }
    auto out = open_out(path);
    std::string line;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) line += ',';
        line += header[i];
    }
    out << line << '\n';
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        line.clear();
        for (Eigen::Index c = 0; c < values.cols(); ++c) {
            if (c) line += ',';
            line += format_double(values(r, c));
        }
        out << line << '\n';
    }
    if (!out) throw FormatError(fmt::format("write failed for '{}'", path));
}

Table read_table(const std::string& path) {
    const std::string text = read_file(path);
    const auto lines = lines_of(text);
    if (lines.empty()) throw FormatError(fmt::format("'{}': missing header row", path));
    Table t;
    for (auto name : split(lines[0], ',')) t.header.emplace_back(name);
    const auto cols = static_cast<Eigen::Index>(t.header.size());
    t.values.resize(static_cast<Eigen::Index>(lines.size()) - 1, cols);
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto cells = split(lines[r], ',');
        if (static_cast<Eigen::Index>(cells.size()) != cols) {
            throw FormatError(fmt::format("'{}' row {}: expected {} columns, got {}", path, r, cols, cells.size()));
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            try {
                t.values(static_cast<Eigen::Index>(r) - 1, c) = parse_double(cells[static_cast<std::size_t>(c)]);
            } catch (const FormatError& e) {
                throw FormatError(fmt::format("'{}' row {} column {}: {}", path, r, c, e.what()));
            }
        }
    }
    return t;
}

void write_text_table(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
    auto out = open_out(path);
    auto emit = [&](const std::vector<std::string>& row) {
        if (row.size() != header.size()) throw ShapeError("write_text_table: ragged row");
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << '\n';
    };
    emit(header);
    for (const auto& r : rows) emit(r);
}

std::vector<std::vector<std::string>> read_text_table(const std::string& path) {
    const std::string text = read_file(path);
    std::vector<std::vector<std::string>> rows;
    std::size_t width = 0;
    for (auto line : lines_of(text)) {
        std::vector<std::string> row;
        for (auto cell : split(line, ',')) row.emplace_back(cell);
        if (rows.empty()) width = row.size();
        if (row.size() != width) throw FormatError(fmt::format("'{}' row {}: expected {} columns, got {}", path, rows.size(), width, row.size()));
        rows.push_back(std::move(row));
    }
    return rows;
}

// -----------------------------------------------------------------------------

std::string snapshot_column(int field, int i, int j, int k, int nz) {
    const int c = field / seirs::kGroups, g = field % seirs::kGroups;
    std::string name = fmt::format("{}_{}_x{}_y{}", seirs::compartment_name(c), g == 0 ? "H" : "M", i, j);
    if (nz > 1) name += fmt::format("_z{}", k);
    return name;
}

std::vector<std::string> snapshot_header(const seirs::GridSpec& grid) {
    std::vector<std::string> h{"time"};
    for (int f = 0; f < seirs::kFields; ++f)
        for (int k = 0; k < grid.nz; ++k)
            for (int j = 0; j < grid.ny; ++j)
                for (int i = 0; i < grid.nx; ++i) h.push_back(snapshot_column(f, i, j, k, grid.nz));
    return h;
}

void save_snapshots(const std::vector<seirs::StateField>& series, const seirs::GridSpec& grid, const std::string& path) {
    const auto header = snapshot_header(grid);
    auto out = open_out(path);
    std::string line;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) line += ',';
        line += header[i];
    }
    out << line << '\n';
    for (const auto& s : series) {
        if (s.cells != grid.cells()) throw ShapeError("save_snapshots: state does not match the grid");
        line = format_double(s.time);
        for (double v : s.values) {
            line += ',';
            line += format_double(v);
        }
        out << line << '\n';
    }
    if (!out) throw FormatError(fmt::format("write failed for '{}'", path));
}

SnapshotSeries load_snapshots(const std::string& path, const seirs::GridSpec* expected) {
    const std::string text = read_file(path);
    const auto lines = lines_of(text);
    if (lines.empty()) throw FormatError(fmt::format("'{}': missing header row", path));
    const auto names = split(lines[0], ',');
    if (names.empty() || names[0] != "time") throw FormatError(fmt::format("'{}': malformed header, first column must be 'time'", path));
    if (expected) {
        const std::size_t want = 1 + static_cast<std::size_t>(seirs::kFields * expected->cells());
        if (names.size() != want) {
            throw FormatError(fmt::format("'{}': header has {} columns, expected {}", path, names.size(), want));
        }
    }
    if ((names.size() - 1) % seirs::kFields != 0 || names.size() == 1) {
        throw FormatError(fmt::format("'{}': malformed header, {} value columns is not a multiple of {}", path, names.size() - 1, seirs::kFields));
    }

    // Infer the grid extent from the first field's block, then check every name.
    SnapshotSeries out;
    const std::size_t cells = (names.size() - 1) / seirs::kFields;
    int max_i = -1, max_j = -1, max_k = 0;
    for (std::size_t c = 0; c < cells; ++c) {
        const std::string name(names[1 + c]);
        int i = -1, j = -1, k = 0;
        const auto xp = name.find("_x"), yp = name.find("_y"), zp = name.find("_z");
        if (xp == std::string::npos || yp == std::string::npos) throw FormatError(fmt::format("'{}': malformed header column '{}'", path, name));
        i = std::stoi(name.substr(xp + 2, yp - xp - 2));
        j = std::stoi(name.substr(yp + 2, zp == std::string::npos ? std::string::npos : zp - yp - 2));
        if (zp != std::string::npos) k = std::stoi(name.substr(zp + 2));
        max_i = std::max(max_i, i);
        max_j = std::max(max_j, j);
        max_k = std::max(max_k, k);
    }
    out.nx = max_i + 1;
    out.ny = max_j + 1;
    out.nz = max_k + 1;
    if (static_cast<std::size_t>(out.nx * out.ny * out.nz) != cells) {
        throw FormatError(fmt::format("'{}': malformed header, cell columns do not form a grid", path));
    }
    if (expected && (expected->nx != out.nx || expected->ny != out.ny || expected->nz != out.nz)) {
        throw FormatError(fmt::format("'{}': grid {}x{}x{} does not match the expected {}x{}x{}", path, out.nx, out.ny, out.nz,
                                      expected->nx, expected->ny, expected->nz));
    }
    seirs::GridSpec g = seirs::GridSpec::uniform(out.nx, out.ny, out.nz, 1.0, seirs::kRegionTravel);
    const auto want = snapshot_header(g);
    for (std::size_t c = 0; c < names.size(); ++c) {
        if (names[c] != want[c]) {
            throw FormatError(fmt::format("'{}': malformed header, column {} is '{}', expected '{}'", path, c, names[c], want[c]));
        }
    }

    out.states.reserve(lines.size() - 1);
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto vals = split(lines[r], ',');
        if (vals.size() != names.size()) {
            throw FormatError(fmt::format("'{}' row {}: expected {} columns, got {}", path, r, names.size(), vals.size()));
        }
        seirs::StateField s(static_cast<int>(cells), parse_double(vals[0]));
        for (std::size_t c = 0; c < s.values.size(); ++c) s.values[c] = parse_double(vals[c + 1]);
        out.states.push_back(std::move(s));
    }
    return out;
}

// -----------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'E', 'P', 'T', 'W'};

template <class T>
void put_le(std::string& buf, T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xffu));
}

template <class T>
T get_le(const std::string& buf, std::size_t pos) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    return static_cast<T>(v);
}

void put_f64(std::string& buf, double d) { put_le(buf, std::bit_cast<std::uint64_t>(d)); }
double get_f64(const std::string& buf, std::size_t pos) { return std::bit_cast<double>(get_le<std::uint64_t>(buf, pos)); }

std::uint32_t crc_of(const char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_checkpoint(const nn::WeightStore& store, const std::string& path) {
    std::string payload;
    json tensors = json::array();
    auto append = [&](const nn::Tensor& t) {
        const std::size_t offset = payload.size();
        for (double v : t.data) put_f64(payload, v);
        return offset;
    };
    for (const auto& name : store.names()) {
        const auto& e = store.entry(name);
        json tj = {{"name", name}, {"shape", e.value.shape}, {"trainable", e.trainable}, {"offset", append(e.value)}};
        if (e.m.size() == e.value.size() && e.v.size() == e.value.size() && e.value.size() > 0) {
            tj["m_offset"] = append(e.m);
            tj["v_offset"] = append(e.v);
        }
        tensors.push_back(std::move(tj));
    }
    const json header = {{"kind", store.kind},
                         {"seed", store.seed},
                         {"step", store.step},
                         {"meta", store.meta},
                         {"tensors", tensors},
                         {"payload_bytes", payload.size()}};
    const std::string htext = header.dump();

    std::string buf(kMagic, 4);
    put_le<std::uint32_t>(buf, kCheckpointVersion);
    put_le<std::uint64_t>(buf, htext.size());
    buf += htext;
    buf += payload;
    put_le<std::uint32_t>(buf, crc_of(payload.data(), payload.size()));

    auto out = open_out(path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw FormatError(fmt::format("write failed for '{}'", path));
}

nn::WeightStore load_checkpoint(const std::string& path) {
    const std::string buf = read_file(path);
    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) throw BadMagicError(fmt::format("'{}' is not an EPTW checkpoint", path));
    if (buf.size() < 16) throw FormatError(fmt::format("'{}': truncated container", path));
    const auto version = get_le<std::uint32_t>(buf, 4);
    if (version != kCheckpointVersion) {
        throw VersionError(fmt::format("'{}': container version {} (this build reads {})", path, version, kCheckpointVersion));
    }
    const auto hlen = get_le<std::uint64_t>(buf, 8);
    if (16 + hlen > buf.size()) throw FormatError(fmt::format("'{}': truncated header", path));
    json header;
    try {
        header = json::parse(buf.substr(16, hlen));
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("'{}': bad header ({})", path, e.what()));
    }
    const auto payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    const std::size_t pstart = 16 + hlen;
    if (pstart + payload_bytes + 4 != buf.size()) throw FormatError(fmt::format("'{}': size does not match the header", path));
    const auto stored_crc = get_le<std::uint32_t>(buf, pstart + payload_bytes);
    if (crc_of(buf.data() + pstart, payload_bytes) != stored_crc) throw ChecksumError(fmt::format("'{}': payload checksum mismatch", path));

    nn::WeightStore store;
    store.kind = header.at("kind").get<std::string>();
    store.seed = header.at("seed").get<std::uint64_t>();
    store.step = header.at("step").get<std::int64_t>();
    store.meta = header.at("meta").get<std::map<std::string, std::string>>();

    std::vector<std::pair<std::size_t, std::size_t>> spans;
    auto read_tensor = [&](std::vector<int> shape, std::size_t offset) {
        nn::Tensor t(std::move(shape));
        const std::size_t bytes = t.size() * 8;
        if (offset + bytes > payload_bytes) throw FormatError(fmt::format("'{}': tensor extends past the payload", path));
        spans.emplace_back(offset, offset + bytes);
        for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = get_f64(buf, pstart + offset + 8 * i);
        return t;
    };
    for (const auto& tj : header.at("tensors")) {
        const auto shape = tj.at("shape").get<std::vector<int>>();
        auto& value = store.add(tj.at("name").get<std::string>(), read_tensor(shape, tj.at("offset").get<std::size_t>()),
                                tj.at("trainable").get<bool>());
        (void)value;
        if (tj.contains("m_offset")) {
            auto& e = store.entry(tj.at("name").get<std::string>());
            e.m = read_tensor(shape, tj.at("m_offset").get<std::size_t>());
            e.v = read_tensor(shape, tj.at("v_offset").get<std::size_t>());
        }
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i) {
        if (spans[i].first < spans[i - 1].second) throw FormatError(fmt::format("'{}': overlapping tensor offsets", path));
    }
    return store;
}

void require_layout(const nn::WeightStore& store, const nn::WeightStore& reference) {
    for (const auto& name : reference.names()) {
        if (!store.contains(name)) {
            throw ValidationError("tensors", fmt::format("missing '{}' (expected a {} store, got {})", name, reference.kind, store.kind));
        }
        if (store.value(name).shape != reference.value(name).shape) {
            throw ValidationError("tensors", fmt::format("'{}' has shape {}, expected {}", name, nn::shape_string(store.value(name).shape),
                                                         nn::shape_string(reference.value(name).shape)));
        }
    }
    for (const auto& name : store.names()) {
        if (!reference.contains(name)) throw ValidationError("tensors", fmt::format("unexpected tensor '{}' for a {} store", name, reference.kind));
    }
}

// -----------------------------------------------------------------------------

namespace {

nn::Tensor vec_tensor(const Eigen::VectorXd& v) {
    nn::Tensor t({static_cast<int>(v.size())});
    for (Eigen::Index i = 0; i < v.size(); ++i) t.data[static_cast<std::size_t>(i)] = v[i];
    return t;
}

nn::Tensor mat_tensor(const Eigen::MatrixXd& m) {
    nn::Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    t.matrix() = m;
    return t;
}

Eigen::VectorXd tensor_vec(const nn::Tensor& t) {
    return Eigen::Map<const Eigen::VectorXd>(t.data.data(), static_cast<Eigen::Index>(t.size()));
}

Eigen::MatrixXd tensor_mat(const nn::Tensor& t) {
    if (t.rank() != 2) throw FormatError("expected a rank-2 tensor");
    return nn::ConstMatrixMap(t.data.data(), t.dim(0), t.dim(1));
}

}  // namespace

nn::WeightStore basis_to_store(const rom::RomBasis& b) {
    nn::WeightStore s;
    s.kind = "rom-basis";
    s.meta["normalization"] = rom::to_string(b.mode);
    s.meta["cells"] = std::to_string(b.cells);
    s.meta["total_energy"] = format_double(b.total_energy);
    s.add("scale_mean", vec_tensor(b.scale_mean), false);
    s.add("scale_std", vec_tensor(b.scale_std), false);
    s.add("center", vec_tensor(b.center), false);
    s.add("basis", mat_tensor(b.basis), false);
    s.add("singular_values", vec_tensor(b.singular_values), false);
    return s;
}

rom::RomBasis basis_from_store(const nn::WeightStore& s) {
    if (s.kind != "rom-basis") throw ValidationError("kind", fmt::format("expected a rom-basis container, got '{}'", s.kind));
    for (const char* name : {"scale_mean", "scale_std", "center", "basis", "singular_values"}) {
        if (!s.contains(name)) throw ValidationError("tensors", fmt::format("rom-basis container lacks '{}'", name));
    }
    rom::RomBasis b;
    b.mode = rom::normalization_from_string(s.meta.at("normalization"));
    b.cells = std::stoi(s.meta.at("cells"));
    b.total_energy = parse_double(s.meta.at("total_energy"));
    b.scale_mean = tensor_vec(s.value("scale_mean"));
    b.scale_std = tensor_vec(s.value("scale_std"));
    b.center = tensor_vec(s.value("center"));
    b.basis = tensor_mat(s.value("basis"));
    b.singular_values = tensor_vec(s.value("singular_values"));
    return b;
}

nn::WeightStore blue_to_store(const assim::BlueStats& st) {
    nn::WeightStore s;
    s.kind = "blue-stats";
    s.meta["ridge"] = format_double(st.ridge);
    s.add("u_mean", vec_tensor(st.u_mean), false);
    s.add("v_mean", vec_tensor(st.v_mean), false);
    s.add("c_uv", mat_tensor(st.c_uv), false);
    s.add("c", mat_tensor(st.c), false);
    return s;
}

assim::BlueStats blue_from_store(const nn::WeightStore& s) {
    if (s.kind != "blue-stats") throw ValidationError("kind", fmt::format("expected a blue-stats container, got '{}'", s.kind));
    for (const char* name : {"u_mean", "v_mean", "c_uv", "c"}) {
        if (!s.contains(name)) throw ValidationError("tensors", fmt::format("blue-stats container lacks '{}'", name));
    }
    return assim::BlueStats::from_moments(tensor_vec(s.value("u_mean")), tensor_vec(s.value("v_mean")), tensor_mat(s.value("c_uv")),
                                          tensor_mat(s.value("c")), parse_double(s.meta.at("ridge")));
}

}  // namespace epitwin::io
