#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ppfnn/error.hpp"

namespace ppfnn {

// Binary container layout:
//   8-byte magic | u64 LE header length | JSON header | f64 LE blocks
// The header's "blocks" array lists {name, rows, cols} in file order; each
// block is stored column-major.

using NamedMatrix = std::pair<std::string, const Eigen::MatrixXd*>;

struct Container {
    nlohmann::json header;
    std::map<std::string, Eigen::MatrixXd> blocks;

    const Eigen::MatrixXd& block(const std::string& name) const {
        const auto it = blocks.find(name);
        if (it == blocks.end()) throw Error("container has no block '" + name + "'");
        return it->second;
    }
};

namespace detail {

template <typename T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        std::memcpy(&v, bytes, sizeof(T));
    }
    return v;
}

} // namespace detail

inline void write_container(const std::filesystem::path& path, std::string_view magic, nlohmann::json header,
                            const std::vector<NamedMatrix>& blocks) {
    if (magic.size() != 8) throw InvalidArgument("container magic must be 8 bytes");
    header["blocks"] = nlohmann::json::array();
    for (const auto& [name, m] : blocks)
        header["blocks"].push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing", path.string());
    out.write(magic.data(), 8);
    const std::uint64_t len = detail::to_little<std::uint64_t>(text.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::vector<double> buf;
    for (const auto& [name, m] : blocks) {
        buf.resize(static_cast<std::size_t>(m->size()));
        for (Eigen::Index i = 0; i < m->size(); ++i) buf[static_cast<std::size_t>(i)] = detail::to_little(m->data()[i]);
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed", path.string());
}

inline Container read_container(const std::filesystem::path& path, std::string_view magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading", path.string());
    const auto file_size = std::filesystem::file_size(path);

    char head[8];
    if (!in.read(head, 8) || std::string_view(head, 8) != magic)
        throw IoError("bad magic (expected " + std::string(magic) + ")", path.string());
    std::uint64_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) throw IoError("truncated header", path.string());
    len = detail::to_little(len);
    if (len > file_size - 16) throw IoError("header length exceeds file size", path.string());
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));

    Container c;
    try {
        c.header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("corrupt header: ") + e.what(), path.string());
    }
    std::uint64_t expected = 16 + len;
    for (const auto& b : c.header.at("blocks")) {
        const auto rows = b.at("rows").get<Eigen::Index>(), cols = b.at("cols").get<Eigen::Index>();
        if (rows < 0 || cols < 0) throw IoError("negative block shape", path.string());
        expected += static_cast<std::uint64_t>(rows * cols) * sizeof(double);
    }
    if (expected != file_size) throw IoError("file size does not match header", path.string());

    for (const auto& b : c.header.at("blocks")) {
        Eigen::MatrixXd m(b.at("rows").get<Eigen::Index>(), b.at("cols").get<Eigen::Index>());
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = detail::to_little(m.data()[i]);
        c.blocks.emplace(b.at("name").get<std::string>(), std::move(m));
    }
    if (!in) throw IoError("truncated data", path.string());
    c.header.erase("blocks");
    return c;
}

/// Writes a matrix as CSV with samples as rows, shortest round-trip formatting.
inline std::string matrix_to_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& column_names) {
    std::string out;
    for (std::size_t i = 0; i < column_names.size(); ++i) out += (i ? "," : "") + column_names[i];
    out += '\n';
    for (Eigen::Index s = 0; s < m.cols(); ++s) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            if (r) out += ',';
            out += nlohmann::json(m(r, s)).dump();
        }
        out += '\n';
    }
    return out;
}

} // namespace ppfnn
