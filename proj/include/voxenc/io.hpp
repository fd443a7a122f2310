#pragma once

#include <Eigen/Core>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "voxenc/errors.hpp"

namespace voxenc {

// Raw tensor files: little-endian float32, row-major, no header.

namespace detail {

inline void byteswap_f32(std::vector<float>& buf) {
    for (float& f : buf) {
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        u = ((u & 0x000000ffu) << 24) | ((u & 0x0000ff00u) << 8) |
            ((u & 0x00ff0000u) >> 8) | ((u & 0xff000000u) >> 24);
        std::memcpy(&f, &u, 4);
    }
}

constexpr bool host_is_little = (std::endian::native == std::endian::little);

} // namespace detail

inline void write_f32(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw error("cannot open for writing: " + path.string());
    std::vector<float> buf(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            buf[k++] = static_cast<float>(m(i, j));
    if (!detail::host_is_little) detail::byteswap_f32(buf);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * 4));
    if (!out) throw error("write failed: " + path.string());
}

inline Eigen::MatrixXd read_f32(const std::filesystem::path& path,
                                Eigen::Index rows, Eigen::Index cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("missing tensor file: " + path.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::uint64_t>(in.tellg());
    const std::uint64_t expected = static_cast<std::uint64_t>(rows) * cols * 4;
    if (bytes != expected)
        throw integrity_error(path.string() + ": expected " + std::to_string(expected) +
                              " bytes (" + std::to_string(rows) + "x" + std::to_string(cols) +
                              " float32), found " + std::to_string(bytes));
    in.seekg(0);
    std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
    if (!in) throw error("read failed: " + path.string());
    if (!detail::host_is_little) detail::byteswap_f32(buf);
    Eigen::MatrixXd m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = buf[k++];
    return m;
}

/// Same format restricted to a single row-vector, used for per-voxel scores.
inline void write_f32_vector(const std::filesystem::path& path, const Eigen::VectorXd& v) {
    write_f32(path, v.transpose());
}

inline Eigen::VectorXd read_f32_vector(const std::filesystem::path& path, Eigen::Index n) {
    return read_f32(path, 1, n).row(0).transpose();
}

inline void write_u8(const std::filesystem::path& path, const std::vector<std::uint8_t>& v) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw error("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size()));
    if (!out) throw error("write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_u8(const std::filesystem::path& path, std::size_t n) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("missing mask file: " + path.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != n)
        throw integrity_error(path.string() + ": expected " + std::to_string(n) +
                              " bytes, found " + std::to_string(bytes));
    in.seekg(0);
    std::vector<std::uint8_t> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n));
    if (!in) throw error("read failed: " + path.string());
    return v;
}

} // namespace voxenc
