#pragma once

// Little-endian stream helpers shared by the checkpoint writers.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include <Eigen/Dense>

#include "gpcl/error.hpp"

namespace gpcl::io {

template <typename T>
void put(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    std::array<char, sizeof(T)> bytes;
    if (!in.read(bytes.data(), sizeof(T))) throw DataError("truncated checkpoint");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

inline void put_string(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
    const auto n = get<std::uint32_t>(in);
    if (n > (1u << 20)) throw DataError("implausible string length in checkpoint");
    std::string s(n, '\0');
    if (!in.read(s.data(), n)) throw DataError("truncated checkpoint");
    return s;
}

template <typename Derived>
void put_tensor(std::ostream& out, const Eigen::DenseBase<Derived>& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
        for (Eigen::Index r = 0; r < t.rows(); ++r) put<double>(out, t(r, c));
    }
}

// Reads a tensor into `t`, which must already have the expected shape.
template <typename Derived>
void get_tensor(std::istream& in, Eigen::DenseBase<Derived>& t, const std::string& what) {
    const auto rows = get<std::uint32_t>(in);
    const auto cols = get<std::uint32_t>(in);
    if (rows != static_cast<std::uint32_t>(t.rows()) || cols != static_cast<std::uint32_t>(t.cols())) {
        throw DataError("shape mismatch for " + what + ": file has " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", expected " + std::to_string(t.rows()) + "x" +
                        std::to_string(t.cols()));
    }
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
        for (Eigen::Index r = 0; r < t.rows(); ++r) t(r, c) = get<double>(in);
    }
}

} // namespace gpcl::io
