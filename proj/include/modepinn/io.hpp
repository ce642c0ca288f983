// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary primitives and the flat Matrix blob layout used by
// checkpoint and field files: two 64-bit dims followed by row-major doubles.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "linalg.hpp"

namespace modepinn {

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("read_u64: unexpected end of stream");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_f64(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    write_u64(os, v);
}

inline double read_f64(std::istream& is) {
    std::uint64_t v = read_u64(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

inline void write_f64_span(std::ostream& os, std::span<const double> xs) {
    for (double x : xs) write_f64(os, x);
}

inline void read_f64_span(std::istream& is, std::span<double> xs) {
    for (double& x : xs) x = read_f64(is);
}

/// Matrix blob: rows, cols (u64 LE), then row-major 64-bit floats.
inline void write_matrix(std::ostream& os, const Matrix& m) {
    write_u64(os, static_cast<std::uint64_t>(m.rows));
    write_u64(os, static_cast<std::uint64_t>(m.cols));
    write_f64_span(os, m.data);
}

inline Matrix read_matrix(std::istream& is) {
    const auto rows = static_cast<int>(read_u64(is));
    const auto cols = static_cast<int>(read_u64(is));
    if (rows < 0 || cols < 0 || static_cast<long long>(rows) * cols > (1LL << 32))
        throw std::runtime_error("read_matrix: implausible dimensions");
    Matrix m(rows, cols);
    read_f64_span(is, m.data);
    return m;
}

/// Vector blob: stored as an n x 1 matrix.
inline void write_vector(std::ostream& os, std::span<const double> v) {
    write_u64(os, v.size());
    write_u64(os, 1);
    write_f64_span(os, v);
}

inline std::vector<double> read_vector(std::istream& is) {
    Matrix m = read_matrix(is);
    if (m.cols != 1) throw std::runtime_error("read_vector: expected column blob");
    return std::move(m.data);
}

/// Fixed-width float formatting for CSV output; round-trips doubles exactly.
inline std::string fmt_g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace modepinn
