#pragma once

// CSV and binary dumps of trajectories.
//
// CSV columns: t, comp-or-j, i, value. For states the second column is the
// row j; for controls it is the side (0 = bottom, 1 = top). Values use %.17g
// so a file reproduces the doubles exactly.
//
// FieldFile layout (native little-endian):
//   char[8]  "VTFIELD1"
//   uint32   kind (1 = state, 2 = boundary)
//   int32    nx, ny, nt
//   double   L, T, kappa
//   uint64   grid hash (FNV-1a over the nine fields above, as bytes)
//   uint64   value count
//   double[] values, time-major, same layout as the in-memory trajectory

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "venttsel/grid.hpp"

namespace venttsel {

namespace detail {

inline void put_row(std::string& out, double t, int comp, int i, double v)
{
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.17g,%d,%d,%.17g\n", t, comp, i, v);
    out += buf;
}

inline void write_text(const std::string& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << text;
    if (!f) throw std::runtime_error("write to " + path + " failed");
}

}  // namespace detail

inline std::string state_csv(const StateTrajectory& y)
{
    const Grid& g = y.grid();
    std::string out = "t,j,i,value\n";
    for (int n = 0; n <= g.nt(); ++n)
        for (int j = 0; j < g.ny(); ++j)
            for (int i = 0; i < g.nx(); ++i) detail::put_row(out, g.t(n), j, i, y(n, j, i));
    return out;
}

inline std::string control_csv(const BoundaryTrajectory& u)
{
    const Grid& g = u.grid();
    std::string out = "t,side,i,value\n";
    for (int n = 0; n <= g.nt(); ++n)
        for (Side s : kSides)
            for (int i = 0; i < g.nx(); ++i) detail::put_row(out, g.t(n), static_cast<int>(s), i, u(n, s, i));
    return out;
}

inline void write_state_csv(const std::string& path, const StateTrajectory& y) { detail::write_text(path, state_csv(y)); }
inline void write_control_csv(const std::string& path, const BoundaryTrajectory& u)
{
    detail::write_text(path, control_csv(u));
}

enum class FieldKind : std::uint32_t { state = 1, boundary = 2 };

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL)
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t k = 0; k < n; ++k) {
        h ^= p[k];
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace detail {

struct FieldHeader {
    char magic[8];
    std::uint32_t kind;
    std::int32_t nx, ny, nt;
    double L, T, kappa;
};

inline constexpr char kFieldMagic[8] = {'V', 'T', 'F', 'I', 'E', 'L', 'D', '1'};

inline std::uint64_t header_hash(const FieldHeader& h)
{
    std::uint64_t x = fnv1a(&h.kind, sizeof h.kind);
    x = fnv1a(&h.nx, sizeof h.nx, x);
    x = fnv1a(&h.ny, sizeof h.ny, x);
    x = fnv1a(&h.nt, sizeof h.nt, x);
    x = fnv1a(&h.L, sizeof h.L, x);
    x = fnv1a(&h.T, sizeof h.T, x);
    return fnv1a(&h.kappa, sizeof h.kappa, x);
}

template <class T>
void put(std::ofstream& f, const T& v)
{
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
void get(std::ifstream& f, T& v, const std::string& path)
{
    f.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!f) throw std::runtime_error(path + ": truncated field file");
}

inline void write_field(const std::string& path, FieldKind kind, const Grid& g, const std::vector<double>& values)
{
    FieldHeader h{};
    std::memcpy(h.magic, kFieldMagic, sizeof h.magic);
    h.kind = static_cast<std::uint32_t>(kind);
    h.nx = g.nx();
    h.ny = g.ny();
    h.nt = g.nt();
    h.L = g.L();
    h.T = g.T();
    h.kappa = g.kappa();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(h.magic, sizeof h.magic);
    put(f, h.kind);
    put(f, h.nx);
    put(f, h.ny);
    put(f, h.nt);
    put(f, h.L);
    put(f, h.T);
    put(f, h.kappa);
    put(f, header_hash(h));
    put(f, static_cast<std::uint64_t>(values.size()));
    f.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!f) throw std::runtime_error("write to " + path + " failed");
}

inline std::pair<Grid, std::vector<double>> read_field(const std::string& path, FieldKind expected)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    FieldHeader h{};
    f.read(h.magic, sizeof h.magic);
    if (!f || std::memcmp(h.magic, kFieldMagic, sizeof h.magic) != 0)
        throw std::runtime_error(path + ": not a field file");
    get(f, h.kind, path);
    get(f, h.nx, path);
    get(f, h.ny, path);
    get(f, h.nt, path);
    get(f, h.L, path);
    get(f, h.T, path);
    get(f, h.kappa, path);
    std::uint64_t hash = 0, count = 0;
    get(f, hash, path);
    get(f, count, path);
    if (hash != header_hash(h)) throw std::runtime_error(path + ": grid hash mismatch");
    if (h.kind != static_cast<std::uint32_t>(expected)) throw std::runtime_error(path + ": unexpected field kind");
    Grid g({h.L, h.T, h.kappa}, h.nx, h.ny, h.nt);
    const std::size_t per_level = expected == FieldKind::state ? g.nodes() : g.boundary_nodes();
    if (count != per_level * static_cast<std::size_t>(g.nt() + 1)) throw std::runtime_error(path + ": bad value count");
    std::vector<double> values(count);
    f.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!f) throw std::runtime_error(path + ": truncated field file");
    return {g, std::move(values)};
}

}  // namespace detail

inline std::uint64_t grid_hash(const Grid& g, FieldKind kind)
{
    detail::FieldHeader h{};
    h.kind = static_cast<std::uint32_t>(kind);
    h.nx = g.nx();
    h.ny = g.ny();
    h.nt = g.nt();
    h.L = g.L();
    h.T = g.T();
    h.kappa = g.kappa();
    return detail::header_hash(h);
}

inline void write_field_file(const std::string& path, const StateTrajectory& y)
{
    detail::write_field(path, FieldKind::state, y.grid(), y.values());
}

inline void write_field_file(const std::string& path, const BoundaryTrajectory& u)
{
    detail::write_field(path, FieldKind::boundary, u.grid(), u.values());
}

inline StateTrajectory read_state_field(const std::string& path)
{
    auto [g, values] = detail::read_field(path, FieldKind::state);
    StateTrajectory y(g);
    y.values() = std::move(values);
    return y;
}

inline BoundaryTrajectory read_boundary_field(const std::string& path)
{
    auto [g, values] = detail::read_field(path, FieldKind::boundary);
    BoundaryTrajectory u(g);
    u.values() = std::move(values);
    return u;
}

}  // namespace venttsel
