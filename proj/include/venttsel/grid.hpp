#pragma once

// Space-time discretization of the periodic strip Q = [0,L) x (0,1) x (0,T).
//
// The boundary Gamma consists of two circles, x2 = 0 (Side::bottom) and
// x2 = 1 (Side::top). Node (i, j) sits at (i*hx, j*hy); rows j = 0 and
// j = ny-1 are the discrete Gamma.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace venttsel {

struct DomainSpec {
    double L = 1.0;      // period in x1
    double T = 1.0;      // final time
    double kappa = 1.0;  // boundary diffusivity
};

enum class Side : int { bottom = 0, top = 1 };

inline constexpr Side kSides[2] = {Side::bottom, Side::top};

class Grid {
public:
    Grid(const DomainSpec& domain, int nx, int ny, int nt)
        : domain_(domain), nx_(nx), ny_(ny), nt_(nt)
    {
        if (!(domain.L > 0.0) || !std::isfinite(domain.L)) {
            throw std::invalid_argument("Grid: period L must be positive");
        }
        if (!(domain.T > 0.0) || !std::isfinite(domain.T)) {
            throw std::invalid_argument("Grid: final time T must be positive");
        }
        if (!(domain.kappa > 0.0) || !std::isfinite(domain.kappa)) {
            throw std::invalid_argument("Grid: boundary diffusivity kappa must be positive");
        }
        if (nx < 4) throw std::invalid_argument("Grid: nx must be >= 4");
        if (ny < 4) throw std::invalid_argument("Grid: ny must be >= 4");
        if (nt < 1) throw std::invalid_argument("Grid: nt must be >= 1");
        hx_ = domain.L / nx;
        hy_ = 1.0 / (ny - 1);
        dt_ = domain.T / nt;
    }

    const DomainSpec& domain() const { return domain_; }
    double L() const { return domain_.L; }
    double T() const { return domain_.T; }
    double kappa() const { return domain_.kappa; }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nt() const { return nt_; }
    double hx() const { return hx_; }
    double hy() const { return hy_; }
    double dt() const { return dt_; }

    /// Unknowns per time level.
    std::size_t nodes() const { return static_cast<std::size_t>(nx_) * ny_; }
    std::size_t boundary_nodes() const { return 2 * static_cast<std::size_t>(nx_); }
    std::size_t index(int j, int i) const { return static_cast<std::size_t>(j) * nx_ + i; }

    double x1(int i) const { return i * hx_; }
    double x2(int j) const { return j * hy_; }
    double t(int n) const { return n * dt_; }

    int row_of(Side s) const { return s == Side::bottom ? 0 : ny_ - 1; }
    bool is_boundary_row(int j) const { return j == 0 || j == ny_ - 1; }
    int periodic(int i) const { return ((i % nx_) + nx_) % nx_; }

    // Quadrature weights: trapezoid in t and x2, rectangle in periodic x1.
    double time_weight(int n) const { return (n == 0 || n == nt_) ? 0.5 * dt_ : dt_; }
    double x1_weight() const { return hx_; }
    double x2_weight(int j) const { return is_boundary_row(j) ? 0.5 * hy_ : hy_; }

    bool operator==(const Grid& o) const
    {
        return domain_.L == o.domain_.L && domain_.T == o.domain_.T &&
               domain_.kappa == o.domain_.kappa && nx_ == o.nx_ && ny_ == o.ny_ && nt_ == o.nt_;
    }

private:
    DomainSpec domain_;
    int nx_;
    int ny_;
    int nt_;
    double hx_ = 0.0;
    double hy_ = 0.0;
    double dt_ = 0.0;
};

inline Grid build_grid(const DomainSpec& spec, int nx, int ny, int nt) { return Grid(spec, nx, ny, nt); }

/// A field on every node of Q-bar at every time level, layout [n][j][i].
class StateTrajectory {
public:
    explicit StateTrajectory(const Grid& grid, double fill = 0.0)
        : grid_(grid), values_(static_cast<std::size_t>(grid.nt() + 1) * grid.nodes(), fill)
    {
    }

    const Grid& grid() const { return grid_; }

    double& operator()(int n, int j, int i) { return values_[offset(n) + grid_.index(j, i)]; }
    double operator()(int n, int j, int i) const { return values_[offset(n) + grid_.index(j, i)]; }

    std::span<double> level(int n) { return {values_.data() + offset(n), grid_.nodes()}; }
    std::span<const double> level(int n) const { return {values_.data() + offset(n), grid_.nodes()}; }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    bool all_finite() const
    {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    template <class Fn>
    static StateTrajectory from_function(const Grid& grid, Fn&& fn)
    {
        StateTrajectory out(grid);
        for (int n = 0; n <= grid.nt(); ++n)
            for (int j = 0; j < grid.ny(); ++j)
                for (int i = 0; i < grid.nx(); ++i) out(n, j, i) = fn(grid.x1(i), grid.x2(j), grid.t(n));
        return out;
    }

private:
    std::size_t offset(int n) const { return static_cast<std::size_t>(n) * grid_.nodes(); }

    Grid grid_;
    std::vector<double> values_;
};

/// A field on Sigma only, layout [n][side][i].
class BoundaryTrajectory {
public:
    explicit BoundaryTrajectory(const Grid& grid, double fill = 0.0)
        : grid_(grid), values_(static_cast<std::size_t>(grid.nt() + 1) * grid.boundary_nodes(), fill)
    {
    }

    const Grid& grid() const { return grid_; }

    double& operator()(int n, Side s, int i) { return values_[slot(n, s, i)]; }
    double operator()(int n, Side s, int i) const { return values_[slot(n, s, i)]; }

    std::span<double> level(int n) { return {values_.data() + offset(n), grid_.boundary_nodes()}; }
    std::span<const double> level(int n) const { return {values_.data() + offset(n), grid_.boundary_nodes()}; }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    bool all_finite() const
    {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    // fn(side, x1, t)
    template <class Fn>
    static BoundaryTrajectory from_function(const Grid& grid, Fn&& fn)
    {
        BoundaryTrajectory out(grid);
        for (int n = 0; n <= grid.nt(); ++n)
            for (Side s : kSides)
                for (int i = 0; i < grid.nx(); ++i) out(n, s, i) = fn(s, grid.x1(i), grid.t(n));
        return out;
    }

private:
    std::size_t offset(int n) const { return static_cast<std::size_t>(n) * grid_.boundary_nodes(); }
    std::size_t slot(int n, Side s, int i) const
    {
        return offset(n) + static_cast<std::size_t>(static_cast<int>(s)) * grid_.nx() + i;
    }

    Grid grid_;
    std::vector<double> values_;
};

/// Single time slice on Omega-bar (ny*nx values, layout [j][i]).
using SpaceField = std::vector<double>;

inline void require_same_grid(const Grid& a, const Grid& b, const char* what)
{
    if (!(a == b)) throw std::invalid_argument(std::string(what) + ": grid mismatch");
}

inline double integrate_Q(const StateTrajectory& field)
{
    const Grid& g = field.grid();
    double total = 0.0;
    for (int n = 0; n <= g.nt(); ++n) {
        double level_sum = 0.0;
        for (int j = 0; j < g.ny(); ++j) {
            double row = 0.0;
            for (int i = 0; i < g.nx(); ++i) row += field(n, j, i);
            level_sum += g.x2_weight(j) * row;
        }
        total += g.time_weight(n) * g.x1_weight() * level_sum;
    }
    return total;
}

inline double integrate_Sigma(const BoundaryTrajectory& field)
{
    const Grid& g = field.grid();
    double total = 0.0;
    for (int n = 0; n <= g.nt(); ++n) {
        double level_sum = 0.0;
        for (double v : field.level(n)) level_sum += v;
        total += g.time_weight(n) * g.x1_weight() * level_sum;
    }
    return total;
}

/// Volume integral over Omega-bar and surface integral over Gamma of one slice.
inline std::pair<double, double> integrate_Omega_and_Gamma(const Grid& g, std::span<const double> slice)
{
    if (slice.size() != g.nodes()) throw std::invalid_argument("integrate_Omega_and_Gamma: shape mismatch");
    double volume = 0.0;
    for (int j = 0; j < g.ny(); ++j) {
        double row = 0.0;
        for (int i = 0; i < g.nx(); ++i) row += slice[g.index(j, i)];
        volume += g.x2_weight(j) * row;
    }
    double surface = 0.0;
    for (Side s : kSides)
        for (int i = 0; i < g.nx(); ++i) surface += slice[g.index(g.row_of(s), i)];
    return {volume * g.x1_weight(), surface * g.x1_weight()};
}

inline std::pair<double, double> integrate_Omega_and_Gamma_at(const StateTrajectory& field, int level)
{
    if (level < 0 || level > field.grid().nt()) {
        throw std::out_of_range("integrate_Omega_and_Gamma_at: level " + std::to_string(level) + " out of range");
    }
    return integrate_Omega_and_Gamma(field.grid(), field.level(level));
}

inline BoundaryTrajectory trace(const StateTrajectory& field)
{
    const Grid& g = field.grid();
    BoundaryTrajectory out(g);
    for (int n = 0; n <= g.nt(); ++n)
        for (Side s : kSides)
            for (int i = 0; i < g.nx(); ++i) out(n, s, i) = field(n, g.row_of(s), i);
    return out;
}

/// Discrete L2(Sigma) inner product with the integrate_Sigma weights.
inline double inner_Sigma(const BoundaryTrajectory& a, const BoundaryTrajectory& b)
{
    require_same_grid(a.grid(), b.grid(), "inner_Sigma");
    const Grid& g = a.grid();
    double total = 0.0;
    for (int n = 0; n <= g.nt(); ++n) {
        auto la = a.level(n);
        auto lb = b.level(n);
        double s = 0.0;
        for (std::size_t k = 0; k < la.size(); ++k) s += la[k] * lb[k];
        total += g.time_weight(n) * g.x1_weight() * s;
    }
    return total;
}

inline double max_abs(std::span<const double> v)
{
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

inline double max_abs(const BoundaryTrajectory& b) { return max_abs(b.values()); }
inline double max_abs(const StateTrajectory& s) { return max_abs(s.values()); }

}  // namespace venttsel
