#pragma once

// Problem data: the boundary nonlinearity phi, objective and constraint
// integrands, control bounds, sources, and the quadratic tracking preset.
//
// All derivatives are supplied by the caller. validate() samples every
// callable on a fixed lattice, checks phi_y <= 0 and compares each supplied
// derivative with a central difference.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "venttsel/grid.hpp"

namespace venttsel {

/// A node of Q-bar at a time level.
struct QPoint {
    int n, j, i;
    double t, x1, x2;
};

/// A node of Sigma at a time level.
struct SPoint {
    int n;
    Side side;
    int i;
    double t, x1;
};

inline QPoint q_point(const Grid& g, int n, int j, int i) { return {n, j, i, g.t(n), g.x1(i), g.x2(j)}; }
inline SPoint s_point(const Grid& g, int n, Side s, int i) { return {n, s, i, g.t(n), g.x1(i)}; }

using VolumeFn = std::function<double(const QPoint&, double y)>;
using SurfaceFn = std::function<double(const SPoint&, double y)>;
using SurfaceControlFn = std::function<double(const SPoint&, double y, double u)>;

struct SampleRange {
    double lo = -1.0;
    double hi = 1.0;
};

struct Nonlinearity {
    SurfaceControlFn value, dy, du, dyy, dyu, duu;
    SampleRange y_range{-2.0, 2.0};
    SampleRange u_range{-2.0, 2.0};
};

struct ObjectiveSpec {
    VolumeFn p, p_y, p_yy;
    SurfaceControlFn q, q_y, q_u, q_yy, q_yu, q_uu;
};

enum class ConstraintKind { equality, inequality };

/// F(u) = int_Q a(y) + int_Sigma b(y) + offset; equality means F = 0, inequality F <= 0.
struct StateConstraint {
    std::string name;
    ConstraintKind kind = ConstraintKind::inequality;
    VolumeFn a, a_y;
    SurfaceFn b, b_y;
    double offset = 0.0;
};

struct ControlBounds {
    BoundaryTrajectory lower;
    BoundaryTrajectory upper;
};

inline ControlBounds constant_bounds(const Grid& g, double lo, double hi)
{
    return {BoundaryTrajectory(g, lo), BoundaryTrajectory(g, hi)};
}

struct ProblemSpec {
    Grid grid;
    StateTrajectory f;
    SpaceField y0;
    Nonlinearity phi;
    ObjectiveSpec objective;
    std::optional<ControlBounds> bounds;
    std::vector<StateConstraint> constraints;
    /// Set by make_quadratic_problem; the Picard solver requires it.
    std::optional<double> tracking_beta;
};

struct QuadraticTrackingPreset {
    StateTrajectory y_g;
    double beta = 1.0;
};

/// phi = u, p = (y - y_g)^2 / 2, q = beta u^2 / 2.
inline Nonlinearity identity_nonlinearity()
{
    Nonlinearity phi;
    auto zero = [](const SPoint&, double, double) { return 0.0; };
    phi.value = [](const SPoint&, double, double u) { return u; };
    phi.dy = zero;
    phi.du = [](const SPoint&, double, double) { return 1.0; };
    phi.dyy = zero;
    phi.dyu = zero;
    phi.duu = zero;
    return phi;
}

inline ObjectiveSpec tracking_objective(const StateTrajectory& y_g, double beta)
{
    auto target = std::make_shared<const StateTrajectory>(y_g);
    ObjectiveSpec obj;
    obj.p = [target](const QPoint& x, double y) {
        const double d = y - (*target)(x.n, x.j, x.i);
        return 0.5 * d * d;
    };
    obj.p_y = [target](const QPoint& x, double y) { return y - (*target)(x.n, x.j, x.i); };
    obj.p_yy = [](const QPoint&, double) { return 1.0; };
    auto zero = [](const SPoint&, double, double) { return 0.0; };
    obj.q = [beta](const SPoint&, double, double u) { return 0.5 * beta * u * u; };
    obj.q_y = zero;
    obj.q_u = [beta](const SPoint&, double, double u) { return beta * u; };
    obj.q_yy = zero;
    obj.q_yu = zero;
    obj.q_uu = [beta](const SPoint&, double, double) { return beta; };
    return obj;
}

inline ProblemSpec make_quadratic_problem(const Grid& grid, const StateTrajectory& f, const SpaceField& y0,
                                          const QuadraticTrackingPreset& preset)
{
    if (!(preset.beta > 0.0)) throw std::invalid_argument("make_quadratic_problem: beta must be positive");
    require_same_grid(grid, f.grid(), "make_quadratic_problem(f)");
    require_same_grid(grid, preset.y_g.grid(), "make_quadratic_problem(y_g)");
    if (y0.size() != grid.nodes()) throw std::invalid_argument("make_quadratic_problem: y0 shape mismatch");
    return ProblemSpec{grid, f, y0, identity_nonlinearity(), tracking_objective(preset.y_g, preset.beta),
                       std::nullopt, {}, preset.beta};
}

struct ValidationReport {
    std::vector<std::string> issues;
    bool ok() const { return issues.empty(); }
};

namespace detail {

inline constexpr int kLattice = 10;
inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdRelTol = 1e-4;

inline std::array<double, kLattice> lattice(SampleRange r)
{
    std::array<double, kLattice> out{};
    for (int k = 0; k < kLattice; ++k) out[k] = r.lo + (r.hi - r.lo) * k / (kLattice - 1);
    return out;
}

inline std::vector<SPoint> surface_samples(const Grid& g)
{
    std::vector<SPoint> pts;
    for (int k = 0; k < kLattice; ++k) {
        const int n = (k * g.nt()) / (kLattice - 1);
        const int i = (k * (g.nx() - 1)) / (kLattice - 1);
        pts.push_back(s_point(g, n, k % 2 == 0 ? Side::bottom : Side::top, i));
    }
    return pts;
}

inline std::vector<QPoint> volume_samples(const Grid& g)
{
    std::vector<QPoint> pts;
    for (int k = 0; k < kLattice; ++k) {
        const int n = (k * g.nt()) / (kLattice - 1);
        const int j = (k * (g.ny() - 1)) / (kLattice - 1);
        const int i = ((3 * k) % kLattice * (g.nx() - 1)) / (kLattice - 1);
        pts.push_back(q_point(g, n, j, i));
    }
    return pts;
}

inline std::string describe(const SPoint& s)
{
    std::ostringstream os;
    os << "(n=" << s.n << ", side=" << (s.side == Side::bottom ? "bottom" : "top") << ", i=" << s.i << ")";
    return os.str();
}

inline std::string describe(const QPoint& q)
{
    std::ostringstream os;
    os << "(n=" << q.n << ", j=" << q.j << ", i=" << q.i << ")";
    return os.str();
}

inline bool derivative_matches(double supplied, double fd)
{
    return std::abs(supplied - fd) <= kFdRelTol * std::max(1.0, std::abs(supplied));
}

class Checker {
public:
    explicit Checker(ValidationReport& report) : report_(report) {}

    template <class Pt>
    void finite(const char* name, const Pt& pt, double y, double u, double value)
    {
        if (!std::isfinite(value)) add(name, pt, y, u, "is not finite");
    }

    template <class Pt>
    void derivative(const char* name, const Pt& pt, double y, double u, double supplied, double fd)
    {
        if (!std::isfinite(supplied)) {
            add(name, pt, y, u, "is not finite");
        } else if (!derivative_matches(supplied, fd)) {
            std::ostringstream os;
            os << "disagrees with central difference (" << supplied << " vs " << fd << ")";
            add(name, pt, y, u, os.str());
        }
    }

    template <class Pt>
    void add(const char* name, const Pt& pt, double y, double u, const std::string& what)
    {
        // One message per callable keeps reports readable.
        for (const auto& seen : reported_)
            if (seen == name) return;
        reported_.emplace_back(name);
        std::ostringstream os;
        os << name << " " << what << " at " << describe(pt) << " y=" << y << " u=" << u;
        report_.issues.push_back(os.str());
    }

private:
    ValidationReport& report_;
    std::vector<std::string> reported_;
};

}  // namespace detail

inline ValidationReport validate(const ProblemSpec& problem)
{
    using namespace detail;
    ValidationReport report;
    const Grid& g = problem.grid;
    Checker check(report);

    if (!(problem.f.grid() == g)) report.issues.push_back("source f: grid mismatch");
    if (problem.y0.size() != g.nodes()) report.issues.push_back("initial field y0: shape mismatch");
    if (!problem.f.all_finite()) report.issues.push_back("source f: non-finite entries");

    const auto ys = lattice(problem.phi.y_range);
    const auto us = lattice(problem.phi.u_range);
    const double h = kFdStep;
    const auto& phi = problem.phi;
    const auto& obj = problem.objective;

    for (const SPoint& s : surface_samples(g)) {
        for (double y : ys) {
            for (double u : us) {
                if (phi.value) {
                    const double py = phi.dy(s, y, u);
                    if (py > 0.0) {
                        std::ostringstream os;
                        os << "violates phi_y <= 0 (phi_y = " << py << ")";
                        check.add("phi", s, y, u, os.str());
                    }
                    check.finite("phi", s, y, u, phi.value(s, y, u));
                    check.derivative("phi_y", s, y, u, py,
                                     (phi.value(s, y + h, u) - phi.value(s, y - h, u)) / (2 * h));
                    check.derivative("phi_u", s, y, u, phi.du(s, y, u),
                                     (phi.value(s, y, u + h) - phi.value(s, y, u - h)) / (2 * h));
                    check.derivative("phi_yy", s, y, u, phi.dyy(s, y, u),
                                     (phi.dy(s, y + h, u) - phi.dy(s, y - h, u)) / (2 * h));
                    check.derivative("phi_yu", s, y, u, phi.dyu(s, y, u),
                                     (phi.dy(s, y, u + h) - phi.dy(s, y, u - h)) / (2 * h));
                    check.derivative("phi_uu", s, y, u, phi.duu(s, y, u),
                                     (phi.du(s, y, u + h) - phi.du(s, y, u - h)) / (2 * h));
                }
                if (obj.q) {
                    check.finite("q", s, y, u, obj.q(s, y, u));
                    check.derivative("q_y", s, y, u, obj.q_y(s, y, u),
                                     (obj.q(s, y + h, u) - obj.q(s, y - h, u)) / (2 * h));
                    check.derivative("q_u", s, y, u, obj.q_u(s, y, u),
                                     (obj.q(s, y, u + h) - obj.q(s, y, u - h)) / (2 * h));
                    check.derivative("q_yy", s, y, u, obj.q_yy(s, y, u),
                                     (obj.q_y(s, y + h, u) - obj.q_y(s, y - h, u)) / (2 * h));
                    check.derivative("q_yu", s, y, u, obj.q_yu(s, y, u),
                                     (obj.q_y(s, y, u + h) - obj.q_y(s, y, u - h)) / (2 * h));
                    check.derivative("q_uu", s, y, u, obj.q_uu(s, y, u),
                                     (obj.q_u(s, y, u + h) - obj.q_u(s, y, u - h)) / (2 * h));
                }
            }
            for (const auto& c : problem.constraints) {
                if (!c.b) continue;
                check.finite("b", s, y, 0.0, c.b(s, y));
                check.derivative("b_y", s, y, 0.0, c.b_y(s, y), (c.b(s, y + h) - c.b(s, y - h)) / (2 * h));
            }
        }
    }

    for (const QPoint& q : volume_samples(g)) {
        for (double y : ys) {
            if (obj.p) {
                check.finite("p", q, y, 0.0, obj.p(q, y));
                check.derivative("p_y", q, y, 0.0, obj.p_y(q, y), (obj.p(q, y + h) - obj.p(q, y - h)) / (2 * h));
                check.derivative("p_yy", q, y, 0.0, obj.p_yy(q, y),
                                 (obj.p_y(q, y + h) - obj.p_y(q, y - h)) / (2 * h));
            }
            for (const auto& c : problem.constraints) {
                if (!c.a) continue;
                check.finite("a", q, y, 0.0, c.a(q, y));
                check.derivative("a_y", q, y, 0.0, c.a_y(q, y), (c.a(q, y + h) - c.a(q, y - h)) / (2 * h));
            }
        }
    }

    if (problem.bounds) {
        const auto& b = *problem.bounds;
        if (!(b.lower.grid() == g) || !(b.upper.grid() == g)) {
            report.issues.push_back("control bounds: grid mismatch");
        } else {
            bool done = false;
            for (int n = 0; n <= g.nt() && !done; ++n)
                for (Side s : kSides)
                    for (int i = 0; i < g.nx() && !done; ++i)
                        if (b.lower(n, s, i) > b.upper(n, s, i)) {
                            std::ostringstream os;
                            os << "control bounds: u_a > u_b at " << describe(s_point(g, n, s, i));
                            report.issues.push_back(os.str());
                            done = true;
                        }
        }
    }
    return report;
}

}  // namespace venttsel
