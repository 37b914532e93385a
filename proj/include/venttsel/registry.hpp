#pragma once

// Named analytic building blocks: boundary nonlinearities, the manufactured
// solution mms_1, and constraint integrands.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "venttsel/grid.hpp"
#include "venttsel/model.hpp"

namespace venttsel {

inline Nonlinearity phi_identity() { return identity_nonlinearity(); }

/// phi = u - y^3
inline Nonlinearity phi_cubic()
{
    Nonlinearity phi;
    auto zero = [](const SPoint&, double, double) { return 0.0; };
    phi.value = [](const SPoint&, double y, double u) { return u - y * y * y; };
    phi.dy = [](const SPoint&, double y, double) { return -3.0 * y * y; };
    phi.du = [](const SPoint&, double, double) { return 1.0; };
    phi.dyy = [](const SPoint&, double y, double) { return -6.0 * y; };
    phi.dyu = zero;
    phi.duu = zero;
    return phi;
}

/// phi = sigma * y + u, sigma <= 0
inline Nonlinearity phi_linear(double sigma)
{
    if (sigma > 0.0) throw std::invalid_argument("phi_linear: sigma must be <= 0");
    Nonlinearity phi;
    auto zero = [](const SPoint&, double, double) { return 0.0; };
    phi.value = [sigma](const SPoint&, double y, double u) { return sigma * y + u; };
    phi.dy = [sigma](const SPoint&, double, double) { return sigma; };
    phi.du = [](const SPoint&, double, double) { return 1.0; };
    phi.dyy = zero;
    phi.dyu = zero;
    phi.duu = zero;
    return phi;
}

inline Nonlinearity phi_by_name(const std::string& name, double sigma = 0.0)
{
    if (name == "phi_identity") return phi_identity();
    if (name == "phi_cubic") return phi_cubic();
    if (name == "phi_linear") return phi_linear(sigma);
    throw std::invalid_argument("unknown nonlinearity '" + name + "'");
}

// mms_1: y = e^{-t} (2 + cos(2 pi x1 / L) cos(pi x2)), with phi = u.
// It has zero normal derivative on both circles, so the boundary equation
// reduces to D_t y - kappa y_x1x1 = u.
namespace mms_1 {

inline double exact(const DomainSpec& d, double x1, double x2, double t)
{
    const double c = std::cos(2.0 * std::numbers::pi * x1 / d.L);
    return std::exp(-t) * (2.0 + c * std::cos(std::numbers::pi * x2));
}

inline double forcing(const DomainSpec& d, double x1, double x2, double t)
{
    const double k2 = std::pow(2.0 * std::numbers::pi / d.L, 2) + std::numbers::pi * std::numbers::pi;
    const double cc = std::cos(2.0 * std::numbers::pi * x1 / d.L) * std::cos(std::numbers::pi * x2);
    return std::exp(-t) * (-(2.0 + cc) + k2 * cc);
}

inline double control(const DomainSpec& d, Side s, double x1, double t)
{
    const double sign = s == Side::bottom ? 1.0 : -1.0;
    const double c = sign * std::cos(2.0 * std::numbers::pi * x1 / d.L);
    const double k2 = std::pow(2.0 * std::numbers::pi / d.L, 2);
    return std::exp(-t) * (-(2.0 + c) + d.kappa * k2 * c);
}

inline StateTrajectory exact_state(const Grid& g)
{
    return StateTrajectory::from_function(g, [&](double x1, double x2, double t) { return exact(g.domain(), x1, x2, t); });
}

inline StateTrajectory forcing_field(const Grid& g)
{
    return StateTrajectory::from_function(g,
                                          [&](double x1, double x2, double t) { return forcing(g.domain(), x1, x2, t); });
}

inline BoundaryTrajectory control_field(const Grid& g)
{
    return BoundaryTrajectory::from_function(g, [&](Side s, double x1, double t) { return control(g.domain(), s, x1, t); });
}

inline SpaceField initial(const Grid& g)
{
    SpaceField y0(g.nodes());
    for (int j = 0; j < g.ny(); ++j)
        for (int i = 0; i < g.nx(); ++i) y0[g.index(j, i)] = exact(g.domain(), g.x1(i), g.x2(j), 0.0);
    return y0;
}

}  // namespace mms_1

/// a(y) or b(y) integrand: "zero" or "y".
inline void set_constraint_integrands(StateConstraint& c, const std::string& a, const std::string& b)
{
    if (a == "y") {
        c.a = [](const QPoint&, double y) { return y; };
        c.a_y = [](const QPoint&, double) { return 1.0; };
    } else if (a == "zero") {
        c.a = [](const QPoint&, double) { return 0.0; };
        c.a_y = [](const QPoint&, double) { return 0.0; };
    } else {
        throw std::invalid_argument("unknown volume integrand '" + a + "'");
    }
    if (b == "y") {
        c.b = [](const SPoint&, double y) { return y; };
        c.b_y = [](const SPoint&, double) { return 1.0; };
    } else if (b == "zero") {
        c.b = [](const SPoint&, double) { return 0.0; };
        c.b_y = [](const SPoint&, double) { return 0.0; };
    } else {
        throw std::invalid_argument("unknown surface integrand '" + b + "'");
    }
}

/// F = int_Q a(y) + int_Sigma b(y) + offset
inline StateConstraint make_constraint(const std::string& name, ConstraintKind kind, const std::string& a,
                                       const std::string& b, double offset)
{
    StateConstraint c;
    c.name = name;
    c.kind = kind;
    c.offset = offset;
    set_constraint_integrands(c, a, b);
    return c;
}

/// Tracking problem with an arbitrary nonlinearity. With phi_identity this
/// is the quadratic preset.
inline ProblemSpec make_tracking_problem(const Grid& grid, const StateTrajectory& f, const SpaceField& y0,
                                         const Nonlinearity& phi, const QuadraticTrackingPreset& preset)
{
    ProblemSpec p = make_quadratic_problem(grid, f, y0, preset);
    p.phi = phi;
    return p;
}

}  // namespace venttsel
