#pragma once

// Discrete adjoint engine.
//
// The backward recursion is the exact transpose of the forward step:
//   A_n^T lambda^n = c^n + lambda^{n+1} / dt,   lambda^n = dt * m * z^{n-1},
// with m the node masses of the boundary closure and z^{nt} = z_T. In the
// field variable z this is an implicit Euler discretization of
//   -D_t z - Laplace z = g                                  in Q
//   -D_t z - kappa d2z/dx1^2 + d_nu z = phi_y z + r         on Sigma
//   z(., T) = z_T
// where c^n carries g and r with the integrate_Q / integrate_Sigma weights.
//
// Gradients are Riesz representatives in the integrate_Sigma inner product.
// For J(u) = int_Q p(y) + int_Sigma q(y, u) the adjoint w is driven by
// g = -p_y and r = -q_y; then grad J = q_u - phi_u * omega, where omega is
// the control-aligned trace of w (see control_aligned_trace).

#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "venttsel/forward.hpp"
#include "venttsel/grid.hpp"
#include "venttsel/model.hpp"

namespace venttsel {

struct AdjointData {
    StateTrajectory g;
    BoundaryTrajectory r;
    SpaceField z_T;
};

inline AdjointData zero_adjoint_data(const Grid& grid)
{
    return {StateTrajectory(grid), BoundaryTrajectory(grid), SpaceField(grid.nodes(), 0.0)};
}

struct DerivativeReport {
    double value = 0.0;
    BoundaryTrajectory gradient;
    StateTrajectory adjoint;
    BoundaryTrajectory adjoint_trace;
    StateTrajectory state;
};

namespace detail {

/// Backward march. add_weighted_source(n, rhs) adds c^n (already quadrature weighted).
template <class PhiY, class Source>
StateTrajectory march_adjoint(const Grid& g, const SolverOptions& opts, std::span<const double> z_T,
                              PhiY&& phi_y_at, Source&& add_weighted_source)
{
    if (z_T.size() != g.nodes()) throw std::invalid_argument("adjoint: terminal field shape mismatch");
    const std::vector<double> mass = node_mass(g, opts.normal_stencil);
    StateTrajectory z(g);
    std::copy(z_T.begin(), z_T.end(), z.level(g.nt()).begin());
    StepSolver solver(g, opts);
    const auto N = static_cast<Eigen::Index>(g.nodes());
    Eigen::VectorXd rhs(N);
    for (int n = g.nt(); n >= 1; --n) {
        solver.set_phi_y(phi_y_at(n));
        auto next = z.level(n);
        for (Eigen::Index k = 0; k < N; ++k) rhs[k] = mass[static_cast<std::size_t>(k)] * next[static_cast<std::size_t>(k)];
        add_weighted_source(n, rhs);
        const Eigen::VectorXd lambda = solver.solve_transposed(rhs);
        auto out = z.level(n - 1);
        for (Eigen::Index k = 0; k < N; ++k)
            out[static_cast<std::size_t>(k)] = lambda[k] / (g.dt() * mass[static_cast<std::size_t>(k)]);
    }
    return z;
}

/// Adds the quadrature-weighted data (g on Q, r on Sigma) of level n.
inline void add_data_source(const Grid& g, const AdjointData& data, int n, Eigen::VectorXd& rhs)
{
    const double wt = g.time_weight(n) * g.x1_weight();
    auto gn = data.g.level(n);
    for (int j = 0; j < g.ny(); ++j)
        for (int i = 0; i < g.nx(); ++i) {
            const auto k = g.index(j, i);
            rhs[static_cast<Eigen::Index>(k)] += wt * g.x2_weight(j) * gn[k];
        }
    for (Side s : kSides)
        for (int i = 0; i < g.nx(); ++i)
            rhs[static_cast<Eigen::Index>(g.index(g.row_of(s), i))] += wt * data.r(n, s, i);
}

inline void check_adjoint_data(const Grid& g, const AdjointData& d)
{
    require_same_grid(g, d.g.grid(), "adjoint data g");
    require_same_grid(g, d.r.grid(), "adjoint data r");
    if (d.z_T.size() != g.nodes()) throw std::invalid_argument("adjoint data: z_T shape mismatch");
}

}  // namespace detail

/// Adjoint of the linearization at (base, u) with data (g, r, z_T).
inline StateTrajectory solve_adjoint(const ProblemSpec& p, const StateTrajectory& base, const BoundaryTrajectory& u,
                                     const AdjointData& data, const SolverOptions& opts = {})
{
    const Grid& g = p.grid;
    detail::check_adjoint_data(g, data);
    return detail::march_adjoint(
        g, opts, data.z_T, [&](int n) { return detail::phi_y_level(p, base, u, n); },
        [&](int n, Eigen::VectorXd& rhs) { detail::add_data_source(g, data, n, rhs); });
}

/// Adjoint of the principal system without boundary coupling (phi_y = 0).
inline StateTrajectory solve_adjoint_principal(const Grid& g, const AdjointData& data, const SolverOptions& opts = {})
{
    detail::check_adjoint_data(g, data);
    const std::vector<double> no_coupling(g.boundary_nodes(), 0.0);
    return detail::march_adjoint(
        g, opts, data.z_T, [&](int) { return no_coupling; },
        [&](int n, Eigen::VectorXd& rhs) { detail::add_data_source(g, data, n, rhs); });
}

/// Boundary values of the adjoint as seen by the control at each level:
/// omega^0 = 0 and omega^n = (dt / w_t^n) w^{n-1} on Gamma. The control of
/// level n enters step n, whose transposed solve produces w^{n-1}; the factor
/// converts the step weight dt to the trapezoid weight of level n.
inline BoundaryTrajectory control_aligned_trace(const StateTrajectory& w)
{
    const Grid& g = w.grid();
    BoundaryTrajectory out(g);
    for (int n = 1; n <= g.nt(); ++n) {
        const double factor = g.dt() / g.time_weight(n);
        for (Side s : kSides)
            for (int i = 0; i < g.nx(); ++i) out(n, s, i) = factor * w(n - 1, g.row_of(s), i);
    }
    return out;
}

inline double objective_value_of(const ProblemSpec& p, const StateTrajectory& y, const BoundaryTrajectory& u)
{
    const Grid& g = p.grid;
    StateTrajectory pv(g);
    BoundaryTrajectory qv(g);
    for (int n = 0; n <= g.nt(); ++n) {
        for (int j = 0; j < g.ny(); ++j)
            for (int i = 0; i < g.nx(); ++i) pv(n, j, i) = p.objective.p(q_point(g, n, j, i), y(n, j, i));
        for (Side s : kSides)
            for (int i = 0; i < g.nx(); ++i)
                qv(n, s, i) = p.objective.q(s_point(g, n, s, i), y(n, g.row_of(s), i), u(n, s, i));
    }
    return integrate_Q(pv) + integrate_Sigma(qv);
}

inline double objective_value(const ProblemSpec& p, const BoundaryTrajectory& u, const SolverOptions& opts = {})
{
    return objective_value_of(p, solve_state(p, u, opts), u);
}

inline const StateConstraint& constraint_at(const ProblemSpec& p, std::size_t i)
{
    if (i >= p.constraints.size()) {
        throw std::out_of_range("constraint index " + std::to_string(i) + " out of range (m = " +
                                std::to_string(p.constraints.size()) + ")");
    }
    return p.constraints[i];
}

inline double constraint_value_of(const ProblemSpec& p, const StateTrajectory& y, std::size_t i)
{
    const StateConstraint& c = constraint_at(p, i);
    const Grid& g = p.grid;
    double total = c.offset;
    if (c.a) {
        StateTrajectory av(g);
        for (int n = 0; n <= g.nt(); ++n)
            for (int j = 0; j < g.ny(); ++j)
                for (int k = 0; k < g.nx(); ++k) av(n, j, k) = c.a(q_point(g, n, j, k), y(n, j, k));
        total += integrate_Q(av);
    }
    if (c.b) {
        BoundaryTrajectory bv(g);
        for (int n = 0; n <= g.nt(); ++n)
            for (Side s : kSides)
                for (int k = 0; k < g.nx(); ++k) bv(n, s, k) = c.b(s_point(g, n, s, k), y(n, g.row_of(s), k));
        total += integrate_Sigma(bv);
    }
    return total;
}

inline double constraint_value(const ProblemSpec& p, const BoundaryTrajectory& u, std::size_t i,
                               const SolverOptions& opts = {})
{
    constraint_at(p, i);
    return constraint_value_of(p, solve_state(p, u, opts), i);
}

/// Weights of the functional  objective * J + sum_i constraints[i] * F_i.
struct FunctionalWeights {
    double objective = 1.0;
    std::vector<double> constraints;
};

/// Value and gradient of a weighted combination of J and the F_i at the
/// already-solved state y. One adjoint solve covers all terms.
inline DerivativeReport functional_derivative_at(const ProblemSpec& p, const StateTrajectory& y,
                                                 const BoundaryTrajectory& u, const FunctionalWeights& weights,
                                                 const SolverOptions& opts = {})
{
    const Grid& g = p.grid;
    if (weights.constraints.size() > p.constraints.size()) {
        throw std::out_of_range("functional_derivative: more weights than constraints");
    }
    AdjointData data = zero_adjoint_data(g);
    const double wo = weights.objective;
    double value = 0.0;
    if (wo != 0.0) value += wo * objective_value_of(p, y, u);
    for (std::size_t c = 0; c < weights.constraints.size(); ++c)
        if (weights.constraints[c] != 0.0) value += weights.constraints[c] * constraint_value_of(p, y, c);

    for (int n = 0; n <= g.nt(); ++n) {
        for (int j = 0; j < g.ny(); ++j)
            for (int i = 0; i < g.nx(); ++i) {
                const QPoint pt = q_point(g, n, j, i);
                const double yy = y(n, j, i);
                double src = wo != 0.0 ? wo * p.objective.p_y(pt, yy) : 0.0;
                for (std::size_t c = 0; c < weights.constraints.size(); ++c)
                    if (weights.constraints[c] != 0.0 && p.constraints[c].a_y)
                        src += weights.constraints[c] * p.constraints[c].a_y(pt, yy);
                data.g(n, j, i) = -src;
            }
        for (Side s : kSides)
            for (int i = 0; i < g.nx(); ++i) {
                const SPoint pt = s_point(g, n, s, i);
                const double yy = y(n, g.row_of(s), i);
                double src = wo != 0.0 ? wo * p.objective.q_y(pt, yy, u(n, s, i)) : 0.0;
                for (std::size_t c = 0; c < weights.constraints.size(); ++c)
                    if (weights.constraints[c] != 0.0 && p.constraints[c].b_y)
                        src += weights.constraints[c] * p.constraints[c].b_y(pt, yy);
                data.r(n, s, i) = -src;
            }
    }

    StateTrajectory w = solve_adjoint(p, y, u, data, opts);
    BoundaryTrajectory omega = control_aligned_trace(w);
    BoundaryTrajectory grad(g);
    for (int n = 0; n <= g.nt(); ++n)
        for (Side s : kSides)
            for (int i = 0; i < g.nx(); ++i) {
                const SPoint pt = s_point(g, n, s, i);
                const double yy = y(n, g.row_of(s), i), uu = u(n, s, i);
                const double qu = wo != 0.0 ? wo * p.objective.q_u(pt, yy, uu) : 0.0;
                grad(n, s, i) = qu - p.phi.du(pt, yy, uu) * omega(n, s, i);
            }
    return {value, std::move(grad), std::move(w), std::move(omega), y};
}

inline DerivativeReport functional_derivative(const ProblemSpec& p, const BoundaryTrajectory& u,
                                              const FunctionalWeights& weights, const SolverOptions& opts = {})
{
    return functional_derivative_at(p, solve_state(p, u, opts), u, weights, opts);
}

inline DerivativeReport objective_gradient(const ProblemSpec& p, const BoundaryTrajectory& u,
                                           const SolverOptions& opts = {})
{
    return functional_derivative(p, u, FunctionalWeights{}, opts);
}

inline BoundaryTrajectory constraint_gradient(const ProblemSpec& p, const BoundaryTrajectory& u, std::size_t i,
                                              const SolverOptions& opts = {})
{
    constraint_at(p, i);
    FunctionalWeights w{0.0, std::vector<double>(i + 1, 0.0)};
    w.constraints[i] = 1.0;
    return functional_derivative(p, u, w, opts).gradient;
}

namespace detail {

/// Bilinear second-order form with adjoint trace omega:
///   int_Q p_yy z1 z2 + int_Sigma (q_yy - phi_yy omega) z1 z2
///   + int_Sigma (q_yu - phi_yu omega)(z1 v2 + z2 v1) + int_Sigma (q_uu - phi_uu omega) v1 v2
inline double second_form(const ProblemSpec& p, const StateTrajectory& y, const BoundaryTrajectory& u,
                          const BoundaryTrajectory& v1, const BoundaryTrajectory& v2, const StateTrajectory& z1,
                          const StateTrajectory& z2, const BoundaryTrajectory& omega)
{
    const Grid& g = p.grid;
    StateTrajectory vol(g);
    BoundaryTrajectory surf(g);
    const auto& o = p.objective;
    for (int n = 0; n <= g.nt(); ++n) {
        for (int j = 0; j < g.ny(); ++j)
            for (int i = 0; i < g.nx(); ++i)
                vol(n, j, i) = o.p_yy(q_point(g, n, j, i), y(n, j, i)) * z1(n, j, i) * z2(n, j, i);
        for (Side s : kSides)
            for (int i = 0; i < g.nx(); ++i) {
                const int j = g.row_of(s);
                const SPoint pt = s_point(g, n, s, i);
                const double yy = y(n, j, i), uu = u(n, s, i), w = omega(n, s, i);
                const double a1 = z1(n, j, i), a2 = z2(n, j, i), b1 = v1(n, s, i), b2 = v2(n, s, i);
                surf(n, s, i) = (o.q_yy(pt, yy, uu) - p.phi.dyy(pt, yy, uu) * w) * a1 * a2 +
                                (o.q_yu(pt, yy, uu) - p.phi.dyu(pt, yy, uu) * w) * (a1 * b2 + a2 * b1) +
                                (o.q_uu(pt, yy, uu) - p.phi.duu(pt, yy, uu) * w) * b1 * b2;
            }
    }
    return integrate_Q(vol) + integrate_Sigma(surf);
}

}  // namespace detail

inline double objective_second_form(const ProblemSpec& p, const BoundaryTrajectory& u, const BoundaryTrajectory& v1,
                                    const BoundaryTrajectory& v2, const SolverOptions& opts = {})
{
    const StateTrajectory y = solve_state(p, u, opts);
    const DerivativeReport first = functional_derivative_at(p, y, u, FunctionalWeights{}, opts);
    const StateTrajectory z1 = solve_linearized(p, y, u, v1, opts);
    const StateTrajectory z2 = solve_linearized(p, y, u, v2, opts);
    return detail::second_form(p, y, u, v1, v2, z1, z2, first.adjoint_trace);
}

struct PrincipalData {
    StateTrajectory f;
    BoundaryTrajectory h;
    SpaceField y0;
};

struct DualityReport {
    double gap = 0.0;
    double scale = 0.0;  // sum of |terms|
    // f z, z h, y0 z(0) on Omega, on Gamma | y g, y r, y(T) z_T on Omega, on Gamma
    std::array<double, 8> terms{};
    double relative() const { return scale > 0.0 ? std::abs(gap) / scale : std::abs(gap); }
};

namespace detail {

inline double integrate_Q_product(const StateTrajectory& a, const StateTrajectory& b)
{
    StateTrajectory prod(a.grid());
    for (std::size_t k = 0; k < prod.values().size(); ++k) prod.values()[k] = a.values()[k] * b.values()[k];
    return integrate_Q(prod);
}

inline std::pair<double, double> slice_product(const Grid& g, std::span<const double> a, std::span<const double> b)
{
    std::vector<double> prod(g.nodes());
    for (std::size_t k = 0; k < prod.size(); ++k) prod[k] = a[k] * b[k];
    return integrate_Omega_and_Gamma(g, prod);
}

}  // namespace detail

/// Residual of the integration-by-parts identity between the principal
/// system (data f, h, y0) and its adjoint (data g, r, z_T):
///   int_Q f z + int_Sigma z h + int_Omega y0 z(0) + int_Gamma y0 z(0)
///   = int_Q y g + int_Sigma y r + int_Omega y(T) z_T + int_Gamma y(T) z_T
/// evaluated with the grid quadratures.
inline DualityReport duality_gap(const Grid& g, const PrincipalData& yd, const AdjointData& zd,
                                 const SolverOptions& opts = {})
{
    const StateTrajectory y = solve_principal(g, yd.f, yd.h, yd.y0, opts);
    const StateTrajectory z = solve_adjoint_principal(g, zd, opts);
    DualityReport rep;
    rep.terms[0] = detail::integrate_Q_product(yd.f, z);
    rep.terms[1] = inner_Sigma(trace(z), yd.h);
    const auto [o0, g0] = detail::slice_product(g, yd.y0, z.level(0));
    rep.terms[2] = o0;
    rep.terms[3] = g0;
    rep.terms[4] = detail::integrate_Q_product(y, zd.g);
    rep.terms[5] = inner_Sigma(trace(y), zd.r);
    const auto [oT, gT] = detail::slice_product(g, y.level(g.nt()), zd.z_T);
    rep.terms[6] = oT;
    rep.terms[7] = gT;
    rep.gap = (rep.terms[0] + rep.terms[1] + rep.terms[2] + rep.terms[3]) -
              (rep.terms[4] + rep.terms[5] + rep.terms[6] + rep.terms[7]);
    for (double t : rep.terms) rep.scale += std::abs(t);
    return rep;
}

}  // namespace venttsel
