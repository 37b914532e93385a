#pragma once

// Implicit Euler solvers for the Venttsel state equation
//
//   D_t y - Laplace y = f                         in Q
//   D_t y - kappa d2y/dx1^2 + d_nu y = phi(y, u)  on Sigma
//   y(., 0) = y0
//
// and for its first and second linearizations. Each time step solves
//   A_n y^n = y^{n-1} / dt + s^n
// where A_n = (1/dt) I + K - scale * diag(phi_y) on the boundary rows.
//
// Boundary closures (NormalStencil):
//   first_order   d_nu y ~ (y_0 - y_1) / hy. Monotone (M-matrix).
//   second_order  d_nu y ~ (3 y_0 - 4 y_1 + y_2) / (2 hy). Not monotone.
//   half_cell     first_order plus the bulk balance over the half cell
//                 [0, hy/2] adjacent to Gamma, divided by (1 + hy/2).
//                 Monotone, O(hy^2), and symmetric in the inner product
//                 whose weights are the Omega-bar plus Gamma quadrature.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "venttsel/grid.hpp"
#include "venttsel/model.hpp"

namespace venttsel {

enum class NormalStencil { first_order, second_order, half_cell };

struct SolverOptions {
    double newton_tol = 1e-12;  // residual inf-norm relative to max(1, |rhs|_inf)
    int newton_max_iter = 50;
    double linear_tol = 1e-11;
    NormalStencil normal_stencil = NormalStencil::half_cell;
};

class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NewtonDivergence : public SolverError {
public:
    NewtonDivergence(int step, double residual)
        : SolverError("Newton iteration did not converge at step " + std::to_string(step) +
                      " (last residual " + std::to_string(residual) + ")"),
          step_(step), residual_(residual)
    {
    }
    int step() const { return step_; }
    double residual() const { return residual_; }

private:
    int step_;
    double residual_;
};

class LinearSolveFailure : public SolverError {
public:
    using SolverError::SolverError;
};

enum class NodeKind { interior, bottom, top };

/// Linearization of one implicit Euler step at a given state.
struct StepOperator {
    Eigen::SparseMatrix<double> matrix;
    std::vector<NodeKind> kinds;
};

namespace detail {

struct BoundaryClosure {
    double scale;       // factor on phi and its derivatives
    double bulk;        // factor on f at boundary nodes
    double tangential;  // effective kappa
    double mass;        // boundary node mass / hx
};

inline BoundaryClosure closure(const Grid& g, NormalStencil s)
{
    if (s == NormalStencil::half_cell) {
        const double half = 0.5 * g.hy();
        const double scale = 1.0 / (1.0 + half);
        return {scale, half * scale, (g.kappa() + half) * scale, 1.0 + half};
    }
    return {1.0, 0.0, g.kappa(), 1.0};
}

/// Node masses m_k: interior hx*hy, boundary hx*closure.mass. The step
/// matrix is symmetric in diag(m) for the first_order and half_cell
/// closures when phi_y vanishes.
inline std::vector<double> node_mass(const Grid& g, NormalStencil s)
{
    const BoundaryClosure c = closure(g, s);
    std::vector<double> m(g.nodes(), g.hx() * g.hy());
    for (Side side : kSides)
        for (int i = 0; i < g.nx(); ++i) m[g.index(g.row_of(side), i)] = g.hx() * c.mass;
    return m;
}

/// Node index of boundary slot k in [0, 2 nx).
inline std::size_t boundary_node(const Grid& g, std::size_t k)
{
    const int side = static_cast<int>(k) / g.nx();
    const int i = static_cast<int>(k) % g.nx();
    return g.index(g.row_of(static_cast<Side>(side)), i);
}

inline Eigen::SparseMatrix<double> assemble_step(const Grid& g, NormalStencil stencil,
                                                 std::span<const double> phi_y)
{
    const int nx = g.nx(), ny = g.ny();
    const double idt = 1.0 / g.dt();
    const double ihx2 = 1.0 / (g.hx() * g.hx());
    const double ihy2 = 1.0 / (g.hy() * g.hy());
    const BoundaryClosure c = closure(g, stencil);

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(g.nodes() * 5 + g.boundary_nodes());
    auto add = [&](std::size_t r, std::size_t col, double v) {
        trip.emplace_back(static_cast<int>(r), static_cast<int>(col), v);
    };

    for (int j = 1; j < ny - 1; ++j) {
        for (int i = 0; i < nx; ++i) {
            const auto row = g.index(j, i);
            add(row, row, idt + 2.0 * ihx2 + 2.0 * ihy2);
            add(row, g.index(j, g.periodic(i - 1)), -ihx2);
            add(row, g.index(j, g.periodic(i + 1)), -ihx2);
            add(row, g.index(j - 1, i), -ihy2);
            add(row, g.index(j + 1, i), -ihy2);
        }
    }

    const double tang = c.tangential * ihx2;
    for (Side side : kSides) {
        const int j0 = g.row_of(side);
        const int step = side == Side::bottom ? 1 : -1;
        for (int i = 0; i < nx; ++i) {
            const auto row = g.index(j0, i);
            const std::size_t k = static_cast<std::size_t>(static_cast<int>(side)) * nx + i;
            double diag = idt + 2.0 * tang - c.scale * phi_y[k];
            add(row, g.index(j0, g.periodic(i - 1)), -tang);
            add(row, g.index(j0, g.periodic(i + 1)), -tang);
            switch (stencil) {
            case NormalStencil::first_order:
                diag += 1.0 / g.hy();
                add(row, g.index(j0 + step, i), -1.0 / g.hy());
                break;
            case NormalStencil::half_cell:
                diag += c.scale / g.hy();
                add(row, g.index(j0 + step, i), -c.scale / g.hy());
                break;
            case NormalStencil::second_order:
                diag += 1.5 / g.hy();
                add(row, g.index(j0 + step, i), -2.0 / g.hy());
                add(row, g.index(j0 + 2 * step, i), 0.5 / g.hy());
                break;
            }
            add(row, row, diag);
        }
    }

    Eigen::SparseMatrix<double> A(static_cast<int>(g.nodes()), static_cast<int>(g.nodes()));
    A.setFromTriplets(trip.begin(), trip.end());
    A.makeCompressed();
    return A;
}

/// Factorizes step matrices and reuses the factorization while phi_y is unchanged.
class StepSolver {
public:
    StepSolver(const Grid& g, const SolverOptions& opts) : grid_(g), opts_(opts) {}

    void set_phi_y(std::span<const double> phi_y)
    {
        if (factored_ && std::equal(phi_y.begin(), phi_y.end(), phi_y_.begin(), phi_y_.end())) return;
        phi_y_.assign(phi_y.begin(), phi_y.end());
        matrix_ = assemble_step(grid_, opts_.normal_stencil, phi_y_);
        if (!analyzed_) {
            lu_.analyzePattern(matrix_);
            analyzed_ = true;
        }
        lu_.factorize(matrix_);
        if (lu_.info() != Eigen::Success) {
            factored_ = false;
            throw LinearSolveFailure("step matrix factorization failed: " + lu_.lastErrorMessage());
        }
        factored_ = true;
    }

    const Eigen::SparseMatrix<double>& matrix() const { return matrix_; }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return solve_impl(rhs, false); }
    Eigen::VectorXd solve_transposed(const Eigen::VectorXd& rhs) const { return solve_impl(rhs, true); }

private:
    Eigen::VectorXd apply(const Eigen::VectorXd& x, bool transposed) const
    {
        if (transposed) return matrix_.transpose() * x;
        return matrix_ * x;
    }

    Eigen::VectorXd solve_impl(const Eigen::VectorXd& rhs, bool transposed) const
    {
        auto raw = [&](const Eigen::VectorXd& b) -> Eigen::VectorXd {
            if (transposed) return lu_.transpose().solve(b);
            return lu_.solve(b);
        };
        Eigen::VectorXd x = raw(rhs);
        const double scale = std::max(1.0, rhs.cwiseAbs().maxCoeff());
        Eigen::VectorXd r = rhs - apply(x, transposed);
        if (!std::isfinite(r.cwiseAbs().maxCoeff()) || r.cwiseAbs().maxCoeff() > opts_.linear_tol * scale) {
            x += raw(r);  // one step of iterative refinement
            r = rhs - apply(x, transposed);
            const double res = r.cwiseAbs().maxCoeff();
            if (!std::isfinite(res) || res > opts_.linear_tol * scale) {
                throw LinearSolveFailure("linear step solve residual " + std::to_string(res) +
                                         " exceeds tolerance");
            }
        }
        return x;
    }

    Grid grid_;
    SolverOptions opts_;
    Eigen::SparseMatrix<double> matrix_;
    mutable Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu_;
    std::vector<double> phi_y_;
    bool analyzed_ = false;
    bool factored_ = false;
};

inline void check_controls(const ProblemSpec& p, const BoundaryTrajectory& u, const char* what)
{
    require_same_grid(p.grid, u.grid(), what);
}

/// phi_y(., y^n, u^n) on the 2 nx boundary slots of level n.
inline std::vector<double> phi_y_level(const ProblemSpec& p, const StateTrajectory& y, const BoundaryTrajectory& u,
                                       int n)
{
    const Grid& g = p.grid;
    std::vector<double> out(g.boundary_nodes());
    for (Side s : kSides)
        for (int i = 0; i < g.nx(); ++i)
            out[static_cast<std::size_t>(s) * g.nx() + i] =
                p.phi.dy(s_point(g, n, s, i), y(n, g.row_of(s), i), u(n, s, i));
    return out;
}

inline Eigen::VectorXd to_eigen(std::span<const double> v)
{
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Marches A_n z^n = z^{n-1}/dt + s^n for n = 1..nt.
/// phi_y_at(n) returns the boundary phi_y of level n; add_source(n, rhs) adds s^n.
template <class PhiY, class Source>
StateTrajectory march_linear(const Grid& g, const SolverOptions& opts, std::span<const double> initial,
                             PhiY&& phi_y_at, Source&& add_source)
{
    StateTrajectory z(g);
    std::copy(initial.begin(), initial.end(), z.level(0).begin());
    StepSolver solver(g, opts);
    const double idt = 1.0 / g.dt();
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(g.nodes()));
    for (int n = 1; n <= g.nt(); ++n) {
        solver.set_phi_y(phi_y_at(n));
        auto prev = z.level(n - 1);
        for (std::size_t k = 0; k < g.nodes(); ++k) rhs[static_cast<Eigen::Index>(k)] = prev[k] * idt;
        add_source(n, rhs);
        const Eigen::VectorXd x = solver.solve(rhs);
        std::copy(x.data(), x.data() + x.size(), z.level(n).begin());
    }
    return z;
}

}  // namespace detail

/// Semilinear state solve y = G(u): Newton iteration per implicit Euler step.
inline StateTrajectory solve_state(const ProblemSpec& p, const BoundaryTrajectory& u, const SolverOptions& opts = {})
{
    detail::check_controls(p, u, "solve_state");
    const Grid& g = p.grid;
    if (p.y0.size() != g.nodes()) throw std::invalid_argument("solve_state: y0 shape mismatch");
    const auto c = detail::closure(g, opts.normal_stencil);
    const Eigen::Index N = static_cast<Eigen::Index>(g.nodes());
    const std::size_t nb = g.boundary_nodes();

    const Eigen::SparseMatrix<double> base = detail::assemble_step(g, opts.normal_stencil,
                                                                   std::vector<double>(nb, 0.0));
    detail::StepSolver solver(g, opts);
    StateTrajectory y(g);
    std::copy(p.y0.begin(), p.y0.end(), y.level(0).begin());

    Eigen::VectorXd rhs(N), cur(N), res(N);
    std::vector<double> phi_y(nb);
    const double idt = 1.0 / g.dt();

    for (int n = 1; n <= g.nt(); ++n) {
        auto prev = y.level(n - 1);
        auto fn = p.f.level(n);
        for (Eigen::Index k = 0; k < N; ++k) {
            rhs[k] = prev[static_cast<std::size_t>(k)] * idt + fn[static_cast<std::size_t>(k)];
            cur[k] = prev[static_cast<std::size_t>(k)];
        }
        for (std::size_t k = 0; k < nb; ++k) {
            const auto node = static_cast<Eigen::Index>(detail::boundary_node(g, k));
            rhs[node] = prev[static_cast<std::size_t>(node)] * idt + c.bulk * fn[static_cast<std::size_t>(node)];
        }
        const double scale = std::max(1.0, rhs.cwiseAbs().maxCoeff());

        double last = 0.0;
        bool converged = false;
        for (int it = 0; it <= opts.newton_max_iter; ++it) {
            res = base * cur - rhs;
            for (std::size_t k = 0; k < nb; ++k) {
                const auto node = static_cast<Eigen::Index>(detail::boundary_node(g, k));
                const Side s = static_cast<Side>(static_cast<int>(k) / g.nx());
                const int i = static_cast<int>(k) % g.nx();
                const SPoint pt = s_point(g, n, s, i);
                res[node] -= c.scale * p.phi.value(pt, cur[node], u(n, s, i));
                phi_y[k] = p.phi.dy(pt, cur[node], u(n, s, i));
            }
            last = res.cwiseAbs().maxCoeff();
            if (!std::isfinite(last)) break;
            if (last <= opts.newton_tol * scale) {
                converged = true;
                break;
            }
            if (it == opts.newton_max_iter) break;
            solver.set_phi_y(phi_y);
            const Eigen::VectorXd delta = solver.solve(res);
            cur -= delta;
            // Stagnation at round-off level counts as converged.
            if (delta.cwiseAbs().maxCoeff() <= 4e-16 * std::max(1.0, cur.cwiseAbs().maxCoeff()) &&
                last <= 1e3 * opts.newton_tol * scale) {
                converged = true;
                break;
            }
        }
        if (!converged) throw NewtonDivergence(n, last);
        std::copy(cur.data(), cur.data() + N, y.level(n).begin());
    }
    return y;
}

/// z = <G'(u), v>: zero data, boundary source phi_y z + phi_u v.
inline StateTrajectory solve_linearized(const ProblemSpec& p, const StateTrajectory& base, const BoundaryTrajectory& u,
                                        const BoundaryTrajectory& v, const SolverOptions& opts = {})
{
    detail::check_controls(p, u, "solve_linearized(u)");
    detail::check_controls(p, v, "solve_linearized(v)");
    const Grid& g = p.grid;
    const auto c = detail::closure(g, opts.normal_stencil);
    const SpaceField zero(g.nodes(), 0.0);
    return detail::march_linear(
        g, opts, zero, [&](int n) { return detail::phi_y_level(p, base, u, n); },
        [&](int n, Eigen::VectorXd& rhs) {
            for (Side s : kSides)
                for (int i = 0; i < g.nx(); ++i) {
                    const int j = g.row_of(s);
                    rhs[static_cast<Eigen::Index>(g.index(j, i))] +=
                        c.scale * p.phi.du(s_point(g, n, s, i), base(n, j, i), u(n, s, i)) * v(n, s, i);
                }
        });
}

/// z12 = <G''(u), (v1, v2)> given z1 = G'(u) v1 and z2 = G'(u) v2.
inline StateTrajectory solve_second_linearized(const ProblemSpec& p, const StateTrajectory& base,
                                               const BoundaryTrajectory& u, const BoundaryTrajectory& v1,
                                               const BoundaryTrajectory& v2, const StateTrajectory& z1,
                                               const StateTrajectory& z2, const SolverOptions& opts = {})
{
    const Grid& g = p.grid;
    const auto c = detail::closure(g, opts.normal_stencil);
    const SpaceField zero(g.nodes(), 0.0);
    return detail::march_linear(
        g, opts, zero, [&](int n) { return detail::phi_y_level(p, base, u, n); },
        [&](int n, Eigen::VectorXd& rhs) {
            for (Side s : kSides)
                for (int i = 0; i < g.nx(); ++i) {
                    const int j = g.row_of(s);
                    const SPoint pt = s_point(g, n, s, i);
                    const double y = base(n, j, i), uu = u(n, s, i);
                    const double a1 = z1(n, j, i), a2 = z2(n, j, i);
                    const double b1 = v1(n, s, i), b2 = v2(n, s, i);
                    const double src = p.phi.dyy(pt, y, uu) * a1 * a2 + p.phi.dyu(pt, y, uu) * (a1 * b2 + a2 * b1) +
                                       p.phi.duu(pt, y, uu) * b1 * b2;
                    rhs[static_cast<Eigen::Index>(g.index(j, i))] += c.scale * src;
                }
        });
}

/// Linear principal system with prescribed boundary data h (phi = h).
inline StateTrajectory solve_principal(const Grid& g, const StateTrajectory& f, const BoundaryTrajectory& h,
                                       const SpaceField& y0, const SolverOptions& opts = {})
{
    require_same_grid(g, f.grid(), "solve_principal(f)");
    require_same_grid(g, h.grid(), "solve_principal(h)");
    if (y0.size() != g.nodes()) throw std::invalid_argument("solve_principal: y0 shape mismatch");
    const auto c = detail::closure(g, opts.normal_stencil);
    const std::vector<double> no_coupling(g.boundary_nodes(), 0.0);
    return detail::march_linear(
        g, opts, y0, [&](int) { return no_coupling; },
        [&](int n, Eigen::VectorXd& rhs) {
            auto fn = f.level(n);
            for (int j = 0; j < g.ny(); ++j)
                for (int i = 0; i < g.nx(); ++i) {
                    const auto k = g.index(j, i);
                    if (!g.is_boundary_row(j)) rhs[static_cast<Eigen::Index>(k)] += fn[k];
                }
            for (Side s : kSides)
                for (int i = 0; i < g.nx(); ++i) {
                    const auto k = g.index(g.row_of(s), i);
                    rhs[static_cast<Eigen::Index>(k)] += c.scale * h(n, s, i) + c.bulk * fn[k];
                }
        });
}

inline StepOperator step_jacobian(const ProblemSpec& p, const StateTrajectory& base, const BoundaryTrajectory& u,
                                  int level, const SolverOptions& opts = {})
{
    const Grid& g = p.grid;
    if (level < 1 || level > g.nt()) {
        throw std::out_of_range("step_jacobian: level " + std::to_string(level) + " out of range");
    }
    StepOperator op;
    op.matrix = detail::assemble_step(g, opts.normal_stencil, detail::phi_y_level(p, base, u, level));
    op.kinds.assign(g.nodes(), NodeKind::interior);
    for (int i = 0; i < g.nx(); ++i) {
        op.kinds[g.index(0, i)] = NodeKind::bottom;
        op.kinds[g.index(g.ny() - 1, i)] = NodeKind::top;
    }
    return op;
}

}  // namespace venttsel
