#pragma once

// Optimizers and optimality checks on the discrete problem.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "venttsel/adjoint.hpp"
#include "venttsel/forward.hpp"
#include "venttsel/grid.hpp"
#include "venttsel/model.hpp"

namespace venttsel {

struct OptimizeOptions {
    int max_iter = 500;
    double grad_tol = 1e-8;  // projected-gradient max-norm
    double armijo_c = 1e-4;
    double backtrack_factor = 0.5;
    double initial_step = 1.0;
    double picard_damping = 1.0;
    double al_penalty = 10.0;
    double al_penalty_growth = 10.0;
    int al_outer_iters = 20;
    double al_feas_tol = 1e-8;

    void validate() const
    {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(name) + " must be positive");
        };
        if (max_iter < 1) throw std::invalid_argument("max_iter must be positive");
        if (al_outer_iters < 1) throw std::invalid_argument("al_outer_iters must be positive");
        positive(grad_tol, "grad_tol");
        positive(armijo_c, "armijo_c");
        positive(initial_step, "initial_step");
        positive(al_penalty, "al_penalty");
        positive(al_feas_tol, "al_feas_tol");
        if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0))
            throw std::invalid_argument("backtrack_factor must lie in (0, 1)");
        if (!(picard_damping > 0.0 && picard_damping <= 1.0))
            throw std::invalid_argument("picard_damping must lie in (0, 1]");
        if (!(al_penalty_growth >= 1.0)) throw std::invalid_argument("al_penalty_growth must be >= 1");
    }
};

class LineSearchFailure : public SolverError {
public:
    LineSearchFailure(int iteration, double step)
        : SolverError("no Armijo decrease after 60 backtracks at iteration " + std::to_string(iteration) +
                      " (last step " + std::to_string(step) + ")")
    {
    }
};

struct KKTReport {
    std::vector<double> multipliers;
    double stationarity = 0.0;
    std::vector<double> feasibility;
    std::vector<double> complementarity;  // 0 for equalities
    std::vector<std::size_t> active;
    std::vector<double> constraint_values;
    int outer_iterations = 0;
    double penalty = 0.0;
};

class NonConvergence : public SolverError {
public:
    NonConvergence(const std::string& what, BoundaryTrajectory best, std::optional<KKTReport> report = std::nullopt)
        : SolverError(what), best_(std::move(best)), report_(std::move(report))
    {
    }
    const BoundaryTrajectory& best() const { return best_; }
    const std::optional<KKTReport>& report() const { return report_; }

private:
    BoundaryTrajectory best_;
    std::optional<KKTReport> report_;
};

struct IterationRecord {
    int iteration = 0;
    double value = 0.0;
    double pg_norm = 0.0;    // ||u - clip(u - grad)||_inf before the step
    double step = 0.0;       // accepted alpha
    double decrease = 0.0;   // J(u_k) - J(u_{k+1})
    double required = 0.0;   // (c / alpha) ||u_{k+1} - u_k||^2_Sigma
};

struct OptimizeResult {
    BoundaryTrajectory u;
    double value = 0.0;
    BoundaryTrajectory gradient;
    double pg_norm = 0.0;
    bool converged = false;
    int iterations = 0;
    std::vector<IterationRecord> history;
};

inline void clip(BoundaryTrajectory& u, const std::optional<ControlBounds>& b)
{
    if (!b) return;
    auto& v = u.values();
    const auto& lo = b->lower.values();
    const auto& hi = b->upper.values();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = std::min(std::max(v[k], lo[k]), hi[k]);
}

/// ||u - clip(u - grad)||_inf
inline double projected_gradient_norm(const BoundaryTrajectory& u, const BoundaryTrajectory& grad,
                                      const std::optional<ControlBounds>& b)
{
    BoundaryTrajectory trial = u;
    for (std::size_t k = 0; k < trial.values().size(); ++k) trial.values()[k] -= grad.values()[k];
    clip(trial, b);
    double m = 0.0;
    for (std::size_t k = 0; k < trial.values().size(); ++k)
        m = std::max(m, std::abs(u.values()[k] - trial.values()[k]));
    return m;
}

namespace detail {

struct ValueAndGradient {
    double value;
    BoundaryTrajectory gradient;
};

inline BoundaryTrajectory difference(const BoundaryTrajectory& a, const BoundaryTrajectory& b)
{
    BoundaryTrajectory d = a;
    for (std::size_t k = 0; k < d.values().size(); ++k) d.values()[k] -= b.values()[k];
    return d;
}

constexpr int kMaxBacktracks = 60;
constexpr double kRoundoffDecrease = 1e-13;

/// Projected gradient with monotone Armijo backtracking. The first trial step
/// is initial_step; later iterations start from the Barzilai-Borwein step.
template <class Value, class Derivative>
OptimizeResult projected_gradient_on(const std::optional<ControlBounds>& bounds, BoundaryTrajectory u,
                                     const OptimizeOptions& opts, Value&& value_of, Derivative&& derivative_of)
{
    clip(u, bounds);
    ValueAndGradient cur = derivative_of(u);
    OptimizeResult res{u, cur.value, cur.gradient, 0.0, false, 0, {}};
    std::optional<BoundaryTrajectory> prev_u, prev_g;
    for (int k = 0; k < opts.max_iter; ++k) {
        const double pg = projected_gradient_norm(u, cur.gradient, bounds);
        res.pg_norm = pg;
        if (pg <= opts.grad_tol) {
            res.converged = true;
            break;
        }
        double alpha = opts.initial_step;
        if (prev_u) {
            const BoundaryTrajectory s = difference(u, *prev_u);
            const BoundaryTrajectory y = difference(cur.gradient, *prev_g);
            const double sy = inner_Sigma(s, y);
            const double ss = inner_Sigma(s, s);
            if (sy > 0.0 && ss > 0.0) alpha = std::clamp(ss / sy, 1e-10, 1e10);
        }
        bool accepted = false;
        for (int bt = 0; bt <= kMaxBacktracks; ++bt) {
            BoundaryTrajectory trial = u;
            for (std::size_t i = 0; i < trial.values().size(); ++i)
                trial.values()[i] -= alpha * cur.gradient.values()[i];
            clip(trial, bounds);
            const BoundaryTrajectory step = difference(trial, u);
            const double step_sq = inner_Sigma(step, step);
            const double required = opts.armijo_c / alpha * step_sq;
            const double trial_value = value_of(trial);
            const double noise = kRoundoffDecrease * std::max(1.0, std::abs(cur.value));
            if (step_sq > 0.0 && std::isfinite(trial_value) && trial_value <= cur.value + noise) {
                double decrease = cur.value - trial_value;
                std::optional<ValueAndGradient> next;
                if (decrease < required && std::abs(decrease) <= noise) {
                    // J differences are lost to round-off here; use the trapezoid
                    // estimate -<grad(u) + grad(trial), step>/2, exact for quadratics.
                    next = derivative_of(trial);
                    decrease = -0.5 * (inner_Sigma(cur.gradient, step) + inner_Sigma(next->gradient, step));
                }
                if (decrease >= required) {
                    res.history.push_back({k, cur.value, pg, alpha, cur.value - trial_value, required});
                    prev_u = u;
                    prev_g = cur.gradient;
                    u = std::move(trial);
                    cur = next ? std::move(*next) : derivative_of(u);
                    accepted = true;
                    break;
                }
            }
            alpha *= opts.backtrack_factor;
        }
        if (!accepted) throw LineSearchFailure(k, alpha);
        res.iterations = k + 1;
    }
    if (!res.converged) res.pg_norm = projected_gradient_norm(u, cur.gradient, bounds);
    res.converged = res.pg_norm <= opts.grad_tol;
    res.u = std::move(u);
    res.value = cur.value;
    res.gradient = std::move(cur.gradient);
    return res;
}

}  // namespace detail

/// Minimizes J_h over the box of `bounds` (or unconstrained if absent).
inline OptimizeResult projected_gradient(const ProblemSpec& p, const std::optional<ControlBounds>& bounds,
                                         const BoundaryTrajectory& u0, const OptimizeOptions& opts = {},
                                         const SolverOptions& sopts = {})
{
    opts.validate();
    require_same_grid(p.grid, u0.grid(), "projected_gradient(u0)");
    if (bounds) {
        require_same_grid(p.grid, bounds->lower.grid(), "projected_gradient(lower)");
        require_same_grid(p.grid, bounds->upper.grid(), "projected_gradient(upper)");
    }
    return detail::projected_gradient_on(
        bounds, u0, opts, [&](const BoundaryTrajectory& u) { return objective_value(p, u, sopts); },
        [&](const BoundaryTrajectory& u) {
            DerivativeReport r = objective_gradient(p, u, sopts);
            return detail::ValueAndGradient{r.value, std::move(r.gradient)};
        });
}

struct PicardResult {
    BoundaryTrajectory u;
    StateTrajectory y;
    StateTrajectory w;
    BoundaryTrajectory w_trace;  // adjoint as seen by the control
    double residual = 0.0;       // ||beta u - w||_inf
    int iterations = 0;
    std::vector<double> history;  // residual per iteration
};

/// Damped fixed point u <- (1 - omega) u + (omega / beta) w(u) for the
/// quadratic tracking problem, stopped when ||beta u - w(u)||_inf <= grad_tol * beta.
inline PicardResult picard_optimality_system(const ProblemSpec& p, const OptimizeOptions& opts = {},
                                             const SolverOptions& sopts = {},
                                             std::optional<BoundaryTrajectory> u0 = std::nullopt)
{
    opts.validate();
    if (!p.tracking_beta) throw std::invalid_argument("picard_optimality_system: needs the quadratic tracking preset");
    if (p.bounds) throw std::invalid_argument("picard_optimality_system: problem must not carry control bounds");
    const double beta = *p.tracking_beta;
    const double omega = opts.picard_damping;
    BoundaryTrajectory u = u0 ? *u0 : BoundaryTrajectory(p.grid);
    std::vector<double> history;
    for (int k = 0; k <= opts.max_iter; ++k) {
        DerivativeReport r = objective_gradient(p, u, sopts);
        double res = 0.0;
        for (std::size_t i = 0; i < u.values().size(); ++i)
            res = std::max(res, std::abs(beta * u.values()[i] - r.adjoint_trace.values()[i]));
        history.push_back(res);
        if (res <= opts.grad_tol * beta) {
            return {std::move(u), std::move(r.state), std::move(r.adjoint), std::move(r.adjoint_trace), res, k,
                    std::move(history)};
        }
        if (k == opts.max_iter) break;
        for (std::size_t i = 0; i < u.values().size(); ++i)
            u.values()[i] = (1.0 - omega) * u.values()[i] + omega / beta * r.adjoint_trace.values()[i];
    }
    throw NonConvergence("Picard iteration did not converge in " + std::to_string(opts.max_iter) +
                             " iterations; try a smaller picard_damping",
                         u);
}

namespace detail {

inline double constraint_violation(const ProblemSpec& p, const std::vector<double>& F, const std::vector<double>& lambda)
{
    double v = 0.0;
    for (std::size_t i = 0; i < F.size(); ++i) {
        if (p.constraints[i].kind == ConstraintKind::equality) {
            v = std::max(v, std::abs(F[i]));
        } else {
            v = std::max(v, std::max(0.0, F[i]));
            v = std::max(v, std::abs(lambda[i] * F[i]));
        }
    }
    return v;
}

inline double al_weight(ConstraintKind kind, double lambda, double rho, double F)
{
    const double m = lambda + rho * F;
    return kind == ConstraintKind::equality ? m : std::max(0.0, m);
}

inline KKTReport kkt_report(const ProblemSpec& p, const std::optional<ControlBounds>& bounds,
                            const BoundaryTrajectory& u, const std::vector<double>& lambda, double feas_tol,
                            const SolverOptions& sopts)
{
    const StateTrajectory y = solve_state(p, u, sopts);
    KKTReport rep;
    rep.multipliers = lambda;
    const DerivativeReport d = functional_derivative_at(p, y, u, FunctionalWeights{1.0, lambda}, sopts);
    rep.stationarity = projected_gradient_norm(u, d.gradient, bounds);
    for (std::size_t i = 0; i < p.constraints.size(); ++i) {
        const double F = constraint_value_of(p, y, i);
        const bool eq = p.constraints[i].kind == ConstraintKind::equality;
        rep.constraint_values.push_back(F);
        rep.feasibility.push_back(eq ? std::abs(F) : std::max(0.0, F));
        rep.complementarity.push_back(eq ? 0.0 : std::abs(lambda[i] * F));
        if (eq || std::abs(F) <= feas_tol) rep.active.push_back(i);
    }
    return rep;
}

}  // namespace detail

struct ALResult {
    BoundaryTrajectory u;
    KKTReport report;
};

/// Method of multipliers for the integral state constraints of `p`
/// (equalities F_i = 0, inequalities F_i <= 0) on the control box `bounds`.
/// Each inner problem is solved by projected gradient.
inline ALResult augmented_lagrangian(const ProblemSpec& p, const std::optional<ControlBounds>& bounds,
                                     const BoundaryTrajectory& u0, const OptimizeOptions& opts = {},
                                     const SolverOptions& sopts = {})
{
    opts.validate();
    if (p.constraints.empty()) throw std::invalid_argument("augmented_lagrangian: no constraints");
    const std::size_t m = p.constraints.size();
    std::vector<double> lambda(m, 0.0);
    double rho = opts.al_penalty;
    double prev_violation = std::numeric_limits<double>::infinity();
    BoundaryTrajectory u = u0;
    clip(u, bounds);

    auto constraint_values = [&](const StateTrajectory& y) {
        std::vector<double> F(m);
        for (std::size_t i = 0; i < m; ++i) F[i] = constraint_value_of(p, y, i);
        return F;
    };
    auto al_value = [&](const StateTrajectory& y, const BoundaryTrajectory& uu) {
        const std::vector<double> F = constraint_values(y);
        double v = objective_value_of(p, y, uu);
        for (std::size_t i = 0; i < m; ++i) {
            if (p.constraints[i].kind == ConstraintKind::equality) {
                v += lambda[i] * F[i] + 0.5 * rho * F[i] * F[i];
            } else {
                const double t = std::max(0.0, lambda[i] + rho * F[i]);
                v += (t * t - lambda[i] * lambda[i]) / (2.0 * rho);
            }
        }
        return v;
    };

    KKTReport report;
    for (int outer = 1; outer <= opts.al_outer_iters; ++outer) {
        const OptimizeResult inner = detail::projected_gradient_on(
            bounds, u, opts, [&](const BoundaryTrajectory& uu) { return al_value(solve_state(p, uu, sopts), uu); },
            [&](const BoundaryTrajectory& uu) {
                const StateTrajectory y = solve_state(p, uu, sopts);
                const std::vector<double> F = constraint_values(y);
                FunctionalWeights w{1.0, std::vector<double>(m)};
                for (std::size_t i = 0; i < m; ++i)
                    w.constraints[i] = detail::al_weight(p.constraints[i].kind, lambda[i], rho, F[i]);
                DerivativeReport d = functional_derivative_at(p, y, uu, w, sopts);
                return detail::ValueAndGradient{al_value(y, uu), std::move(d.gradient)};
            });
        u = inner.u;
        const std::vector<double> F = constraint_values(solve_state(p, u, sopts));
        for (std::size_t i = 0; i < m; ++i) lambda[i] = detail::al_weight(p.constraints[i].kind, lambda[i], rho, F[i]);
        const double violation = detail::constraint_violation(p, F, lambda);
        report = detail::kkt_report(p, bounds, u, lambda, opts.al_feas_tol, sopts);
        report.outer_iterations = outer;
        report.penalty = rho;
        if (inner.converged && violation <= opts.al_feas_tol && report.stationarity <= 10.0 * opts.grad_tol) {
            return {std::move(u), std::move(report)};
        }
        if (violation > 0.25 * prev_violation) rho *= opts.al_penalty_growth;
        prev_violation = violation;
    }
    throw NonConvergence("augmented Lagrangian did not converge in " + std::to_string(opts.al_outer_iters) +
                             " outer iterations",
                         u, report);
}

/// Quadratic form of the second-order condition along v, with w the adjoint
/// state of the objective at u (as returned in DerivativeReport::adjoint).
inline double check_second_order(const ProblemSpec& p, const BoundaryTrajectory& u, const BoundaryTrajectory& v,
                                 const StateTrajectory& w, const SolverOptions& sopts = {})
{
    const StateTrajectory y = solve_state(p, u, sopts);
    const StateTrajectory z = solve_linearized(p, y, u, v, sopts);
    return detail::second_form(p, y, u, v, v, z, z, control_aligned_trace(w));
}

struct RegularityReport {
    bool regular = true;
    Eigen::MatrixXd gram;
    std::vector<char> mask;  // per Sigma slot, 1 inside Gamma_eps
    std::vector<std::size_t> active;
    double condition = 1.0;
    std::string diagnostic;
};

inline constexpr double kRegularityMaxCondition = 1e8;

/// Checks that the active constraint gradients stay linearly independent
/// when restricted to Gamma_eps, via the Gram matrix
/// M_ij = <F_i'(u), 1_{Gamma_eps} F_j'(u)>_Sigma.
inline RegularityReport check_regularity(const ProblemSpec& p, const BoundaryTrajectory& u, double epsilon,
                                         double active_tol = 1e-8, const SolverOptions& sopts = {})
{
    RegularityReport rep;
    if (!(epsilon > 0.0)) {
        rep.regular = false;
        rep.diagnostic = "epsilon must be positive";
        return rep;
    }
    const std::size_t slots = u.values().size();
    rep.mask.assign(slots, 1);
    if (p.bounds) {
        const auto& lo = p.bounds->lower.values();
        const auto& hi = p.bounds->upper.values();
        for (std::size_t k = 0; k < slots; ++k)
            rep.mask[k] = (lo[k] + epsilon <= u.values()[k] && u.values()[k] <= hi[k] - epsilon) ? 1 : 0;
    }
    const StateTrajectory y = solve_state(p, u, sopts);
    for (std::size_t i = 0; i < p.constraints.size(); ++i) {
        const double F = constraint_value_of(p, y, i);
        if (p.constraints[i].kind == ConstraintKind::equality || std::abs(F) <= active_tol) rep.active.push_back(i);
    }
    const std::size_t a = rep.active.size();
    rep.gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
    if (a == 0) return rep;

    std::vector<BoundaryTrajectory> grads;
    for (std::size_t i : rep.active) {
        FunctionalWeights w{0.0, std::vector<double>(i + 1, 0.0)};
        w.constraints[i] = 1.0;
        grads.push_back(functional_derivative_at(p, y, u, w, sopts).gradient);
    }
    for (std::size_t r = 0; r < a; ++r) {
        BoundaryTrajectory masked = grads[r];
        for (std::size_t k = 0; k < slots; ++k)
            if (!rep.mask[k]) masked.values()[k] = 0.0;
        for (std::size_t c = 0; c < a; ++c)
            rep.gram(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r)) = inner_Sigma(grads[c], masked);
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(rep.gram);
    const auto& sv = svd.singularValues();
    const double smax = sv(0), smin = sv(sv.size() - 1);
    rep.condition = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    rep.regular = smax > 0.0 && rep.condition <= kRegularityMaxCondition;
    if (!rep.regular) {
        rep.diagnostic = "Gram matrix of masked active constraint gradients is singular or ill-conditioned (cond = " +
                         std::to_string(rep.condition) + ")";
    }
    return rep;
}

}  // namespace venttsel
