#pragma once

// Command front end. A run reads a JSON config, builds the problem from the
// registry, executes one command and writes report.json (plus CSV and
// optional binary dumps) into the output directory.
//
// Exit codes: 0 success, 1 solver failure or failed check, 2 config error.
// A config error leaves the output directory untouched.

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "venttsel/adjoint.hpp"
#include "venttsel/field_io.hpp"
#include "venttsel/forward.hpp"
#include "venttsel/grid.hpp"
#include "venttsel/model.hpp"
#include "venttsel/optimize.hpp"
#include "venttsel/random.hpp"
#include "venttsel/registry.hpp"

namespace venttsel::cli {

using nlohmann::json;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& commands()
{
    static const std::vector<std::string> names = {
        "solve",        "adjoint",         "duality-check", "grad-check",         "hess-check",      "mms-convergence",
        "optimize-box", "optimize-picard", "optimize-kkt",  "second-order-check", "regularity-check"};
    return names;
}

/// Field recipes: zero | constant{value} | mode{amplitude, k, m, decay} | mms_1.
/// mode is amplitude * cos(2 pi k x1 / L + phase) cos(m pi x2) e^{-decay t};
/// on Sigma the x2 factor is dropped.
struct FieldSpec {
    std::string kind = "zero";
    double value = 0.0;
    double amplitude = 1.0;
    int k = 1;
    int m = 0;
    double decay = 0.0;
    double phase = 0.0;
};

struct ConstraintSpec {
    std::string name;
    ConstraintKind kind = ConstraintKind::inequality;
    std::string a = "zero";
    std::string b = "zero";
    double offset = 0.0;
};

struct CheckSpec {
    int directions = 5;
    double lambda = 1e-4;
    double second_lambda = 1e-3;
    std::optional<double> tolerance;
    double epsilon = 1e-3;
    int variational_samples = 20;
    std::vector<std::array<int, 3>> refinements = {{16, 5, 25}, {32, 9, 100}, {64, 17, 400}};
};

struct RunConfig {
    DomainSpec domain;
    int nx = 32, ny = 9, nt = 64;
    std::string preset = "quadratic";
    std::string phi = "phi_identity";
    double sigma = 0.0;
    double beta = 1.0;
    FieldSpec y_g, f, y0, control;
    std::optional<std::pair<double, double>> bounds;
    std::vector<ConstraintSpec> constraints;
    SolverOptions solver;
    OptimizeOptions optimize;
    CheckSpec check;
    std::uint64_t seed = 1;
};

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback)
{
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("field '") + key + "': " + e.what());
    }
}

inline void only_keys(const json& j, const char* section, std::initializer_list<const char*> allowed)
{
    if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }))
            throw ConfigError(std::string(section) + ": unknown key '" + it.key() + "'");
    }
}

inline FieldSpec parse_field(const json& j, const char* where)
{
    FieldSpec s;
    if (j.is_string()) {
        s.kind = j.get<std::string>();
    } else {
        only_keys(j, where, {"kind", "value", "amplitude", "k", "m", "decay", "phase"});
        s.kind = get_or<std::string>(j, "kind", "zero");
        s.value = get_or(j, "value", 0.0);
        s.amplitude = get_or(j, "amplitude", 1.0);
        s.k = get_or(j, "k", 1);
        s.m = get_or(j, "m", 0);
        s.decay = get_or(j, "decay", 0.0);
        s.phase = get_or(j, "phase", 0.0);
    }
    if (s.kind != "zero" && s.kind != "constant" && s.kind != "mode" && s.kind != "mms_1")
        throw ConfigError(std::string(where) + ": unknown field kind '" + s.kind + "'");
    if (s.k < 0 || s.m < 0) throw ConfigError(std::string(where) + ": mode numbers must be >= 0");
    return s;
}

inline NormalStencil parse_stencil(const std::string& s)
{
    if (s == "1" || s == "first_order") return NormalStencil::first_order;
    if (s == "2" || s == "second_order") return NormalStencil::second_order;
    if (s == "half-cell" || s == "half_cell") return NormalStencil::half_cell;
    throw ConfigError("unknown normal stencil '" + s + "' (expected 1, 2 or half-cell)");
}

inline std::string stencil_name(NormalStencil s)
{
    switch (s) {
    case NormalStencil::first_order: return "first_order";
    case NormalStencil::second_order: return "second_order";
    case NormalStencil::half_cell: return "half_cell";
    }
    return "?";
}

}  // namespace detail

inline RunConfig parse_config(const json& j)
{
    using detail::get_or;
    detail::only_keys(j, "config", {"domain", "grid", "problem", "solver", "optimize", "check", "seed"});
    RunConfig c;
    if (j.contains("domain")) {
        const json& d = j["domain"];
        detail::only_keys(d, "domain", {"L", "T", "kappa"});
        c.domain.L = get_or(d, "L", 1.0);
        c.domain.T = get_or(d, "T", 1.0);
        c.domain.kappa = get_or(d, "kappa", 1.0);
    }
    if (j.contains("grid")) {
        const json& g = j["grid"];
        detail::only_keys(g, "grid", {"nx", "ny", "nt"});
        c.nx = get_or(g, "nx", c.nx);
        c.ny = get_or(g, "ny", c.ny);
        c.nt = get_or(g, "nt", c.nt);
    }
    if (j.contains("problem")) {
        const json& p = j["problem"];
        detail::only_keys(p, "problem",
                          {"preset", "phi", "sigma", "beta", "y_g", "f", "y0", "control", "bounds", "constraints"});
        c.preset = get_or<std::string>(p, "preset", "quadratic");
        if (c.preset == "quadratic") {
            c.phi = "phi_identity";
        } else if (c.preset == "cubic") {
            c.phi = "phi_cubic";
        } else {
            throw ConfigError("problem.preset: unknown preset '" + c.preset + "'");
        }
        c.phi = get_or<std::string>(p, "phi", c.phi);
        c.sigma = get_or(p, "sigma", 0.0);
        c.beta = get_or(p, "beta", 1.0);
        if (p.contains("y_g")) c.y_g = detail::parse_field(p["y_g"], "problem.y_g");
        if (p.contains("f")) c.f = detail::parse_field(p["f"], "problem.f");
        if (p.contains("y0")) c.y0 = detail::parse_field(p["y0"], "problem.y0");
        if (p.contains("control")) c.control = detail::parse_field(p["control"], "problem.control");
        if (p.contains("bounds")) {
            const json& b = p["bounds"];
            detail::only_keys(b, "problem.bounds", {"lower", "upper"});
            c.bounds = std::make_pair(get_or(b, "lower", -1.0), get_or(b, "upper", 1.0));
        }
        if (p.contains("constraints")) {
            if (!p["constraints"].is_array()) throw ConfigError("problem.constraints: expected an array");
            for (const json& e : p["constraints"]) {
                detail::only_keys(e, "problem.constraints[]", {"name", "kind", "a", "b", "offset"});
                ConstraintSpec s;
                s.name = get_or<std::string>(e, "name", "F" + std::to_string(c.constraints.size()));
                const std::string kind = get_or<std::string>(e, "kind", "inequality");
                if (kind == "equality") {
                    s.kind = ConstraintKind::equality;
                } else if (kind == "inequality") {
                    s.kind = ConstraintKind::inequality;
                } else {
                    throw ConfigError("constraint '" + s.name + "': kind must be equality or inequality");
                }
                s.a = get_or<std::string>(e, "a", "zero");
                s.b = get_or<std::string>(e, "b", "zero");
                s.offset = get_or(e, "offset", 0.0);
                c.constraints.push_back(s);
            }
        }
    }
    if (j.contains("solver")) {
        const json& s = j["solver"];
        detail::only_keys(s, "solver", {"newton_tol", "newton_max_iter", "linear_tol", "normal_stencil"});
        c.solver.newton_tol = get_or(s, "newton_tol", c.solver.newton_tol);
        c.solver.newton_max_iter = get_or(s, "newton_max_iter", c.solver.newton_max_iter);
        c.solver.linear_tol = get_or(s, "linear_tol", c.solver.linear_tol);
        if (s.contains("normal_stencil"))
            c.solver.normal_stencil = detail::parse_stencil(get_or<std::string>(s, "normal_stencil", ""));
    }
    if (j.contains("optimize")) {
        const json& o = j["optimize"];
        detail::only_keys(o, "optimize",
                          {"max_iter", "grad_tol", "armijo_c", "backtrack_factor", "initial_step", "picard_damping",
                           "al_penalty", "al_penalty_growth", "al_outer_iters", "al_feas_tol"});
        auto& x = c.optimize;
        x.max_iter = get_or(o, "max_iter", x.max_iter);
        x.grad_tol = get_or(o, "grad_tol", x.grad_tol);
        x.armijo_c = get_or(o, "armijo_c", x.armijo_c);
        x.backtrack_factor = get_or(o, "backtrack_factor", x.backtrack_factor);
        x.initial_step = get_or(o, "initial_step", x.initial_step);
        x.picard_damping = get_or(o, "picard_damping", x.picard_damping);
        x.al_penalty = get_or(o, "al_penalty", x.al_penalty);
        x.al_penalty_growth = get_or(o, "al_penalty_growth", x.al_penalty_growth);
        x.al_outer_iters = get_or(o, "al_outer_iters", x.al_outer_iters);
        x.al_feas_tol = get_or(o, "al_feas_tol", x.al_feas_tol);
    }
    if (j.contains("check")) {
        const json& k = j["check"];
        detail::only_keys(k, "check",
                          {"directions", "lambda", "second_lambda", "tolerance", "epsilon", "variational_samples",
                           "refinements"});
        c.check.directions = get_or(k, "directions", c.check.directions);
        c.check.lambda = get_or(k, "lambda", c.check.lambda);
        c.check.second_lambda = get_or(k, "second_lambda", c.check.second_lambda);
        if (k.contains("tolerance")) c.check.tolerance = get_or(k, "tolerance", 0.0);
        c.check.epsilon = get_or(k, "epsilon", c.check.epsilon);
        c.check.variational_samples = get_or(k, "variational_samples", c.check.variational_samples);
        if (k.contains("refinements")) {
            c.check.refinements = get_or<std::vector<std::array<int, 3>>>(k, "refinements", {});
        }
    }
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    return c;
}

/// Numeric invariants that the library would otherwise reject mid-run.
inline void validate_config(const RunConfig& c)
{
    try {
        Grid(c.domain, c.nx, c.ny, c.nt);
        c.optimize.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (!(c.beta > 0.0) || !std::isfinite(c.beta)) throw ConfigError("problem.beta must be positive");
    if (c.phi != "phi_identity" && c.phi != "phi_cubic" && c.phi != "phi_linear")
        throw ConfigError("problem.phi: unknown nonlinearity '" + c.phi + "'");
    if (c.sigma > 0.0) throw ConfigError("problem.sigma must be <= 0");
    if (c.bounds && !(c.bounds->first <= c.bounds->second)) throw ConfigError("problem.bounds: lower > upper");
    if (!(c.solver.newton_tol > 0.0) || !(c.solver.linear_tol > 0.0) || c.solver.newton_max_iter < 1)
        throw ConfigError("solver: tolerances and newton_max_iter must be positive");
    for (const auto& s : c.constraints) {
        for (const std::string& key : {s.a, s.b})
            if (key != "zero" && key != "y")
                throw ConfigError("constraint '" + s.name + "': unknown integrand '" + key + "'");
    }
    if (c.check.directions < 1 || !(c.check.lambda > 0.0) || !(c.check.second_lambda > 0.0) ||
        !(c.check.epsilon > 0.0) || c.check.variational_samples < 1)
        throw ConfigError("check: counts and steps must be positive");
    if (c.check.refinements.size() < 2) throw ConfigError("check.refinements: need at least two grids");
    for (const auto& r : c.check.refinements) {
        try {
            Grid(c.domain, r[0], r[1], r[2]);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("check.refinements: ") + e.what());
        }
    }
}

inline RunConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c = parse_config(j);
    validate_config(c);
    return c;
}

inline StateTrajectory volume_field(const Grid& g, const FieldSpec& s, bool forcing)
{
    if (s.kind == "mms_1") return forcing ? mms_1::forcing_field(g) : mms_1::exact_state(g);
    if (s.kind == "constant") return StateTrajectory(g, s.value);
    if (s.kind == "mode") {
        return StateTrajectory::from_function(g, [&](double x1, double x2, double t) {
            return s.amplitude * std::cos(2.0 * std::numbers::pi * s.k * x1 / g.L() + s.phase) *
                   std::cos(s.m * std::numbers::pi * x2) * std::exp(-s.decay * t);
        });
    }
    return StateTrajectory(g);
}

inline BoundaryTrajectory boundary_field(const Grid& g, const FieldSpec& s)
{
    if (s.kind == "mms_1") return mms_1::control_field(g);
    if (s.kind == "constant") return BoundaryTrajectory(g, s.value);
    if (s.kind == "mode") {
        return BoundaryTrajectory::from_function(g, [&](Side, double x1, double t) {
            return s.amplitude * std::cos(2.0 * std::numbers::pi * s.k * x1 / g.L() + s.phase) *
                   std::exp(-s.decay * t);
        });
    }
    return BoundaryTrajectory(g);
}

inline ProblemSpec build_problem(const RunConfig& c, const Grid& g)
{
    const StateTrajectory y0_full = volume_field(g, c.y0, false);
    const SpaceField y0(y0_full.level(0).begin(), y0_full.level(0).end());
    ProblemSpec p = make_tracking_problem(g, volume_field(g, c.f, true), y0, phi_by_name(c.phi, c.sigma),
                                          {volume_field(g, c.y_g, false), c.beta});
    if (c.bounds) p.bounds = constant_bounds(g, c.bounds->first, c.bounds->second);
    for (const auto& s : c.constraints) p.constraints.push_back(make_constraint(s.name, s.kind, s.a, s.b, s.offset));
    return p;
}

/// Random smooth data: a few low Fourier modes with seeded coefficients.
struct SmoothCoefficients {
    std::array<std::array<double, 3>, 3> volume{};
    std::array<std::array<double, 3>, 2> surface{};
};

inline SmoothCoefficients draw_smooth(Rng& rng)
{
    SmoothCoefficients s;
    for (auto& row : s.volume)
        for (double& x : row) x = rng.uniform(-1.0, 1.0);
    for (auto& row : s.surface)
        for (double& x : row) x = rng.uniform(-1.0, 1.0);
    return s;
}

inline StateTrajectory smooth_volume(const Grid& g, const SmoothCoefficients& s)
{
    return StateTrajectory::from_function(g, [&](double x1, double x2, double t) {
        double v = 0.0;
        for (int k = 0; k < 3; ++k)
            for (int m = 0; m < 3; ++m)
                v += s.volume[k][m] * std::cos(2.0 * std::numbers::pi * k * x1 / g.L() + 0.3 * k) *
                     std::cos(std::numbers::pi * m * x2) * std::cos(t + k);
        return v;
    });
}

inline BoundaryTrajectory smooth_surface(const Grid& g, const SmoothCoefficients& s)
{
    return BoundaryTrajectory::from_function(g, [&](Side side, double x1, double t) {
        double v = 0.0;
        for (int k = 0; k < 3; ++k)
            v += s.surface[static_cast<int>(side)][k] * std::cos(2.0 * std::numbers::pi * k * x1 / g.L() + 0.7 * k) *
                 std::cos(2.0 * t + k);
        return v;
    });
}

inline SpaceField smooth_slice(const Grid& g, const SmoothCoefficients& s)
{
    const StateTrajectory v = smooth_volume(g, s);
    return SpaceField(v.level(0).begin(), v.level(0).end());
}

struct RunRequest {
    std::string command;
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> normal_stencil;
    bool quiet = false;
    bool dump = false;
};

namespace detail {

inline BoundaryTrajectory axpy(const BoundaryTrajectory& u, double a, const BoundaryTrajectory& v)
{
    BoundaryTrajectory w = u;
    for (std::size_t k = 0; k < w.values().size(); ++k) w.values()[k] += a * v.values()[k];
    return w;
}

inline double relative_error(double reference, double approx)
{
    const double denom = std::abs(reference);
    return denom > 0.0 ? std::abs(approx - reference) / denom : std::abs(approx - reference);
}

struct Context {
    const RunConfig& cfg;
    const Grid& grid;
    const ProblemSpec& problem;
    const std::filesystem::path& out;
    bool dump;
    json report;
    bool pass = true;
};

inline void write_outputs(Context& cx, const StateTrajectory* y, const BoundaryTrajectory* u)
{
    if (y) {
        write_state_csv((cx.out / "state.csv").string(), *y);
        if (cx.dump) write_field_file((cx.out / "state.bin").string(), *y);
    }
    if (u) {
        write_control_csv((cx.out / "control.csv").string(), *u);
        if (cx.dump) write_field_file((cx.out / "control.bin").string(), *u);
    }
}

inline double default_fd_tolerance(const RunConfig& c) { return c.phi == "phi_identity" ? 1e-6 : 1e-5; }

inline void cmd_solve(Context& cx)
{
    const BoundaryTrajectory u = boundary_field(cx.grid, cx.cfg.control);
    const StateTrajectory y = solve_state(cx.problem, u, cx.cfg.solver);
    cx.report["max_abs_state"] = max_abs(y);
    cx.report["objective"] = objective_value_of(cx.problem, y, u);
    const auto [vol, surf] = integrate_Omega_and_Gamma_at(y, cx.grid.nt());
    cx.report["final_integral_omega"] = vol;
    cx.report["final_integral_gamma"] = surf;
    write_outputs(cx, &y, &u);
}

inline void cmd_adjoint(Context& cx)
{
    const BoundaryTrajectory u = boundary_field(cx.grid, cx.cfg.control);
    const DerivativeReport d = objective_gradient(cx.problem, u, cx.cfg.solver);
    cx.report["objective"] = d.value;
    cx.report["max_abs_adjoint"] = max_abs(d.adjoint);
    cx.report["max_abs_gradient"] = max_abs(d.gradient);
    cx.report["gradient_norm_sigma"] = std::sqrt(inner_Sigma(d.gradient, d.gradient));
    write_outputs(cx, &d.adjoint, &d.gradient);
}

inline void cmd_duality(Context& cx, Rng& rng)
{
    const SmoothCoefficients a = draw_smooth(rng), b = draw_smooth(rng), c = draw_smooth(rng), d = draw_smooth(rng),
                             e = draw_smooth(rng), f = draw_smooth(rng);
    auto run = [&](const Grid& g) {
        const PrincipalData yd{smooth_volume(g, a), smooth_surface(g, b), smooth_slice(g, c)};
        const AdjointData zd{smooth_volume(g, d), smooth_surface(g, e), smooth_slice(g, f)};
        return duality_gap(g, yd, zd, cx.cfg.solver);
    };
    const Grid fine(cx.cfg.domain, 2 * cx.grid.nx(), 2 * cx.grid.ny() - 1, 4 * cx.grid.nt());
    const DualityReport coarse = run(cx.grid), refined = run(fine);
    cx.report["gap"] = coarse.gap;
    cx.report["scale"] = coarse.scale;
    cx.report["relative_gap"] = coarse.relative();
    cx.report["terms"] = coarse.terms;
    cx.report["refined_grid"] = {fine.nx(), fine.ny(), fine.nt()};
    cx.report["refined_relative_gap"] = refined.relative();
    const double ratio = refined.relative() > 0.0 ? coarse.relative() / refined.relative() : 0.0;
    cx.report["reduction_factor"] = ratio;
}

inline void cmd_grad_check(Context& cx, Rng& rng)
{
    const BoundaryTrajectory u = boundary_field(cx.grid, cx.cfg.control);
    const DerivativeReport d = objective_gradient(cx.problem, u, cx.cfg.solver);
    const double lam = cx.cfg.check.lambda;
    const double tol = cx.cfg.check.tolerance.value_or(default_fd_tolerance(cx.cfg));
    json dirs = json::array();
    double worst = 0.0;
    for (int k = 0; k < cx.cfg.check.directions; ++k) {
        const BoundaryTrajectory v = random_direction(cx.grid, rng);
        const double ad = inner_Sigma(d.gradient, v);
        const double fd = (objective_value(cx.problem, axpy(u, lam, v), cx.cfg.solver) -
                           objective_value(cx.problem, axpy(u, -lam, v), cx.cfg.solver)) /
                          (2.0 * lam);
        const double rel = relative_error(ad, fd);
        worst = std::max(worst, rel);
        dirs.push_back({{"adjoint", ad}, {"finite_difference", fd}, {"relative_error", rel}});
    }
    cx.report["objective"] = d.value;
    cx.report["lambda"] = lam;
    cx.report["directions"] = dirs;
    cx.report["max_relative_error"] = worst;
    cx.report["tolerance"] = tol;
    cx.pass = worst <= tol;
}

inline void cmd_hess_check(Context& cx, Rng& rng)
{
    const BoundaryTrajectory u = boundary_field(cx.grid, cx.cfg.control);
    const double lam = cx.cfg.check.second_lambda;
    const double J0 = objective_value(cx.problem, u, cx.cfg.solver);
    json dirs = json::array();
    double worst_sym = 0.0, worst_sd = 0.0;
    for (int k = 0; k < cx.cfg.check.directions; ++k) {
        const BoundaryTrajectory v1 = random_direction(cx.grid, rng);
        const BoundaryTrajectory v2 = random_direction(cx.grid, rng);
        const double f12 = objective_second_form(cx.problem, u, v1, v2, cx.cfg.solver);
        const double f21 = objective_second_form(cx.problem, u, v2, v1, cx.cfg.solver);
        const double f11 = objective_second_form(cx.problem, u, v1, v1, cx.cfg.solver);
        const double sd = (objective_value(cx.problem, axpy(u, lam, v1), cx.cfg.solver) - 2.0 * J0 +
                           objective_value(cx.problem, axpy(u, -lam, v1), cx.cfg.solver)) /
                          (lam * lam);
        const double sym = std::abs(f12 - f21) / std::max({1.0, std::abs(f12), std::abs(f21)});
        const double rel = relative_error(f11, sd);
        worst_sym = std::max(worst_sym, sym);
        worst_sd = std::max(worst_sd, rel);
        dirs.push_back({{"form_v1_v2", f12},
                        {"form_v2_v1", f21},
                        {"form_v1_v1", f11},
                        {"second_difference", sd},
                        {"relative_error", rel}});
    }
    cx.report["lambda"] = lam;
    cx.report["directions"] = dirs;
    cx.report["max_symmetry_defect"] = worst_sym;
    cx.report["max_second_difference_error"] = worst_sd;
    cx.pass = worst_sym <= 1e-12;
}

inline void cmd_mms(Context& cx)
{
    json levels = json::array();
    std::vector<double> errors, dts;
    for (const auto& r : cx.cfg.check.refinements) {
        const Grid g(cx.cfg.domain, r[0], r[1], r[2]);
        const ProblemSpec p = make_tracking_problem(g, mms_1::forcing_field(g), mms_1::initial(g), phi_identity(),
                                                    {StateTrajectory(g), 1.0});
        const StateTrajectory y = solve_state(p, mms_1::control_field(g), cx.cfg.solver);
        const StateTrajectory ex = mms_1::exact_state(g);
        double err = 0.0;
        for (std::size_t k = 0; k < y.values().size(); ++k)
            err = std::max(err, std::abs(y.values()[k] - ex.values()[k]));
        errors.push_back(err);
        dts.push_back(g.dt());
        levels.push_back({{"nx", r[0]}, {"ny", r[1]}, {"nt", r[2]}, {"dt", g.dt()}, {"max_error", err}});
    }
    json orders = json::array();
    for (std::size_t k = 1; k < errors.size(); ++k)
        orders.push_back(std::log(errors[k - 1] / errors[k]) / std::log(dts[k - 1] / dts[k]));
    cx.report["levels"] = levels;
    cx.report["observed_orders_dt"] = orders;
}

/// Pointwise sign conditions of the box-constrained first-order condition.
inline json box_kkt(const ProblemSpec& p, const BoundaryTrajectory& u, const BoundaryTrajectory& grad, double tol,
                    bool& ok)
{
    std::size_t at_lower = 0, at_upper = 0, free = 0, violations = 0;
    for (std::size_t k = 0; k < u.values().size(); ++k) {
        const double x = u.values()[k], gk = grad.values()[k];
        const double lo = p.bounds ? p.bounds->lower.values()[k] : -INFINITY;
        const double hi = p.bounds ? p.bounds->upper.values()[k] : INFINITY;
        if (x <= lo) {
            ++at_lower;
            if (gk < -tol) ++violations;
        } else if (x >= hi) {
            ++at_upper;
            if (gk > tol) ++violations;
        } else {
            ++free;
            if (std::abs(gk) > tol) ++violations;
        }
    }
    ok = violations == 0;
    return {{"at_lower", at_lower}, {"at_upper", at_upper}, {"free", free}, {"violations", violations}};
}

inline void cmd_optimize_box(Context& cx, Rng& rng)
{
    const OptimizeOptions& o = cx.cfg.optimize;
    const BoundaryTrajectory u0 = boundary_field(cx.grid, cx.cfg.control);
    const OptimizeResult r = projected_gradient(cx.problem, cx.problem.bounds, u0, o, cx.cfg.solver);
    bool sign_ok = true;
    cx.report["objective"] = r.value;
    cx.report["iterations"] = r.iterations;
    cx.report["converged"] = r.converged;
    cx.report["projected_gradient_norm"] = r.pg_norm;
    cx.report["pointwise"] = box_kkt(cx.problem, r.u, r.gradient, 10.0 * o.grad_tol, sign_ok);
    double worst = INFINITY;
    for (int k = 0; k < cx.cfg.check.variational_samples; ++k) {
        BoundaryTrajectory v = cx.problem.bounds
                                   ? BoundaryTrajectory(cx.grid)
                                   : axpy(r.u, 1.0, random_direction(cx.grid, rng));
        if (cx.problem.bounds) {
            for (std::size_t i = 0; i < v.values().size(); ++i)
                v.values()[i] = rng.uniform(cx.problem.bounds->lower.values()[i], cx.problem.bounds->upper.values()[i]);
        }
        const BoundaryTrajectory d = axpy(v, -1.0, r.u);
        const double norm = std::sqrt(inner_Sigma(d, d));
        const double lhs = inner_Sigma(r.gradient, d);
        worst = std::min(worst, norm > 0.0 ? lhs / norm : 0.0);
    }
    cx.report["variational_inequality_min"] = worst;
    cx.pass = r.converged && sign_ok && worst >= -10.0 * o.grad_tol;
    const StateTrajectory y = solve_state(cx.problem, r.u, cx.cfg.solver);
    write_outputs(cx, &y, &r.u);
}

inline void cmd_optimize_picard(Context& cx)
{
    if (cx.problem.bounds) throw ConfigError("optimize-picard: problem.bounds must be absent");
    const PicardResult r = picard_optimality_system(cx.problem, cx.cfg.optimize, cx.cfg.solver);
    const double cert = r.residual / (1.0 + max_abs(r.u));
    cx.report["iterations"] = r.iterations;
    cx.report["residual"] = r.residual;
    cx.report["certificate"] = cert;
    cx.report["history"] = r.history;
    cx.report["objective"] = objective_value_of(cx.problem, r.y, r.u);
    cx.pass = cert <= 1e-6;
    write_outputs(cx, &r.y, &r.u);
}

inline json kkt_json(const KKTReport& r)
{
    return {{"multipliers", r.multipliers},
            {"stationarity", r.stationarity},
            {"feasibility", r.feasibility},
            {"complementarity", r.complementarity},
            {"active", r.active},
            {"constraint_values", r.constraint_values},
            {"outer_iterations", r.outer_iterations},
            {"penalty", r.penalty}};
}

inline void cmd_optimize_kkt(Context& cx)
{
    if (cx.problem.constraints.empty()) throw ConfigError("optimize-kkt: problem.constraints must not be empty");
    const BoundaryTrajectory u0 = boundary_field(cx.grid, cx.cfg.control);
    const ALResult r = augmented_lagrangian(cx.problem, cx.problem.bounds, u0, cx.cfg.optimize, cx.cfg.solver);
    cx.report["kkt"] = kkt_json(r.report);
    cx.report["objective"] = objective_value(cx.problem, r.u, cx.cfg.solver);
    const StateTrajectory y = solve_state(cx.problem, r.u, cx.cfg.solver);
    write_outputs(cx, &y, &r.u);
}

inline void cmd_second_order(Context& cx, Rng& rng)
{
    const BoundaryTrajectory u = boundary_field(cx.grid, cx.cfg.control);
    const DerivativeReport d = objective_gradient(cx.problem, u, cx.cfg.solver);
    json values = json::array();
    double smallest = INFINITY;
    for (int k = 0; k < cx.cfg.check.directions; ++k) {
        const BoundaryTrajectory v = random_direction(cx.grid, rng);
        const double q = check_second_order(cx.problem, u, v, d.adjoint, cx.cfg.solver);
        smallest = std::min(smallest, q);
        values.push_back(q);
    }
    cx.report["values"] = values;
    cx.report["min_value"] = smallest;
    cx.report["nonnegative"] = smallest >= 0.0;
}

inline void cmd_regularity(Context& cx)
{
    const BoundaryTrajectory u = boundary_field(cx.grid, cx.cfg.control);
    const RegularityReport r =
        check_regularity(cx.problem, u, cx.cfg.check.epsilon, cx.cfg.optimize.al_feas_tol, cx.cfg.solver);
    json gram = json::array();
    for (Eigen::Index i = 0; i < r.gram.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < r.gram.cols(); ++j) row.push_back(r.gram(i, j));
        gram.push_back(row);
    }
    cx.report["regular"] = r.regular;
    cx.report["active"] = r.active;
    cx.report["gram"] = gram;
    cx.report["condition"] = std::isfinite(r.condition) ? json(r.condition) : json("inf");
    cx.report["mask_size"] = std::count(r.mask.begin(), r.mask.end(), 1);
    if (!r.diagnostic.empty()) cx.report["diagnostic"] = r.diagnostic;
    cx.pass = r.regular;
}

}  // namespace detail

/// Runs one command. Returns the process exit code.
inline int run(const RunRequest& req, std::ostream& log = std::cout, std::ostream& err = std::cerr)
{
    const auto& names = commands();
    if (std::find(names.begin(), names.end(), req.command) == names.end()) {
        err << "error: unknown command '" << req.command << "'\n";
        return 2;
    }
    RunConfig cfg;
    std::optional<Grid> grid;
    std::optional<ProblemSpec> problem;
    try {
        cfg = load_config(req.config_path);
        if (req.seed) cfg.seed = *req.seed;
        if (req.normal_stencil) cfg.solver.normal_stencil = detail::parse_stencil(*req.normal_stencil);
        grid.emplace(cfg.domain, cfg.nx, cfg.ny, cfg.nt);
        problem.emplace(build_problem(cfg, *grid));
        const ValidationReport v = validate(*problem);
        if (!v.ok()) {
            std::string all;
            for (const auto& s : v.issues) all += "\n  " + s;
            throw ConfigError("problem validation failed:" + all);
        }
        if (req.command == "optimize-picard" && problem->bounds)
            throw ConfigError("optimize-picard: problem.bounds must be absent");
        if (req.command == "optimize-kkt" && problem->constraints.empty())
            throw ConfigError("optimize-kkt: problem.constraints must not be empty");
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    }

    const std::filesystem::path out(req.out_dir);
    detail::Context cx{cfg, *grid, *problem, out, req.dump, json::object(), true};
    cx.report["command"] = req.command;
    cx.report["seed"] = cfg.seed;
    cx.report["grid"] = {{"nx", grid->nx()}, {"ny", grid->ny()}, {"nt", grid->nt()}};
    cx.report["normal_stencil"] = detail::stencil_name(cfg.solver.normal_stencil);
    Rng rng(cfg.seed);
    int code = 0;
    try {
        std::filesystem::create_directories(out);
        const std::string& c = req.command;
        if (c == "solve") detail::cmd_solve(cx);
        else if (c == "adjoint") detail::cmd_adjoint(cx);
        else if (c == "duality-check") detail::cmd_duality(cx, rng);
        else if (c == "grad-check") detail::cmd_grad_check(cx, rng);
        else if (c == "hess-check") detail::cmd_hess_check(cx, rng);
        else if (c == "mms-convergence") detail::cmd_mms(cx);
        else if (c == "optimize-box") detail::cmd_optimize_box(cx, rng);
        else if (c == "optimize-picard") detail::cmd_optimize_picard(cx);
        else if (c == "optimize-kkt") detail::cmd_optimize_kkt(cx);
        else if (c == "second-order-check") detail::cmd_second_order(cx, rng);
        else detail::cmd_regularity(cx);
        cx.report["status"] = cx.pass ? "ok" : "check_failed";
        code = cx.pass ? 0 : 1;
    } catch (const NonConvergence& e) {
        cx.report["status"] = "solver_failure";
        cx.report["error"] = e.what();
        if (e.report()) cx.report["kkt"] = detail::kkt_json(*e.report());
        err << "solver failure: " << e.what() << "\n";
        code = 1;
    } catch (const SolverError& e) {
        cx.report["status"] = "solver_failure";
        cx.report["error"] = e.what();
        err << "solver failure: " << e.what() << "\n";
        code = 1;
    } catch (const std::exception& e) {
        cx.report["status"] = "failure";
        cx.report["error"] = e.what();
        err << "error: " << e.what() << "\n";
        code = 1;
    }
    try {
        std::ofstream f(out / "report.json", std::ios::binary);
        f << cx.report.dump(2) << "\n";
        if (!f) throw std::runtime_error("write failed");
    } catch (const std::exception& e) {
        err << "error: cannot write report: " << e.what() << "\n";
        return 1;
    }
    if (!req.quiet) log << req.command << ": " << cx.report["status"].get<std::string>() << " -> " << out.string() << "\n";
    return code;
}

}  // namespace venttsel::cli
