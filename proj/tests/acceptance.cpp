// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when all pass).
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "venttsel/adjoint.hpp"
#include "venttsel/cli.hpp"
#include "venttsel/optimize.hpp"
#include "venttsel/random.hpp"
#include "venttsel/registry.hpp"

using namespace venttsel;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kOrderLo = 0.8, kOrderHi = 1.2;
constexpr double kMaxPrincipleSlack = 1e-12;
constexpr double kDualityGap = 1e-3, kDualityReduction = 2.0;
constexpr double kFdLambda = 1e-4, kFdQuadratic = 1e-6, kFdCubic = 1e-5;
constexpr double kSymmetry = 1e-12;
constexpr double kPicardCertificate = 1e-6, kPicardAgreement = 1e-5;
constexpr double kFeasibility = 1e-6, kInactiveMatch = 1e-5;
constexpr double kConstraintFd = 1e-6;

struct Outcome {
    bool pass;
    std::string metrics;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

BoundaryTrajectory shifted(const BoundaryTrajectory& u, double a, const BoundaryTrajectory& v)
{
    BoundaryTrajectory w = u;
    for (std::size_t k = 0; k < w.values().size(); ++k) w.values()[k] += a * v.values()[k];
    return w;
}

double max_diff(const BoundaryTrajectory& a, const BoundaryTrajectory& b)
{
    double m = 0.0;
    for (std::size_t k = 0; k < a.values().size(); ++k) m = std::max(m, std::abs(a.values()[k] - b.values()[k]));
    return m;
}

ProblemSpec tracking(const Grid& g, const Nonlinearity& phi, double beta = 1.0)
{
    const auto f = StateTrajectory::from_function(g, [](double x1, double x2, double t) {
        return std::cos(2.0 * M_PI * x1) * x2 * (1.0 + t);
    });
    const auto yg = StateTrajectory::from_function(g, [](double x1, double x2, double t) {
        return 0.5 * std::sin(2.0 * M_PI * x1) + x2 * t;
    });
    SpaceField y0(g.nodes());
    for (int j = 0; j < g.ny(); ++j)
        for (int i = 0; i < g.nx(); ++i)
            y0[g.index(j, i)] = 0.3 * std::cos(2.0 * M_PI * g.x1(i)) * std::cos(M_PI * g.x2(j));
    return make_tracking_problem(g, f, y0, phi, {yg, beta});
}

double relative(double reference, double approx)
{
    const double d = std::abs(approx - reference);
    return reference != 0.0 ? d / std::abs(reference) : d;
}

Outcome mms_convergence()
{
    const DomainSpec d{1.0, 1.0, 1.0};
    const int levels[3][3] = {{16, 5, 25}, {32, 9, 100}, {64, 17, 400}};
    double err[3], dt[3];
    for (int l = 0; l < 3; ++l) {
        const Grid g(d, levels[l][0], levels[l][1], levels[l][2]);
        const ProblemSpec p = make_tracking_problem(g, mms_1::forcing_field(g), mms_1::initial(g), phi_identity(),
                                                    {StateTrajectory(g), 1.0});
        const StateTrajectory y = solve_state(p, mms_1::control_field(g));
        const StateTrajectory ex = mms_1::exact_state(g);
        err[l] = 0.0;
        for (std::size_t k = 0; k < y.values().size(); ++k)
            err[l] = std::max(err[l], std::abs(y.values()[k] - ex.values()[k]));
        dt[l] = g.dt();
    }
    const double o1 = std::log(err[0] / err[1]) / std::log(dt[0] / dt[1]);
    const double o2 = std::log(err[1] / err[2]) / std::log(dt[1] / dt[2]);
    const bool ok = o1 >= kOrderLo && o1 <= kOrderHi && o2 >= kOrderLo && o2 <= kOrderHi;
    return {ok, fmt("errors %.3e %.3e %.3e, orders %.3f %.3f (band [%.1f, %.1f])", err[0], err[1], err[2], o1, o2,
                    kOrderLo, kOrderHi)};
}

Outcome maximum_principle()
{
    const Grid g({1.0, 1.0, 1.5}, 32, 9, 64);
    SolverOptions o;
    o.normal_stencil = NormalStencil::first_order;
    Rng rng(2);
    double worst = -INFINITY;
    for (double sigma : {0.0, -0.5, -4.0}) {
        SpaceField y0(g.nodes());
        for (double& v : y0) v = rng.uniform(-2.0, 2.0);
        const ProblemSpec p =
            make_tracking_problem(g, StateTrajectory(g), y0, phi_linear(sigma), {StateTrajectory(g), 1.0});
        const StateTrajectory y = solve_state(p, BoundaryTrajectory(g), o);
        for (int n = 1; n <= g.nt(); ++n) worst = std::max(worst, max_abs(y.level(n)) - max_abs(y.level(n - 1)));
    }
    return {worst <= kMaxPrincipleSlack,
            fmt("max level-to-level growth %.3e over sigma in {0,-0.5,-4} (allowed %.0e)", worst, kMaxPrincipleSlack)};
}

Outcome duality()
{
    auto rel = [](double T, int nx, int ny, int nt) {
        Rng rng(11);
        cli::SmoothCoefficients c[6];
        for (auto& s : c) s = cli::draw_smooth(rng);
        const Grid g({1.0, T, 1.0}, nx, ny, nt);
        const PrincipalData yd{cli::smooth_volume(g, c[0]), cli::smooth_surface(g, c[1]), cli::smooth_slice(g, c[2])};
        const AdjointData zd{cli::smooth_volume(g, c[3]), cli::smooth_surface(g, c[4]), cli::smooth_slice(g, c[5])};
        return duality_gap(g, yd, zd).relative();
    };
    const double coarse = rel(1.0, 32, 9, 64), fine = rel(1.0, 64, 17, 256);
    const double factor = coarse / fine;
    // Refining dt alone reproduces the whole reduction: the gap is the O(dt)
    // error of implicit Euler, so its level depends on the data and on T.
    const double dt_only = rel(1.0, 32, 9, 256);
    const double short_horizon = rel(0.25, 32, 9, 64);
    return {coarse <= kDualityGap && factor >= kDualityReduction,
            fmt("relative gap %.3e at (32,9,64) (<= %.0e), %.3e at (64,17,256), reduction %.2f (>= %.0f); "
                "dt-only refinement %.3e; T=0.25 gives %.3e",
                coarse, kDualityGap, fine, factor, kDualityReduction, dt_only, short_horizon)};
}

Outcome gradient_exactness()
{
    const Grid g({1.0, 1.0, 1.0}, 32, 9, 64);
    Rng rng(4);
    double worst[2] = {0.0, 0.0};
    for (int cubic = 0; cubic < 2; ++cubic) {
        const ProblemSpec p = tracking(g, cubic ? phi_cubic() : phi_identity());
        const BoundaryTrajectory u = random_field(g, rng, -0.5, 0.5);
        const BoundaryTrajectory grad = objective_gradient(p, u).gradient;
        for (int k = 0; k < 5; ++k) {
            const BoundaryTrajectory v = random_direction(g, rng);
            const double ad = inner_Sigma(grad, v);
            const double fd =
                (objective_value(p, shifted(u, kFdLambda, v)) - objective_value(p, shifted(u, -kFdLambda, v))) /
                (2.0 * kFdLambda);
            worst[cubic] = std::max(worst[cubic], relative(ad, fd));
        }
    }
    return {worst[0] <= kFdQuadratic && worst[1] <= kFdCubic,
            fmt("max relative error %.3e quadratic (<= %.0e), %.3e cubic (<= %.0e)", worst[0], kFdQuadratic,
                worst[1], kFdCubic)};
}

Outcome second_order_form()
{
    const Grid g({1.0, 1.0, 1.0}, 32, 9, 64);
    Rng rng(5);
    double sym = 0.0, min_quad = INFINITY;
    const ProblemSpec quad = tracking(g, phi_identity(), 0.7);
    const BoundaryTrajectory uq = random_field(g, rng, -0.5, 0.5);
    for (int k = 0; k < 10; ++k) {
        const BoundaryTrajectory v1 = random_direction(g, rng), v2 = random_direction(g, rng);
        const double a = objective_second_form(quad, uq, v1, v2), b = objective_second_form(quad, uq, v2, v1);
        sym = std::max(sym, std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}));
        min_quad = std::min(min_quad, objective_second_form(quad, uq, v1, v1));
    }
    const ProblemSpec cub = tracking(g, phi_cubic());
    const BoundaryTrajectory uc = random_field(g, rng, -0.5, 0.5);
    const BoundaryTrajectory v = random_direction(g, rng);
    const double form = objective_second_form(cub, uc, v, v);
    const double J0 = objective_value(cub, uc);
    auto err = [&](double lam) {
        const double sd =
            (objective_value(cub, shifted(uc, lam, v)) - 2.0 * J0 + objective_value(cub, shifted(uc, -lam, v))) /
            (lam * lam);
        return std::abs(sd - form) / std::abs(form);
    };
    // O(lambda): halving lambda at least halves the error (ratio >= 1.5 allows
    // for the O(lambda^2) remainder), measured where round-off is negligible.
    const double e1 = err(0.2), e2 = err(0.1);
    const double ratio = e1 / e2;
    const bool ok = sym <= kSymmetry && min_quad > 0.0 && ratio >= 1.5 && e2 < 1e-2;
    return {ok, fmt("symmetry %.2e (<= %.0e), min quadratic form %.3e over 10 v, cubic second-difference error "
                    "%.2e -> %.2e (ratio %.2f)",
                    sym, kSymmetry, min_quad, e1, e2, ratio)};
}

Outcome picard()
{
    const Grid g({1.0, 1.0, 1.0}, 32, 9, 64);
    const double beta = 0.8;
    const ProblemSpec p = tracking(g, phi_identity(), beta);
    const PicardResult r = picard_optimality_system(p);
    BoundaryTrajectory defect = r.u;
    for (std::size_t k = 0; k < defect.values().size(); ++k)
        defect.values()[k] = beta * r.u.values()[k] - r.w_trace.values()[k];
    const double cert = max_abs(defect) / (1.0 + max_abs(r.u));
    const OptimizeResult pg = projected_gradient(p, std::nullopt, BoundaryTrajectory(g));
    const double agree = max_diff(r.u, pg.u);
    return {cert <= kPicardCertificate && agree <= kPicardAgreement,
            fmt("certificate %.3e (<= %.0e) after %d iterations, |u_picard - u_pg| %.3e (<= %.0e)", cert,
                kPicardCertificate, r.iterations, agree, kPicardAgreement)};
}

Outcome box_kkt()
{
    const Grid g({1.0, 1.0, 1.0}, 32, 9, 64);
    ProblemSpec p = tracking(g, phi_identity());
    const OptimizeOptions o;
    const OptimizeResult free = projected_gradient(p, std::nullopt, BoundaryTrajectory(g), o);
    double hi = -INFINITY, lo = INFINITY;
    for (double x : free.u.values()) hi = std::max(hi, x), lo = std::min(lo, x);
    p.bounds = constant_bounds(g, lo + 0.3 * (hi - lo), hi - 0.3 * (hi - lo));
    const OptimizeResult r = projected_gradient(p, p.bounds, BoundaryTrajectory(g), o);
    const double tol = 10.0 * o.grad_tol;
    std::size_t violations = 0, at_lo = 0, at_hi = 0;
    for (std::size_t k = 0; k < r.u.values().size(); ++k) {
        const double x = r.u.values()[k], gk = r.gradient.values()[k];
        if (x <= p.bounds->lower.values()[k]) {
            ++at_lo;
            violations += gk < -tol;
        } else if (x >= p.bounds->upper.values()[k]) {
            ++at_hi;
            violations += gk > tol;
        } else {
            violations += std::abs(gk) > tol;
        }
    }
    Rng rng(8);
    double worst = INFINITY;
    for (int s = 0; s < 20; ++s) {
        BoundaryTrajectory v(g);
        for (std::size_t k = 0; k < v.values().size(); ++k)
            v.values()[k] = rng.uniform(p.bounds->lower.values()[k], p.bounds->upper.values()[k]);
        const BoundaryTrajectory d = shifted(v, -1.0, r.u);
        worst = std::min(worst, inner_Sigma(r.gradient, d) / std::sqrt(inner_Sigma(d, d)));
    }
    const bool ok = r.converged && at_lo > 0 && at_hi > 0 && violations == 0 && worst >= -tol;
    return {ok, fmt("converged %d, %zu at lower, %zu at upper, sign violations %zu, min <grad, v-u>/|v-u| %.3e "
                    "(>= %.0e)",
                    int(r.converged), at_lo, at_hi, violations, worst, -tol)};
}

Outcome constrained_kkt()
{
    const Grid g({1.0, 1.0, 1.0}, 32, 9, 64);
    const OptimizeOptions o;
    ProblemSpec p = tracking(g, phi_identity());
    const OptimizeResult free = projected_gradient(p, std::nullopt, BoundaryTrajectory(g), o);

    ProblemSpec eq = p;
    eq.constraints.push_back(make_constraint("mean", ConstraintKind::equality, "y", "zero", 0.0));
    const double c = constraint_value(eq, free.u, 0) + 0.2;
    eq.constraints[0].offset = -c;
    const ALResult r = augmented_lagrangian(eq, std::nullopt, BoundaryTrajectory(g), o);
    const double feas = std::abs(constraint_value(eq, r.u, 0));
    const bool eq_ok = feas <= kFeasibility * std::abs(c) && r.report.stationarity <= 10.0 * o.grad_tol &&
                       r.report.complementarity[0] == 0.0 && r.report.multipliers[0] != 0.0;

    ProblemSpec in = p;
    in.constraints.push_back(make_constraint("mean", ConstraintKind::inequality, "y", "zero", 0.0));
    in.constraints[0].offset = -(constraint_value(in, free.u, 0) + 0.5);
    const ALResult s = augmented_lagrangian(in, std::nullopt, BoundaryTrajectory(g), o);
    const double match = max_diff(s.u, free.u);
    const bool in_ok = s.report.multipliers[0] == 0.0 && match <= kInactiveMatch;

    return {eq_ok && in_ok,
            fmt("equality: |F| %.3e (<= %.1e), stationarity %.3e, lambda %.4f, %d outer; inactive: lambda %g, "
                "|u - u_free| %.3e (<= %.0e)",
                feas, kFeasibility * std::abs(c), r.report.stationarity, r.report.multipliers[0],
                r.report.outer_iterations, s.report.multipliers[0], match, kInactiveMatch)};
}

Outcome constraint_gradient_fd()
{
    const Grid g({1.0, 1.0, 1.0}, 32, 9, 64);
    ProblemSpec p = tracking(g, phi_cubic());
    p.constraints.push_back(make_constraint("c", ConstraintKind::inequality, "y", "y", 0.1));
    Rng rng(9);
    const BoundaryTrajectory u = random_field(g, rng, -0.5, 0.5);
    const BoundaryTrajectory grad = constraint_gradient(p, u, 0);
    double worst = 0.0;
    for (int k = 0; k < 3; ++k) {
        const BoundaryTrajectory v = random_direction(g, rng);
        const double fd =
            (constraint_value(p, shifted(u, kFdLambda, v), 0) - constraint_value(p, shifted(u, -kFdLambda, v), 0)) /
            (2.0 * kFdLambda);
        worst = std::max(worst, relative(inner_Sigma(grad, v), fd));
    }
    return {worst <= kConstraintFd, fmt("max relative error %.3e (<= %.0e)", worst, kConstraintFd)};
}

Outcome determinism()
{
    const fs::path dir = fs::temp_directory_path() / "venttsel_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const nlohmann::json cfg = {
        {"grid", {{"nx", 32}, {"ny", 9}, {"nt", 64}}},
        {"problem",
         {{"preset", "cubic"},
          {"f", {{"kind", "mode"}, {"amplitude", 1.0}, {"k", 1}, {"m", 1}}},
          {"y_g", {{"kind", "constant"}, {"value", 0.3}}},
          {"control", {{"kind", "mode"}, {"amplitude", 0.2}, {"k", 2}}}}},
        {"seed", 2024}};
    std::ofstream(dir / "config.json") << cfg.dump(2);
    auto once = [&](const std::string& name) {
        cli::RunRequest req;
        req.command = "grad-check";
        req.config_path = (dir / "config.json").string();
        req.out_dir = (dir / name).string();
        req.quiet = true;
        std::ostringstream log, err;
        const int code = cli::run(req, log, err);
        std::ifstream f(dir / name / "report.json", std::ios::binary);
        std::stringstream s;
        s << f.rdbuf();
        return std::make_pair(code, s.str());
    };
    const auto a = once("a"), b = once("b");
    const bool ok = a.first == 0 && b.first == 0 && !a.second.empty() && a.second == b.second;
    return {ok, fmt("exit codes %d %d, report sizes %zu %zu bytes, identical %d", a.first, b.first, a.second.size(),
                    b.second.size(), int(a.second == b.second))};
}

}  // namespace

int main()
{
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"MMS convergence order", mms_convergence},
        {"Discrete maximum principle", maximum_principle},
        {"Duality identity", duality},
        {"Gradient exactness", gradient_exactness},
        {"Second-order form", second_order_form},
        {"Quadratic optimality system", picard},
        {"Box-constrained KKT", box_kkt},
        {"Constrained KKT", constrained_kkt},
        {"Constraint gradient", constraint_gradient_fd},
        {"Determinism", determinism},
    };
    int failed = 0, n = 0;
    for (const auto& [name, check] : criteria) {
        ++n;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome r;
        try {
            r = check();
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %d. %s: %s [%.1fs]\n", r.pass ? "PASS" : "FAIL", n, name, r.metrics.c_str(), secs);
        std::fflush(stdout);
        failed += !r.pass;
    }
    std::printf("%d/%d criteria passed\n", n - failed, n);
    return failed;
}
