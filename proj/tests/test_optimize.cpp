#include <gtest/gtest.h>

#include <cmath>

#include "venttsel/optimize.hpp"
#include "venttsel/random.hpp"
#include "venttsel/registry.hpp"

using namespace venttsel;

namespace {

Grid test_grid() { return Grid({1.0, 1.0, 1.0}, 16, 7, 24); }

ProblemSpec tracking(const Grid& g, double beta = 1.0)
{
    const auto f = StateTrajectory::from_function(g, [](double x1, double x2, double t) {
        return std::cos(2.0 * M_PI * x1) * x2 * (1.0 + t);
    });
    const auto yg = StateTrajectory::from_function(g, [](double x1, double x2, double t) {
        return 0.5 * std::sin(2.0 * M_PI * x1) + x2 * t;
    });
    SpaceField y0(g.nodes());
    for (int j = 0; j < g.ny(); ++j)
        for (int i = 0; i < g.nx(); ++i) y0[g.index(j, i)] = 0.3 * std::cos(2.0 * M_PI * g.x1(i)) * std::cos(M_PI * g.x2(j));
    return make_quadratic_problem(g, f, y0, {yg, beta});
}

double max_diff(const BoundaryTrajectory& a, const BoundaryTrajectory& b)
{
    double m = 0.0;
    for (std::size_t k = 0; k < a.values().size(); ++k) m = std::max(m, std::abs(a.values()[k] - b.values()[k]));
    return m;
}

void expect_monotone(const OptimizeResult& r)
{
    for (const IterationRecord& h : r.history) {
        EXPECT_GE(h.decrease, -1e-13 * std::max(1.0, std::abs(h.value)));
        EXPECT_GT(h.step, 0.0);
    }
    for (std::size_t k = 1; k < r.history.size(); ++k)
        EXPECT_LE(r.history[k].value, r.history[k - 1].value + 1e-13 * std::max(1.0, std::abs(r.history[k - 1].value)));
}

}  // namespace

TEST(OptimizeOptions, RejectsInvalidValues)
{
    OptimizeOptions o;
    EXPECT_NO_THROW(o.validate());
    o.picard_damping = 1.5;
    EXPECT_THROW(o.validate(), std::invalid_argument);
    o = {};
    o.backtrack_factor = 1.0;
    EXPECT_THROW(o.validate(), std::invalid_argument);
    o = {};
    o.grad_tol = 0.0;
    EXPECT_THROW(o.validate(), std::invalid_argument);
}

TEST(ProjectedGradient, InteriorGlobalMinimum)
{
    const Grid g = test_grid();
    ProblemSpec p = make_quadratic_problem(g, StateTrajectory(g), SpaceField(g.nodes(), 0.0),
                                           {StateTrajectory(g), 1.0});
    p.bounds = constant_bounds(g, -1.0, 1.0);
    Rng rng(1);
    const OptimizeResult r = projected_gradient(p, p.bounds, random_field(g, rng, -1.0, 1.0));
    EXPECT_TRUE(r.converged);
    EXPECT_LT(max_abs(r.u), 1e-7);
    EXPECT_LT(r.value, 1e-14);
    expect_monotone(r);
}

TEST(ProjectedGradient, ClipsStartingPoint)
{
    const Grid g = test_grid();
    const ProblemSpec p = tracking(g);
    const auto b = constant_bounds(g, -0.1, 0.1);
    OptimizeOptions o;
    o.max_iter = 1;
    const OptimizeResult r = projected_gradient(p, b, BoundaryTrajectory(g, 5.0), o);
    for (double v : r.u.values()) {
        EXPECT_LE(v, 0.1);
        EXPECT_GE(v, -0.1);
    }
}

TEST(ProjectedGradient, ActiveUpperBoundSatisfiesSignConditions)
{
    const Grid g = test_grid();
    const ProblemSpec p = tracking(g);
    const OptimizeResult free = projected_gradient(p, std::nullopt, BoundaryTrajectory(g));
    ASSERT_TRUE(free.converged);
    double top = -INFINITY, bottom = INFINITY;
    for (double v : free.u.values()) top = std::max(top, v), bottom = std::min(bottom, v);
    const double ub = 0.5 * top;
    const auto b = constant_bounds(g, bottom - 1.0, ub);
    const OptimizeOptions o;
    const OptimizeResult r = projected_gradient(p, b, BoundaryTrajectory(g), o);
    ASSERT_TRUE(r.converged);
    expect_monotone(r);
    std::size_t at_upper = 0;
    for (std::size_t k = 0; k < r.u.values().size(); ++k) {
        const double u = r.u.values()[k], grad = r.gradient.values()[k];
        ASSERT_LE(u, ub);
        if (u == ub) {
            ++at_upper;
            EXPECT_LE(grad, 10 * o.grad_tol);
        } else {
            EXPECT_LE(std::abs(grad), 10 * o.grad_tol);
        }
        if (free.u.values()[k] > ub + 1e-3) {
            EXPECT_EQ(u, ub);
        }
    }
    EXPECT_GT(at_upper, 0u);

    // <grad J(u*), v - u*> >= -10 grad_tol |v - u*| for feasible v
    Rng rng(2);
    for (int k = 0; k < 20; ++k) {
        BoundaryTrajectory v(g);
        for (double& x : v.values()) x = rng.uniform(bottom - 1.0, ub);
        BoundaryTrajectory d = v;
        for (std::size_t i = 0; i < d.values().size(); ++i) d.values()[i] -= r.u.values()[i];
        EXPECT_GE(inner_Sigma(r.gradient, d), -10 * o.grad_tol * std::sqrt(inner_Sigma(d, d)));
    }
}

TEST(ProjectedGradient, ArmijoRecordsSufficientDecrease)
{
    const Grid g = test_grid();
    ProblemSpec p = tracking(g, 0.3);
    p.phi = phi_cubic();
    Rng rng(4);
    const OptimizeResult r = projected_gradient(p, constant_bounds(g, -0.5, 0.5), random_field(g, rng, -0.5, 0.5));
    EXPECT_TRUE(r.converged);
    ASSERT_FALSE(r.history.empty());
    for (const IterationRecord& h : r.history)
        if (h.decrease > 1e-13 * std::max(1.0, std::abs(h.value))) {
            EXPECT_GE(h.decrease, h.required);
        }
    expect_monotone(r);
}

TEST(ProjectedGradient, LineSearchFailureWhenNoDecreaseExists)
{
    const Grid g({1.0, 1.0, 1.0}, 4, 4, 2);
    const OptimizeOptions o;
    auto value = [](const BoundaryTrajectory&) { return std::nan(""); };
    auto derivative = [&](const BoundaryTrajectory& u) { return detail::ValueAndGradient{0.0, BoundaryTrajectory(u.grid(), 1.0)}; };
    EXPECT_THROW(detail::projected_gradient_on(std::nullopt, BoundaryTrajectory(g), o, value, derivative),
                 LineSearchFailure);
}

TEST(Picard, ConsistentDataGivesZeroControl)
{
    const Grid g = test_grid();
    ProblemSpec base = tracking(g);
    const StateTrajectory y = solve_state(base, BoundaryTrajectory(g));
    const ProblemSpec p = make_quadratic_problem(g, base.f, base.y0, {y, 1.0});
    const PicardResult r = picard_optimality_system(p);
    EXPECT_LT(max_abs(r.u), 1e-12);
    EXPECT_LT(max_abs(r.w), 1e-12);
}

TEST(Picard, CertificateAndAgreementWithProjectedGradient)
{
    const Grid g = test_grid();
    const ProblemSpec p = tracking(g, 0.8);
    const PicardResult pic = picard_optimality_system(p);
    const double scale = 1.0 + max_abs(pic.u);
    BoundaryTrajectory defect = pic.u;
    for (std::size_t k = 0; k < defect.values().size(); ++k)
        defect.values()[k] = 0.8 * pic.u.values()[k] - pic.w_trace.values()[k];
    EXPECT_LE(max_abs(defect) / scale, 1e-6);
    const OptimizeResult pg = projected_gradient(p, std::nullopt, BoundaryTrajectory(g));
    EXPECT_LE(max_diff(pic.u, pg.u), 1e-5 * scale);
}

TEST(Picard, DampingStillConverges)
{
    const Grid g = test_grid();
    const ProblemSpec p = tracking(g, 0.8);
    OptimizeOptions o;
    o.picard_damping = 0.5;
    const PicardResult r = picard_optimality_system(p, o);
    EXPECT_LE(r.residual, o.grad_tol * 0.8);
}

TEST(Picard, RejectsUnsupportedProblemsAndReportsNonConvergence)
{
    const Grid g = test_grid();
    ProblemSpec p = tracking(g);
    OptimizeOptions o;
    o.max_iter = 1;
    EXPECT_THROW(picard_optimality_system(p, o), NonConvergence);
    p.bounds = constant_bounds(g, -1.0, 1.0);
    EXPECT_THROW(picard_optimality_system(p), std::invalid_argument);
    p.bounds.reset();
    p.tracking_beta.reset();
    EXPECT_THROW(picard_optimality_system(p), std::invalid_argument);
}

TEST(AugmentedLagrangian, InactiveConstraintKeepsUnconstrainedSolution)
{
    const Grid g = test_grid();
    ProblemSpec p = tracking(g);
    const OptimizeResult free = projected_gradient(p, std::nullopt, BoundaryTrajectory(g));
    p.constraints.push_back(make_constraint("mean", ConstraintKind::inequality, "y", "zero", 0.0));
    const double F = constraint_value(p, free.u, 0);
    p.constraints[0].offset = -(F + 0.5);  // F(u_free) = -0.5 < 0
    const ALResult r = augmented_lagrangian(p, std::nullopt, BoundaryTrajectory(g));
    EXPECT_EQ(r.report.multipliers[0], 0.0);
    EXPECT_LE(max_diff(r.u, free.u), 1e-5);
    EXPECT_TRUE(r.report.active.empty());
}

TEST(AugmentedLagrangian, EqualityConstraintReachesKKTPoint)
{
    const Grid g = test_grid();
    ProblemSpec p = tracking(g);
    const OptimizeResult free = projected_gradient(p, std::nullopt, BoundaryTrajectory(g));
    p.constraints.push_back(make_constraint("mean", ConstraintKind::equality, "y", "zero", 0.0));
    const double c = constraint_value(p, free.u, 0) + 0.2;
    p.constraints[0].offset = -c;
    const OptimizeOptions o;
    const ALResult r = augmented_lagrangian(p, std::nullopt, BoundaryTrajectory(g), o);
    EXPECT_LE(std::abs(constraint_value(p, r.u, 0)), 1e-6 * std::abs(c));
    EXPECT_LE(r.report.stationarity, 10 * o.grad_tol);
    EXPECT_EQ(r.report.complementarity[0], 0.0);
    ASSERT_EQ(r.report.active.size(), 1u);
    EXPECT_NE(r.report.multipliers[0], 0.0);
}

TEST(AugmentedLagrangian, ActiveInequalityHasNonnegativeMultiplier)
{
    const Grid g = test_grid();
    ProblemSpec p = tracking(g);
    p.bounds = constant_bounds(g, -2.0, 2.0);
    const OptimizeResult free = projected_gradient(p, p.bounds, BoundaryTrajectory(g));
    // require int_Sigma y >= value at the free optimum + 0.1, i.e. F = c - int_Sigma y <= 0
    p.constraints.push_back(make_constraint("floor", ConstraintKind::inequality, "zero", "zero", 0.0));
    p.constraints[0].b = [](const SPoint&, double y) { return -y; };
    p.constraints[0].b_y = [](const SPoint&, double) { return -1.0; };
    const double c = -constraint_value(p, free.u, 0) + 0.1;
    p.constraints[0].offset = c;
    const OptimizeOptions o;
    const ALResult r = augmented_lagrangian(p, p.bounds, BoundaryTrajectory(g), o);
    EXPECT_GT(r.report.multipliers[0], 0.0);
    EXPECT_LE(r.report.feasibility[0], o.al_feas_tol);
    EXPECT_LE(r.report.complementarity[0], o.al_feas_tol);
    EXPECT_LE(r.report.stationarity, 10 * o.grad_tol);
}

TEST(AugmentedLagrangian, ReportsNonConvergenceWithBestIterate)
{
    const Grid g = test_grid();
    ProblemSpec p = tracking(g);
    p.constraints.push_back(make_constraint("mean", ConstraintKind::equality, "y", "zero", -1.0));
    OptimizeOptions o;
    o.al_outer_iters = 1;
    try {
        augmented_lagrangian(p, std::nullopt, BoundaryTrajectory(g), o);
        FAIL() << "expected NonConvergence";
    } catch (const NonConvergence& e) {
        ASSERT_TRUE(e.report().has_value());
        EXPECT_EQ(e.report()->multipliers.size(), 1u);
        EXPECT_TRUE(e.best().all_finite());
    }
    p.constraints.clear();
    EXPECT_THROW(augmented_lagrangian(p, std::nullopt, BoundaryTrajectory(g)), std::invalid_argument);
}

TEST(SecondOrder, MatchesSecondFormAndVanishesForZeroDirection)
{
    const Grid g = test_grid();
    ProblemSpec p = tracking(g);
    p.phi = phi_cubic();
    Rng rng(6);
    const BoundaryTrajectory u = random_field(g, rng, -0.5, 0.5);
    const DerivativeReport d = objective_gradient(p, u);
    for (int k = 0; k < 3; ++k) {
        const BoundaryTrajectory v = random_direction(g, rng);
        const double a = check_second_order(p, u, v, d.adjoint);
        const double b = objective_second_form(p, u, v, v);
        EXPECT_NEAR(a, b, 1e-12 * std::max(1.0, std::abs(b)));
    }
    EXPECT_EQ(check_second_order(p, u, BoundaryTrajectory(g), d.adjoint), 0.0);
}

TEST(Regularity, NoActiveConstraintsIsVacuouslyRegular)
{
    const Grid g = test_grid();
    ProblemSpec p = tracking(g);
    const RegularityReport r = check_regularity(p, BoundaryTrajectory(g), 1e-3);
    EXPECT_TRUE(r.regular);
    EXPECT_EQ(r.gram.size(), 0);
}

TEST(Regularity, SingleActiveConstraintGramIsMaskedNorm)
{
    const Grid g = test_grid();
    ProblemSpec p = tracking(g);
    p.bounds = constant_bounds(g, -1.0, 0.2);
    p.constraints.push_back(make_constraint("mean", ConstraintKind::equality, "y", "zero", 0.0));
    Rng rng(9);
    const BoundaryTrajectory u = random_field(g, rng, -1.0, 0.2);
    const RegularityReport r = check_regularity(p, u, 0.05);
    ASSERT_EQ(r.gram.rows(), 1);
    EXPECT_TRUE(r.regular);
    BoundaryTrajectory masked = constraint_gradient(p, u, 0);
    std::size_t inside = 0;
    for (std::size_t k = 0; k < masked.values().size(); ++k) {
        const bool in = u.values()[k] >= -0.95 && u.values()[k] <= 0.15;
        EXPECT_EQ(r.mask[k], in ? 1 : 0);
        inside += in;
        if (!in) masked.values()[k] = 0.0;
    }
    EXPECT_GT(inside, 0u);
    EXPECT_NEAR(r.gram(0, 0), inner_Sigma(masked, masked), 1e-12 * r.gram(0, 0));
    EXPECT_GT(r.gram(0, 0), 0.0);
}

TEST(Regularity, DuplicatedConstraintsAreSingular)
{
    const Grid g = test_grid();
    ProblemSpec p = tracking(g);
    p.constraints.push_back(make_constraint("a", ConstraintKind::equality, "y", "zero", 0.0));
    p.constraints.push_back(make_constraint("b", ConstraintKind::equality, "y", "zero", 0.0));
    const RegularityReport r = check_regularity(p, BoundaryTrajectory(g), 1e-3);
    EXPECT_FALSE(r.regular);
    EXPECT_FALSE(r.diagnostic.empty());
}

TEST(Regularity, InactiveInequalityIsIgnored)
{
    const Grid g = test_grid();
    ProblemSpec p = tracking(g);
    p.constraints.push_back(make_constraint("slack", ConstraintKind::inequality, "y", "zero", -100.0));
    const RegularityReport r = check_regularity(p, BoundaryTrajectory(g), 1e-3);
    EXPECT_TRUE(r.active.empty());
    EXPECT_TRUE(r.regular);
}
