#include "lbea/harness.hpp"
#include "lbea/integrators.hpp"

#include <gtest/gtest.h>

using namespace lbea;

namespace {

PhaseState<double> state1(double q, double p)
{
    return {Eigen::VectorXd::Constant(1, q), Eigen::VectorXd::Constant(1, p)};
}

}  // namespace

TEST(Scheme, ParseRoundTrip)
{
    for (Scheme s : {Scheme::split_step, Scheme::implicit_euler, Scheme::explicit_euler})
        EXPECT_EQ(parse_scheme(to_string(s)), s);
    EXPECT_EQ(parse_scheme("implicit_euler"), Scheme::implicit_euler);
    EXPECT_THROW(parse_scheme("leapfrog"), std::invalid_argument);
}

TEST(Step, ZeroNoiseSchemesCoincide)
{
    const PotentialModel m = quartic_potential(2);
    StepParams p;
    p.delta = 0.3;
    p.sigma = 0.0;
    PhaseState<double> s{Eigen::Vector2d(1.2, -0.3), Eigen::Vector2d(0.4, 2.0)};
    const auto a = step<double>(s, m, p, Eigen::VectorXd::Zero(2), SolverConfig{});
    p.scheme = Scheme::implicit_euler;
    const auto b = step<double>(s, m, p, Eigen::VectorXd::Zero(2), SolverConfig{});
    EXPECT_LE((a.q - b.q).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a.p - b.p).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Step, ImplicitPositionSolveSatisfiesEquation)
{
    const PotentialModel m = quartic_potential(1);
    const double gamma = 1.0;
    struct Case {
        SolverConfig::Method method;
        double q, delta;
    };
    // The fixed point map is a contraction only for small c delta V''.
    for (const Case& k : {Case{SolverConfig::Method::newton, 2.0, 0.5}, Case{SolverConfig::Method::fixed_point, 0.5, 0.1}}) {
        SolverConfig cfg;
        cfg.method = k.method;
        cfg.max_iter = 2000;
        const Eigen::VectorXd q = Eigen::VectorXd::Constant(1, k.q), p = Eigen::VectorXd::Constant(1, -1.0);
        const auto r = solve_implicit_position<double>(m, q, p, k.delta, gamma, cfg);
        ASSERT_EQ(r.status, SolveStatus::converged);
        const double c = k.delta / (1 + gamma * k.delta);
        EXPECT_NEAR(r.z[0], q[0] + c * (p[0] - k.delta * m.gradient<double>(r.z)[0]), 1e-10);
    }
}

TEST(Step, DivergentFixedPointIsNotReportedConverged)
{
    SolverConfig cfg;
    cfg.method = SolverConfig::Method::fixed_point;
    const auto r = solve_implicit_position<double>(quartic_potential(1), Eigen::VectorXd::Constant(1, 2.0),
                                                   Eigen::VectorXd::Constant(1, -1.0), 0.5, 1.0, cfg);
    EXPECT_EQ(r.status, SolveStatus::max_iter_exceeded);
}

TEST(Step, ExplicitEulerFormula)
{
    const PotentialModel m = quadratic_potential(1);
    StepParams p;
    p.scheme = Scheme::explicit_euler;
    p.delta = 0.1;
    const auto out = step<double>(state1(1.0, 2.0), m, p, Eigen::VectorXd::Constant(1, 0.5), SolverConfig{});
    EXPECT_NEAR(out.q[0], 1.0 + 0.1 * 2.0, 1e-15);
    EXPECT_NEAR(out.p[0], 2.0 - 0.1 * 1.0 - 0.1 * 2.0 + std::sqrt(0.1 * 2.0) * 0.5, 1e-15);
}

TEST(Step, MatchesOUAffineMap)
{
    const PotentialModel m = quadratic_potential(1);
    for (Scheme sc : {Scheme::split_step, Scheme::implicit_euler, Scheme::explicit_euler}) {
        StepParams p;
        p.scheme = sc;
        p.delta = 0.2;
        const OUReference ref = exact_ou_reference(p.gamma, p.sigma, sc, p.delta);
        const Eigen::Vector2d x(0.8, -1.3);
        const double eta = 0.37;
        const auto out = step<double>(state1(x[0], x[1]), m, p, Eigen::VectorXd::Constant(1, eta), SolverConfig{});
        const Eigen::Vector2d expected = ref.M * x + ref.b * eta;
        EXPECT_NEAR(out.q[0], expected[0], 1e-13) << to_string(sc);
        EXPECT_NEAR(out.p[0], expected[1], 1e-13) << to_string(sc);
    }
}

TEST(Step, NoiseDimensionMismatchThrows)
{
    StepParams p;
    EXPECT_THROW(step<double>(state1(0, 0), quadratic_potential(1), p, Eigen::VectorXd::Zero(2), SolverConfig{}),
                 std::invalid_argument);
}

TEST(Noise, CounterBasedAndReproducible)
{
    const NoiseSource a(7, 3), b(7, 3), c(7, 4);
    EXPECT_EQ(a.normal(100, 1), b.normal(100, 1));
    EXPECT_NE(a.normal(100, 1), c.normal(100, 1));
    EXPECT_NE(a.normal(100, 0), a.normal(101, 0));
}

TEST(Noise, StandardNormalMoments)
{
    const NoiseSource n(1, 0);
    double s1 = 0, s2 = 0;
    const int count = 200000;
    for (int k = 0; k < count; ++k) {
        const double x = n.normal(static_cast<std::uint64_t>(k), 0);
        s1 += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s1 / count, 0.0, 0.01);
    EXPECT_NEAR(s2 / count, 1.0, 0.01);
}

TEST(Simulate, LogsStrideIncludingEndpoints)
{
    const PotentialModel m = quadratic_potential(1);
    StepParams p;
    const auto obs = standard_observables({"q2", "H"}, m, p.gamma);
    const TrajectorySummary t = simulate(state1(1, 0), m, p, 25, NoiseSource(1, 0), obs, 10);
    EXPECT_EQ(t.steps, (std::vector<long>{0, 10, 20, 25}));
    ASSERT_EQ(t.series.size(), 2u);
    EXPECT_DOUBLE_EQ(t.series[0][0], 1.0);
    EXPECT_DOUBLE_EQ(t.series[1][0], 0.5);
}

TEST(Simulate, SameSeedSameTrajectory)
{
    const PotentialModel m = quartic_potential(1);
    StepParams p;
    p.delta = 0.1;
    const auto a = simulate(state1(1, 0), m, p, 500, NoiseSource(9, 2), {}, 500);
    const auto b = simulate(state1(1, 0), m, p, 500, NoiseSource(9, 2), {}, 500);
    EXPECT_EQ(a.final_state.q[0], b.final_state.q[0]);
    EXPECT_EQ(a.final_state.p[0], b.final_state.p[0]);
}

TEST(StabilityBounds, ConvexPotentialHasUnboundedSolvability)
{
    const StabilityBounds b = delta_max(1.0, 0.0, 0.5);
    EXPECT_TRUE(std::isinf(b.solvability));
    EXPECT_GT(b.moment, 0.0);
    EXPECT_TRUE(std::isfinite(delta_max(1.0, 2.0, 0.5).solvability));
}

TEST(StepParams, ValidateRejectsNonPositiveDelta)
{
    StepParams p;
    p.delta = 0.0;
    EXPECT_THROW(p.validate(), std::invalid_argument);
}
