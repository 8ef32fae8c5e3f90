#include "lbea/generator.hpp"
#include "lbea/lyapunov.hpp"

#include <gtest/gtest.h>

using namespace lbea;

namespace {

const double kSigma = std::sqrt(2.0);

PhaseState<double> state1(double q, double p)
{
    return {Eigen::VectorXd::Constant(1, q), Eigen::VectorXd::Constant(1, p)};
}

}  // namespace

TEST(Lyapunov, GeneratorOfGammaMatchesPolynomialGenerator)
{
    // For polynomial V, Gamma is a polynomial, so L Gamma can be formed symbolically.
    for (const char* name : {"quadratic", "quartic"}) {
        const PotentialModel m = make_potential(name, 1);
        const double g = 1.3;
        const Poly gamma_poly = parse_poly("0.5*p^2", 1) + m.poly_form().extended(2) +
                                parse_poly("q*p", 1) * (g / 2) + parse_poly("q^2", 1) * (g * g / 4) +
                                Poly::constant(2, 1.0);
        const Poly lg = apply_operator(OperatorKind::L, m, gamma_poly, g, kSigma);
        for (double q : {-1.5, 0.0, 0.8})
            for (double p : {-0.4, 1.1}) {
                const auto s = state1(q, p);
                Eigen::VectorXd z(2);
                z << q, p;
                EXPECT_NEAR(lyapunov_gamma(s, m, g), gamma_poly(z), 1e-12);
                EXPECT_NEAR(generator_of_gamma(s, m, g, kSigma), lg(z), 1e-10);
            }
    }
}

TEST(Lyapunov, GammaDominatesLowerBound)
{
    // The bound needs V >= 0: the double-well is shifted by its depth 1/4.
    for (const PotentialModel& m : {quadratic_potential(1), quartic_potential(1), double_well_potential(1, 0.25)})
        for (double q : {-3.0, -0.7, 0.0, 0.7, 2.0})
            for (double p : {-2.0, 0.0, 0.5}) {
                const auto s = state1(q, p);
                EXPECT_GE(lyapunov_gamma(s, m, 1.0), lyapunov_lower_bound(s, 1.0)) << m.name();
            }
}

TEST(Lyapunov, UnshiftedDoubleWellBreaksLowerBound)
{
    const auto s = state1(std::sqrt(0.5), -0.35);
    EXPECT_LT(lyapunov_gamma(s, double_well_potential(1), 1.0), lyapunov_lower_bound(s, 1.0));
}

TEST(Lyapunov, DriftInequalityHoldsForShippedPotentials)
{
    for (const char* name : {"quadratic", "quartic"}) {
        const PotentialModel m = make_potential(name, 1);
        const PotentialAudit audit = audit_assumptions(m, Box::cube(1, 5.0), 41, 1.0, 0.5);
        for (int ell : {1, 2, 3}) {
            const LyapunovReport r = check_drift_inequality(m, 1.0, kSigma, audit, ell, PhaseBox::cube(1, 5.0), 41);
            EXPECT_TRUE(r.pass) << name << " ell " << ell;
            EXPECT_GT(r.a_ell, 0.0);
            EXPECT_LE(r.worst_violation, 0.0);
            if (ell >= 2) EXPECT_LT(r.boundary_max, r.d_ell);
        }
    }
}

TEST(MomentSweep, StableAtHalfTheBound)
{
    const PotentialModel m = quartic_potential(1);
    StepParams p;
    p.delta = 0.5;
    MomentSweepOptions opt;
    opt.stride = 100;
    const MomentSweep s = moment_sweep(m, p, state1(0, 0), 1, 2000, 16, 4, opt);
    EXPECT_FALSE(s.diverged);
    EXPECT_TRUE(std::isfinite(s.running_sup.back()));
    EXPECT_EQ(s.steps.front(), 0);
    EXPECT_EQ(s.steps.back(), 2000);
    for (std::size_t i = 1; i < s.running_sup.size(); ++i) EXPECT_GE(s.running_sup[i], s.running_sup[i - 1]);
}

TEST(MomentSweep, ExplicitEulerDivergesOnQuartic)
{
    const PotentialModel m = quartic_potential(1);
    StepParams p;
    p.delta = 0.5;
    p.scheme = Scheme::explicit_euler;
    const MomentSweep s = moment_sweep(m, p, state1(0, 0), 1, 5000, 16, 1);
    EXPECT_TRUE(s.diverged);
    EXPECT_GT(s.divergence_step, 0);
}

TEST(MomentSweep, ThreadCountDoesNotChangeResult)
{
    const PotentialModel m = quartic_potential(1);
    StepParams p;
    p.delta = 0.2;
    MomentSweepOptions one, four;
    four.threads = 4;
    const MomentSweep a = moment_sweep(m, p, state1(0.5, 0), 2, 300, 8, 11, one);
    const MomentSweep b = moment_sweep(m, p, state1(0.5, 0), 2, 300, 8, 11, four);
    EXPECT_EQ(a.mean, b.mean);
}

TEST(WeightedNorm, ConstantHasZeroSeminorm)
{
    const PotentialModel m = quadratic_potential(1);
    const WeightedNorm w = weighted_norm(Poly::constant(2, 3.0), 1, 2, PhaseBox::cube(1, 3.0), 11, m, 1.0);
    EXPECT_EQ(w.seminorm, 0.0);
    EXPECT_GT(w.norm, 0.0);
}
