#include "lbea/expansion.hpp"

#include <gtest/gtest.h>

using namespace lbea;

namespace {

const double kSigma = std::sqrt(2.0);

PhaseState<double> state1(double q, double p)
{
    return {Eigen::VectorXd::Constant(1, q), Eigen::VectorXd::Constant(1, p)};
}

}  // namespace

TEST(Bernoulli, FirstValues)
{
    const auto b = bernoulli_numbers(6);
    ASSERT_EQ(b.size(), 7u);
    EXPECT_DOUBLE_EQ(b[0], 1.0);
    EXPECT_DOUBLE_EQ(b[1], -0.5);
    EXPECT_NEAR(b[2], 1.0 / 6, 1e-15);
    EXPECT_NEAR(b[3], 0.0, 1e-15);
    EXPECT_NEAR(b[4], -1.0 / 30, 1e-15);
    EXPECT_NEAR(b[6], 1.0 / 42, 1e-15);
}

TEST(DriftCoefficients, OUHasClosedForm)
{
    // V = q^2/2: z = q + c (p - delta z), c = delta/(1+gamma delta). First terms:
    // d_1 = p, d_2 = -q - gamma p.
    const DriftExpansion d = drift_coefficients(quadratic_potential(1), 1.0, 3);
    EXPECT_TRUE((d[1][0] - parse_poly("p", 1)).pruned(1e-14).is_zero());
    EXPECT_TRUE((d[2][0] - parse_poly("-q - p", 1)).pruned(1e-14).is_zero());
}

TEST(DriftCoefficients, MatchTaylorFitOfSolvedMap)
{
    const PotentialModel m = quartic_potential(1);
    const DriftExpansion d = drift_coefficients(m, 1.0, 4);
    const auto s = state1(0.6, -0.8);
    const auto taylor = fixed_point_taylor(m, 1.0, s, 4, chebyshev_ladder(0.05, 16));
    for (int k = 1; k <= 4; ++k) {
        const double a = d.evaluate(k, s)[0];
        EXPECT_NEAR(a, taylor[static_cast<std::size_t>(k - 1)][0], 1e-7 * std::max(1.0, std::abs(a))) << k;
    }
}

TEST(Ladders, ChebyshevIsSymmetric)
{
    const auto x = chebyshev_ladder(0.1, 8);
    ASSERT_EQ(x.size(), 8u);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_NEAR(x[i], -x[x.size() - 1 - i], 1e-15);
        EXPECT_LE(std::abs(x[i]), 0.1);
    }
}

TEST(WeakCoefficients, LeadingTermsAreIdentityAndGenerator)
{
    const Poly phi = parse_poly("q^4 + p^3", 1);
    for (Scheme sc : {Scheme::split_step, Scheme::implicit_euler}) {
        const PotentialModel m = quartic_potential(1);
        const auto s = state1(0.4, -0.7);
        Eigen::VectorXd x(2);
        x << 0.4, -0.7;
        const auto wc = one_step_weak_coefficients(sc, m, 1.0, kSigma, phi, 2, s);
        const Poly lphi = apply_operator(OperatorKind::L, m, phi, 1.0, kSigma);
        EXPECT_NEAR(wc.c[0], phi(x), 1e-8) << to_string(sc);
        EXPECT_NEAR(wc.c[1], lphi(x), 1e-8 * std::max(1.0, std::abs(lphi(x)))) << to_string(sc);
    }
}

TEST(WeakCoefficients, ImplicitEulerHasNoHalfPowers)
{
    ExtractionOptions eo;
    eo.check_half_powers = true;
    const auto wc = one_step_weak_coefficients(Scheme::implicit_euler, quartic_potential(1), 1.0, kSigma,
                                               parse_poly("q^2*p + p^3", 1), 2, state1(0.3, 0.9), eo);
    ASSERT_TRUE(wc.half_powers.has_value());
    EXPECT_LE(wc.half_power_relative, 1e-8);
}

TEST(An, SplitStepGeneratorsStartWithPhiAndLphi)
{
    const PotentialModel m = quartic_potential(1);
    const Poly phi = parse_poly("q^2 + q*p", 1);
    const auto a = split_step_weak_generators(m, 1.0, kSigma, phi, 2);
    EXPECT_EQ(a[0], phi);
    EXPECT_TRUE((a[1] - apply_operator(OperatorKind::L, m, phi, 1.0, kSigma)).pruned(1e-12).is_zero());
}

TEST(An, AnalyticMatchesExtracted)
{
    const PotentialModel m = quadratic_potential(1);
    for (int n : {1, 2}) {
        const AnMatrix a = assemble_An(Scheme::split_step, m, 1.0, kSigma, n, 4, AnSource::analytic);
        const AnMatrix e = assemble_An(Scheme::split_step, m, 1.0, kSigma, n, 4, AnSource::extracted);
        EXPECT_LE((a.matrix - e.matrix).cwiseAbs().maxCoeff(), 1e-6) << n;
    }
}

TEST(ModifiedOperators, RoundTripAndConstantAnnihilation)
{
    for (Scheme sc : {Scheme::split_step, Scheme::implicit_euler}) {
        const AnSource src = sc == Scheme::split_step ? AnSource::analytic : AnSource::extracted;
        const OperatorSeries s = build_operator_series(sc, quadratic_potential(1), 1.0, kSigma, 2, 4, src);
        EXPECT_LE(s.round_trip_error, 1e-10);
        // A_3 from the ladder fit carries ~1e-11 of noise; the analytic path is exact.
        EXPECT_LE(s.constant_annihilation, src == AnSource::analytic ? 1e-12 : 1e-9);
        const OperatorMatrix L = build_operator_matrix(OperatorKind::L, quadratic_potential(1), 1.0, kSigma, 4);
        EXPECT_LE((s.L[0] - L.matrix).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(ModifiedOperators, RoundTripFailureIsRaised)
{
    const OperatorSeries s =
        build_operator_series(Scheme::split_step, quadratic_potential(1), 1.0, kSigma, 1, 4, AnSource::analytic);
    std::vector<Eigen::MatrixXd> a = s.A;
    // A_0 never enters the recursion, so a corrupted A_0 can only surface in the round trip.
    a[0](0, 0) += 1e-3;
    EXPECT_THROW(modified_operators(Scheme::split_step, s.basis, a, 1), RoundTripFailure);
    EXPECT_NO_THROW(modified_operators(Scheme::split_step, s.basis, s.A, 1));
}

TEST(ModifiedFlow, DuhamelAgreesWithCoupledExponential)
{
    const OperatorSeries ops =
        build_operator_series(Scheme::split_step, quadratic_potential(1), 1.0, kSigma, 2, 4, AnSource::analytic);
    const Poly phi = parse_poly("q^2 + q*p", 1);
    const ModifiedFlow d = modified_flow(ops, phi, 2, {0.5, 1.0, 2.0}, 20, FlowMethod::duhamel);
    const ModifiedFlow c = modified_flow(ops, phi, 2, {0.5, 1.0, 2.0}, 20, FlowMethod::coupled);
    for (int n = 0; n <= 2; ++n)
        for (std::size_t i = 0; i < 3; ++i)
            EXPECT_LE((d.v[n][i] - c.v[n][i]).cwiseAbs().maxCoeff(), 1e-10) << n << ' ' << i;
}

// The one-step error of the order-N modified flow is O(delta^{N+2}) for OU:
// err / delta^{N+2} stays within a factor 2 over the ladder, while
// err / delta^{N+1} shrinks by about 2 per halving.
TEST(ModifiedFlow, OneStepErrorScalesAsDeltaToNPlusTwo)
{
    const PotentialModel m = quadratic_potential(1);
    const Poly phi = parse_poly("q^2", 1);
    const auto rule = gauss_hermite<double>(10);
    for (int N : {0, 1}) {
        const OperatorSeries ops = build_operator_series(Scheme::split_step, m, 1.0, kSigma, N, 4, AnSource::analytic);
        std::vector<double> ratio;
        for (double delta : {1.0 / 8, 1.0 / 16, 1.0 / 32}) {
            const ModifiedFlow f = modified_flow(ops, phi, N, {delta});
            const Poly v = ops.basis.to_poly(f.assembled(0, delta));
            double worst = 0.0;
            for (double q : {-1.0, 0.0, 0.5, 1.0})
                for (double p : {-1.0, 0.0, 0.7}) {
                    StepParams sp;
                    sp.delta = delta;
                    Eigen::VectorXd z(2);
                    z << q, p;
                    const double e =
                        one_step_expectations<double>(m, sp, state1(q, p), {CompiledPoly(phi)}, rule, {})[0];
                    worst = std::max(worst, std::abs(e - v(z)));
                }
            EXPECT_LE(worst, std::pow(delta, N + 1)) << "N=" << N;
            ratio.push_back(worst / std::pow(delta, N + 2));
        }
        const double spread = *std::max_element(ratio.begin(), ratio.end()) /
                              *std::min_element(ratio.begin(), ratio.end());
        EXPECT_LT(spread, 2.0) << "N=" << N;
    }
}

TEST(MeasureExpansion, FirstCorrectionForOUSplitStep)
{
    // The exact split-step stationary variance of q falls like 1 - delta, so <q^2 mu_1>_rho = -1.
    const PotentialModel m = quadratic_potential(1);
    const OperatorSeries ops = build_operator_series(Scheme::split_step, m, 1.0, kSigma, 1, 4, AnSource::analytic);
    GibbsMeasure measure(m, 1.0, kSigma);
    const MeasureExpansion me = measure_expansion(ops, measure, 1);
    EXPECT_LE(me.poisson_residual[1], 1e-10);
    EXPECT_NEAR(me.mean[1], 0.0, 1e-12);
    EXPECT_NEAR(rho_average(measure, parse_poly("q^2", 1) * me.mu[1]), -1.0, 1e-8);
}

TEST(MeasureExpansion, AssembledStartsAtOne)
{
    const PotentialModel m = quadratic_potential(1);
    const OperatorSeries ops = build_operator_series(Scheme::split_step, m, 1.0, kSigma, 1, 4, AnSource::analytic);
    GibbsMeasure measure(m, 1.0, kSigma);
    const MeasureExpansion me = measure_expansion(ops, measure, 1);
    EXPECT_EQ(me.assembled(0.0), Poly::constant(2, 1.0));
    EXPECT_NEAR(me.average(measure, Poly::constant(2, 1.0), 0.1), 1.0, 1e-12);
}
