#include "lbea/generator.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace lbea;

namespace {

const double kSigma = std::sqrt(2.0);

}  // namespace

TEST(Generator, ActionOnLowDegree)
{
    const PotentialModel m = quadratic_potential(1);
    // L q = p, L p = -q - gamma p, L p^2 = 2p(-q - gamma p) + sigma^2
    EXPECT_EQ(apply_operator(OperatorKind::L, m, parse_poly("q", 1), 1.0, kSigma), parse_poly("p", 1));
    EXPECT_EQ(apply_operator(OperatorKind::L, m, parse_poly("p", 1), 1.0, kSigma), parse_poly("-q - p", 1));
    const Poly lp2 = apply_operator(OperatorKind::L, m, parse_poly("p^2", 1), 1.0, kSigma);
    EXPECT_TRUE((lp2 - parse_poly("-2*q*p - 2*p^2 + 2", 1)).pruned(1e-14).is_zero());
}

TEST(Generator, ProductRuleDefectVanishes)
{
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> c(-3, 3);
    const auto monos = monomial_basis(2, 4);
    for (const char* name : {"quadratic", "quartic", "double-well"}) {
        const PotentialModel m = make_potential(name, 1);
        for (int t = 0; t < 10; ++t) {
            Poly a(2), b(2);
            for (const auto& mono : monos) {
                a.add_term(mono, c(rng));
                b.add_term(mono, c(rng));
            }
            // Exact up to roundoff in sigma^2 = 2.
            EXPECT_LE(product_rule_defect(m, a, b, 1.0, kSigma).max_abs_coefficient(), 1e-12) << name;
        }
    }
}

TEST(Gibbs, GeneratorIsCentered)
{
    for (const char* name : {"quadratic", "quartic"}) {
        const PotentialModel m = make_potential(name, 1);
        GibbsMeasure measure(m, 1.0, kSigma);
        for (const auto& mono : monomial_basis(2, 6)) {
            const Poly lphi = apply_operator(OperatorKind::L, m, Poly::monomial(mono), 1.0, kSigma);
            EXPECT_NEAR(rho_average(measure, lphi), 0.0, 1e-10) << name;
        }
    }
}

TEST(Gibbs, GaussianMomentsForQuadratic)
{
    // beta = 2 gamma / sigma^2 = 1: q and p are standard normal.
    GibbsMeasure measure(quadratic_potential(1), 1.0, kSigma);
    EXPECT_NEAR(measure.position_moment({2}), 1.0, 1e-12);
    EXPECT_NEAR(measure.position_moment({4}), 3.0, 1e-12);
    EXPECT_NEAR(measure.momentum_moment({2}), 1.0, 1e-12);
    EXPECT_NEAR(measure.position_moment({3}), 0.0, 1e-12);
}

TEST(Gibbs, QuarticMomentAgainstDirectIntegral)
{
    // V = q^4 + q^2, beta = 1; composite Simpson on [-8, 8] as the oracle.
    GibbsMeasure measure(quartic_potential(1), 1.0, kSigma);
    const int n = 20000;
    const double a = -8.0, h = 16.0 / n;
    double z = 0.0, m2 = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double q = a + i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double f = std::exp(-(q * q * q * q + q * q));
        z += w * f;
        m2 += w * q * q * f;
    }
    EXPECT_NEAR(measure.position_moment({2}), m2 / z, 1e-9);
    EXPECT_NEAR(measure.position_partition(), z * h / 3, 1e-9);
}

TEST(OperatorMatrix, GramAdjointMatchesLStarForOU)
{
    const PotentialModel m = quadratic_potential(1);
    GibbsMeasure measure(m, 1.0, kSigma);
    const OperatorMatrix L = build_operator_matrix(OperatorKind::L, m, 1.0, kSigma, 4);
    const OperatorMatrix Ls = build_operator_matrix(OperatorKind::L_star, m, 1.0, kSigma, 4);
    ASSERT_TRUE(L.exact_on_basis);
    const Eigen::MatrixXd adj = rho_adjoint(L.matrix, gram_matrix(measure, L.basis));
    EXPECT_LE((adj - Ls.matrix).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(OperatorMatrix, QuarticTruncationIsReported)
{
    const OperatorMatrix L = build_operator_matrix(OperatorKind::L, quartic_potential(1), 1.0, kSigma, 3);
    EXPECT_FALSE(L.exact_on_basis);
    EXPECT_GT(L.truncation_mass, 0.0);
}

TEST(Semigroup, MeanOfPositionDecays)
{
    // E q_t for OU with gamma = 1 from (1, 0): e^{-t/2}(cos wt + sin(wt)/(2w)), w = sqrt(3)/2.
    const OperatorMatrix L = build_operator_matrix(OperatorKind::L, quadratic_potential(1), 1.0, kSigma, 2);
    const Eigen::VectorXd v = semigroup_apply(L, 1.0, L.basis.coefficients(parse_poly("q", 1)));
    Eigen::VectorXd x(2);
    x << 1.0, 0.0;
    const double w = std::sqrt(3.0) / 2;
    EXPECT_NEAR(L.basis.to_poly(v)(x), std::exp(-0.5) * (std::cos(w) + std::sin(w) / (2 * w)), 1e-12);
}

TEST(Poisson, RecoversKnownSolution)
{
    // L q = p and <q>_rho = 0, so q solves L mu = p.
    const PotentialModel m = quartic_potential(1);
    GibbsMeasure measure(m, 1.0, kSigma);
    const PoissonSolution s = solve_poisson(OperatorKind::L, m, 1.0, kSigma, parse_poly("p", 1), 4, measure);
    EXPECT_LE(s.residual, 1e-10);
    EXPECT_NEAR(s.mean, 0.0, 1e-12);
    EXPECT_TRUE((s.mu - parse_poly("q", 1)).pruned(1e-9).is_zero());
}

TEST(Poisson, IncompatibleRightHandSide)
{
    const PotentialModel m = quadratic_potential(1);
    GibbsMeasure measure(m, 1.0, kSigma);
    EXPECT_THROW(solve_poisson(OperatorKind::L, m, 1.0, kSigma, parse_poly("q^2", 1), 4, measure), IncompatibleRHS);
}

TEST(OperatorKind, ParseRoundTrip)
{
    for (OperatorKind k : {OperatorKind::L, OperatorKind::L_transpose, OperatorKind::L_star})
        EXPECT_EQ(parse_operator_kind(to_string(k)), k);
}
