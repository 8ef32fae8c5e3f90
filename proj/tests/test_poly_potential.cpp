#include "lbea/poly.hpp"
#include "lbea/potential.hpp"

#include <gtest/gtest.h>

using namespace lbea;

TEST(Poly, ParseAndEvaluate)
{
    const Poly p = parse_poly("q^2*p + 3*p^3 - 2", 1);
    Eigen::VectorXd x(2);
    x << 1.5, -0.5;
    EXPECT_DOUBLE_EQ(p(x), 1.5 * 1.5 * -0.5 + 3 * -0.125 - 2);
    EXPECT_EQ(p.degree(), 3);
}

TEST(Poly, ProductAndDerivative)
{
    const Poly a = parse_poly("q + p", 1), b = parse_poly("q - p", 1);
    EXPECT_EQ(a * b, parse_poly("q^2 - p^2", 1));
    EXPECT_EQ((a * b).derivative(0), parse_poly("2*q", 1));
    EXPECT_EQ(a.pow(3).derivative(1), 3.0 * a.pow(2));
}

TEST(Poly, CancellationLeavesZero)
{
    const Poly a = parse_poly("q^3 + p", 1);
    EXPECT_TRUE((a - a).is_zero());
}

TEST(Poly, MonomialBasisCount)
{
    // C(n + D, D) monomials in n variables of degree <= D
    EXPECT_EQ(monomial_basis(2, 4).size(), 15u);
    EXPECT_EQ(monomial_basis(4, 2).size(), 15u);
}

TEST(Poly, CompiledMatchesInterpreted)
{
    const Poly p = parse_poly("q1^2*p2 - q2*p1^3 + 0.5", 2);
    const CompiledPoly c(p);
    Eigen::VectorXd x(4);
    x << 0.3, -1.2, 0.7, 2.0;
    EXPECT_NEAR(c.operator()<double>(x), p(x), 1e-14);
}

TEST(Potential, GradientAndHessianMatchFiniteDifferences)
{
    for (const char* name : {"quadratic", "quartic", "double-well"}) {
        const PotentialModel m = make_potential(name, 2);
        Eigen::VectorXd q(2);
        q << 0.7, -0.4;
        const double h = 1e-6;
        const Eigen::VectorXd g = m.gradient<double>(q);
        const Eigen::MatrixXd H = m.hessian<double>(q);
        for (int i = 0; i < 2; ++i) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(2);
            e[i] = h;
            EXPECT_NEAR(g[i], (m(q + e) - m(q - e)) / (2 * h), 1e-7) << name;
            const Eigen::VectorXd dg = (m.gradient<double>(q + e) - m.gradient<double>(q - e)) / (2 * h);
            for (int j = 0; j < 2; ++j) EXPECT_NEAR(H(j, i), dg[j], 1e-6) << name;
        }
    }
}

TEST(Potential, UnknownNameThrows)
{
    EXPECT_THROW(make_potential("sextic", 1), std::invalid_argument);
    EXPECT_THROW(make_potential("quadratic", 0), std::invalid_argument);
}

TEST(Potential, QuadraticIsQuadratic)
{
    EXPECT_TRUE(quadratic_potential(3).is_quadratic());
    EXPECT_FALSE(quartic_potential(1).is_quadratic());
}

TEST(Audit, ShippedPotentialsPass)
{
    for (const char* name : {"quadratic", "quartic"}) {
        const PotentialAudit a = audit_assumptions(make_potential(name, 1), Box::cube(1, 5.0), 41, 1.0, 0.5);
        EXPECT_TRUE(a.all_pass()) << name;
        EXPECT_GE(a.theta, 0.0);
    }
}

TEST(Audit, SemiconvexityOfDoubleWell)
{
    // V = q^4 - q^2 has V'' = 12 q^2 - 2, most negative at q = 0.
    const double theta = semiconvexity_constant(double_well_potential(1), Box::cube(1, 2.0), 41);
    EXPECT_NEAR(theta, 2.0, 1e-12);
}
